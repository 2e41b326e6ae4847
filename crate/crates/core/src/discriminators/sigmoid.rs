use rand::Rng;

use crate::data::{Dataset, GroupView, WeightVector};
use crate::error::{Error, Result};

use super::BalanceProblem;

/// Logistic function, evaluated without overflow for large `|u|`.
#[inline]
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `S` sigmoid discriminators `x -> sigmoid(rho_s . x + mu_s)`.
///
/// Parameters live in one flat buffer laid out as `[rho (S x d, row-major) | mu (S)]`
/// so an optimizer can step them in place.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidEnsemble {
    d: usize,
    members: usize,
    params: Vec<f64>,
}

impl SigmoidEnsemble {
    pub fn new(rho: Vec<f64>, mu: Vec<f64>, d: usize) -> Result<Self> {
        let members = mu.len();
        if members == 0 || d == 0 {
            return Err(Error::InvalidConfig("sigmoid ensemble needs S >= 1 and d >= 1".into()));
        }
        if rho.len() != members * d {
            return Err(Error::DimensionMismatch {
                what: "sigmoid slopes",
                expected: members * d,
                got: rho.len(),
            });
        }
        if rho.iter().chain(&mu).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite sigmoid parameter".into()));
        }
        let mut params = rho;
        params.extend(mu);
        Ok(SigmoidEnsemble { d, members, params })
    }

    /// Entries drawn from `U(-scale, scale)`.
    pub fn random<R: Rng + ?Sized>(members: usize, d: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let rho = (0..members * d).map(|_| rng.random_range(-scale..scale)).collect();
        let mu = (0..members).map(|_| rng.random_range(-scale..scale)).collect();
        Self::new(rho, mu, d)
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn rho(&self, s: usize) -> &[f64] {
        &self.params[s * self.d..(s + 1) * self.d]
    }

    pub fn mu(&self, s: usize) -> f64 {
        self.params[self.members * self.d + s]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Raw pre-activations of every member at `x`, written into `out`.
    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let (rho, mu) = self.params.split_at(self.members * self.d);
        for ((o, r), m) in out.iter_mut().zip(rho.chunks_exact(self.d)).zip(mu) {
            *o = super::dot(r, x) + m;
        }
    }

    /// Member outputs at every target and source unit for the current
    /// parameters.
    pub fn activations(&self, problem: &BalanceProblem) -> Activations {
        let s_count = self.members;
        let fill = |rows: usize, row: fn(&BalanceProblem, usize) -> &[f64]| {
            let mut out = vec![0.0; rows * s_count];
            for (i, chunk) in out.chunks_exact_mut(s_count).enumerate() {
                self.logits_into(row(problem, i), chunk);
                chunk.iter_mut().for_each(|z| *z = sigmoid(*z));
            }
            out
        };
        Activations {
            params: self.params.clone(),
            target: fill(problem.k(), BalanceProblem::target_row),
            source: fill(problem.m(), BalanceProblem::source_row),
        }
    }

    /// Evaluates gaps, per-member losses and the gradient of their sum.
    pub fn evaluate(&self, problem: &BalanceProblem, w: &[f64]) -> Result<SigmoidGrads> {
        self.check(problem, w)?;
        self.evaluate_with(&self.activations(problem), problem, w)
    }

    fn check(&self, problem: &BalanceProblem, w: &[f64]) -> Result<()> {
        if w.len() != problem.m() {
            return Err(Error::DimensionMismatch {
                what: "sigmoid source weights",
                expected: problem.m(),
                got: w.len(),
            });
        }
        if problem.d() != self.d {
            return Err(Error::DimensionMismatch {
                what: "sigmoid input dimension",
                expected: self.d,
                got: problem.d(),
            });
        }
        Ok(())
    }

    /// Same as [`SigmoidEnsemble::evaluate`] with precomputed activations.
    pub fn evaluate_with(&self, act: &Activations, problem: &BalanceProblem, w: &[f64]) -> Result<SigmoidGrads> {
        self.check(problem, w)?;
        if !act.matches(self) {
            return Err(Error::InvalidConfig("stale sigmoid activations".into()));
        }
        let (s_count, d) = (self.members, self.d);
        // gap_s = sum_p c_p sigmoid(z_sp) with c = v on target, -w on source
        let mut gaps = vec![0.0; s_count];
        // slope gradient kept as d x S so the member loop is contiguous
        let mut d_rho_t = vec![0.0; d * s_count];
        let mut d_mu = vec![0.0; s_count];
        let mut ds = vec![0.0; s_count];
        let mut accumulate = |x: &[f64], c: f64, sg: &[f64]| {
            for (((g, m), dv), &v) in gaps.iter_mut().zip(&mut d_mu).zip(&mut ds).zip(sg) {
                *g += c * v;
                *dv = c * v * (1.0 - v);
                *m += *dv;
            }
            for (col, &xj) in d_rho_t.chunks_exact_mut(s_count).zip(x) {
                for (g, dv) in col.iter_mut().zip(&ds) {
                    *g += dv * xj;
                }
            }
        };
        for (j, &v) in problem.target_weights().iter().enumerate() {
            accumulate(problem.target_row(j), v, &act.target[j * s_count..(j + 1) * s_count]);
        }
        for (i, &wi) in w.iter().enumerate() {
            if wi != 0.0 {
                accumulate(problem.source_row(i), -wi, &act.source[i * s_count..(i + 1) * s_count]);
            }
        }
        let mut d_rho = vec![0.0; s_count * d];
        for s in 0..s_count {
            let scale = 2.0 * gaps[s];
            for j in 0..d {
                d_rho[s * d + j] = scale * d_rho_t[j * s_count + s];
            }
            d_mu[s] *= scale;
        }
        let per_member_loss = gaps.iter().map(|g| g * g).collect();
        Ok(SigmoidGrads {
            grad_rho: d_rho,
            grad_mu: d_mu,
            per_member_loss,
            gaps,
        })
    }

    /// Index of the member with the largest loss; the first wins on ties.
    pub fn argmax_member(losses: &[f64]) -> usize {
        let mut best = 0;
        for (s, &l) in losses.iter().enumerate() {
            if l > losses[best] {
                best = s;
            }
        }
        best
    }

    /// Gradient of member `s`'s loss with respect to the source weights,
    /// given that member's gap.
    pub fn member_grad_w(&self, act: &Activations, s: usize, gap: f64) -> Vec<f64> {
        act.source
            .chunks_exact(self.members)
            .map(|row| -2.0 * gap * row[s])
            .collect()
    }
}

/// Cached member outputs, `rows x S` row-major, tied to the parameters they
/// were computed with.
#[derive(Debug, Clone)]
pub struct Activations {
    params: Vec<f64>,
    target: Vec<f64>,
    source: Vec<f64>,
}

impl Activations {
    /// Whether these outputs belong to the ensemble's current parameters.
    pub fn matches(&self, ensemble: &SigmoidEnsemble) -> bool {
        self.params == ensemble.params
    }
}

#[derive(Debug, Clone)]
pub struct SigmoidGrads {
    /// `S x d`, gradient of `sum_s loss_s` with respect to the slopes.
    pub grad_rho: Vec<f64>,
    pub grad_mu: Vec<f64>,
    pub per_member_loss: Vec<f64>,
    /// Signed gap of each member (target mean minus weighted source mean).
    pub gaps: Vec<f64>,
}

impl SigmoidGrads {
    /// Gradient in the ensemble's flat parameter layout.
    pub fn flat(&self) -> Vec<f64> {
        let mut g = self.grad_rho.clone();
        g.extend_from_slice(&self.grad_mu);
        g
    }
}

pub fn sigmoid_forward(ensemble: &SigmoidEnsemble, x_row: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; ensemble.members()];
    ensemble.logits_into(x_row, &mut z);
    z.into_iter().map(sigmoid).collect()
}

/// ATT-layout gradients of the ensemble loss.
pub fn sigmoid_grads(
    ensemble: &SigmoidEnsemble,
    ds: &Dataset,
    w: &WeightVector,
    gv: &GroupView,
) -> Result<SigmoidGrads> {
    if w.len() != ds.n() {
        return Err(Error::DimensionMismatch {
            what: "weight vector",
            expected: ds.n(),
            got: w.len(),
        });
    }
    let problem = BalanceProblem::att(ds, gv);
    ensemble.evaluate(&problem, &w.group_weights(gv))
}
