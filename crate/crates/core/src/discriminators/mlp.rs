use rand::Rng;

use crate::data::{Dataset, GroupView, WeightVector};
use crate::error::{Error, Result};

use super::BalanceProblem;

/// One-hidden-layer leaky-relu network `x -> w2 . leaky(W1 x + b1) + b2`,
/// used as a critic for the Wasserstein-1 distance.
///
/// Flat parameter layout: `[W1 (H x d, row-major) | b1 (H) | w2 (H) | b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzMlp {
    d: usize,
    hidden: usize,
    leaky_slope: f64,
    clip_bound: f64,
    params: Vec<f64>,
}

impl LipschitzMlp {
    pub fn zeros(d: usize, hidden: usize, leaky_slope: f64, clip_bound: f64) -> Result<Self> {
        if d == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("MLP needs d >= 1 and H >= 1".into()));
        }
        if !(clip_bound > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "clip bound must be positive, got {clip_bound}"
            )));
        }
        Ok(LipschitzMlp {
            d,
            hidden,
            leaky_slope,
            clip_bound,
            params: vec![0.0; hidden * d + 2 * hidden + 1],
        })
    }

    pub fn from_params(d: usize, hidden: usize, leaky_slope: f64, clip_bound: f64, params: Vec<f64>) -> Result<Self> {
        let mut mlp = Self::zeros(d, hidden, leaky_slope, clip_bound)?;
        if params.len() != mlp.params.len() {
            return Err(Error::DimensionMismatch {
                what: "MLP parameters",
                expected: mlp.params.len(),
                got: params.len(),
            });
        }
        mlp.params = params;
        Ok(mlp)
    }

    /// Every entry drawn from `U(-scale, scale)`.
    pub fn random<R: Rng + ?Sized>(
        d: usize,
        hidden: usize,
        leaky_slope: f64,
        clip_bound: f64,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut mlp = Self::zeros(d, hidden, leaky_slope, clip_bound)?;
        mlp.params.iter_mut().for_each(|p| *p = rng.random_range(-scale..scale));
        Ok(mlp)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn w1(&self) -> &[f64] {
        &self.params[..self.hidden * self.d]
    }

    fn b1(&self) -> &[f64] {
        let o = self.hidden * self.d;
        &self.params[o..o + self.hidden]
    }

    fn w2(&self) -> &[f64] {
        let o = self.hidden * self.d + self.hidden;
        &self.params[o..o + self.hidden]
    }

    fn b2(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    #[inline]
    fn act(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.leaky_slope * z
        }
    }

    #[inline]
    fn act_slope(&self, z: f64) -> f64 {
        if z > 0.0 {
            1.0
        } else {
            self.leaky_slope
        }
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let (w1, b1, w2) = (self.w1(), self.b1(), self.w2());
        let mut out = self.b2();
        for h in 0..self.hidden {
            let z = super::dot(&w1[h * self.d..(h + 1) * self.d], x) + b1[h];
            out += w2[h] * self.act(z);
        }
        out
    }

    /// Gradient of the output with respect to the input.
    pub fn input_grad(&self, x: &[f64]) -> Vec<f64> {
        let (w1, b1, w2) = (self.w1(), self.b1(), self.w2());
        let mut g = vec![0.0; self.d];
        for h in 0..self.hidden {
            let row = &w1[h * self.d..(h + 1) * self.d];
            let coef = w2[h] * self.act_slope(super::dot(row, x) + b1[h]);
            for (gj, wj) in g.iter_mut().zip(row) {
                *gj += coef * wj;
            }
        }
        g
    }

    /// Adds `c * d output / d params` at `x` into `grad`.
    fn accumulate_param_grad(&self, x: &[f64], c: f64, grad: &mut [f64]) {
        let (hd, hid) = (self.hidden * self.d, self.hidden);
        let (w1, b1, w2) = (self.w1(), self.b1(), self.w2());
        for h in 0..hid {
            let row = &w1[h * self.d..(h + 1) * self.d];
            let z = super::dot(row, x) + b1[h];
            let back = c * w2[h] * self.act_slope(z);
            for (g, xi) in grad[h * self.d..(h + 1) * self.d].iter_mut().zip(x) {
                *g += back * xi;
            }
            grad[hd + h] += back;
            grad[hd + hid + h] += c * self.act(z);
        }
        grad[hd + 2 * hid] += c;
    }

    pub fn clip(&mut self) {
        let b = self.clip_bound;
        self.params.iter_mut().for_each(|p| *p = p.clamp(-b, b));
    }
}

pub fn mlp_forward(mlp: &LipschitzMlp, x_row: &[f64]) -> f64 {
    mlp.forward(x_row)
}

pub fn clip_mlp(mlp: &LipschitzMlp) -> LipschitzMlp {
    let mut out = mlp.clone();
    out.clip();
    out
}

#[derive(Debug, Clone, Copy)]
pub struct PenaltyConfig {
    pub tau: f64,
    /// Number of interpolates per ascent step.
    pub samples: usize,
}

/// Value and parameter gradient of the penalized critic objective.
#[derive(Debug, Clone)]
pub struct MlpObjective {
    /// `loss - penalty`.
    pub value: f64,
    pub loss: f64,
    pub penalty: f64,
    pub gap: f64,
    pub grad: Vec<f64>,
}

/// Points drawn uniformly on segments between a random source unit and a
/// random target point, `R x d` row-major.
pub fn sample_interpolates<R: Rng + ?Sized>(problem: &BalanceProblem, count: usize, rng: &mut R) -> Vec<f64> {
    let d = problem.d();
    let mut out = Vec::with_capacity(count * d);
    for _ in 0..count {
        let src = problem.source_row(rng.random_range(0..problem.m()));
        let tgt = problem.target_row(problem.sample_target(rng));
        let u: f64 = rng.random();
        out.extend(src.iter().zip(tgt).map(|(a, b)| u * a + (1.0 - u) * b));
    }
    out
}

/// Squared gap minus the gradient penalty `tau/R sum_r (|grad_x m(x_r)| - 1)^2`,
/// with its gradient in the MLP's flat parameter layout. Interpolates are
/// given explicitly so the result is a deterministic function of the
/// parameters.
pub fn mlp_objective(
    mlp: &LipschitzMlp,
    problem: &BalanceProblem,
    w: &[f64],
    interpolates: &[f64],
    tau: f64,
) -> Result<MlpObjective> {
    let d = mlp.d;
    if w.len() != problem.m() {
        return Err(Error::DimensionMismatch {
            what: "MLP source weights",
            expected: problem.m(),
            got: w.len(),
        });
    }
    if problem.d() != d || interpolates.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            what: "MLP input dimension",
            expected: d,
            got: problem.d(),
        });
    }

    let mut gap = 0.0;
    let mut dgap = vec![0.0; mlp.params.len()];
    for (j, &v) in problem.target_weights().iter().enumerate() {
        let x = problem.target_row(j);
        gap += v * mlp.forward(x);
        mlp.accumulate_param_grad(x, v, &mut dgap);
    }
    for (i, &wi) in w.iter().enumerate() {
        if wi != 0.0 {
            let x = problem.source_row(i);
            gap -= wi * mlp.forward(x);
            mlp.accumulate_param_grad(x, -wi, &mut dgap);
        }
    }
    let loss = gap * gap;
    let mut grad: Vec<f64> = dgap.iter().map(|g| 2.0 * gap * g).collect();

    let r_count = interpolates.len() / d;
    let mut penalty = 0.0;
    if tau != 0.0 && r_count > 0 {
        let (hd, hid) = (mlp.hidden * d, mlp.hidden);
        let scale = tau / r_count as f64;
        let mut slopes = vec![0.0; hid];
        for x in interpolates.chunks_exact(d) {
            let (w1, b1, w2) = (mlp.w1(), mlp.b1(), mlp.w2());
            let mut g = vec![0.0; d];
            for h in 0..hid {
                let row = &w1[h * d..(h + 1) * d];
                slopes[h] = mlp.act_slope(super::dot(row, x) + b1[h]);
                let coef = w2[h] * slopes[h];
                for (gj, wj) in g.iter_mut().zip(row) {
                    *gj += coef * wj;
                }
            }
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            penalty += scale * (norm - 1.0).powi(2);
            if norm == 0.0 {
                continue;
            }
            // d/dg (|g| - 1)^2 = q g; the activation slopes are locally constant
            let q = 2.0 * (norm - 1.0) / norm;
            for h in 0..hid {
                let row = &w1[h * d..(h + 1) * d];
                let sw = slopes[h] * w2[h];
                for (k, gk) in g.iter().enumerate() {
                    grad[h * d + k] -= scale * q * sw * gk;
                }
                grad[hd + hid + h] -= scale * q * slopes[h] * super::dot(row, &g);
            }
        }
    }

    Ok(MlpObjective {
        value: loss - penalty,
        loss,
        penalty,
        gap,
        grad,
    })
}

/// ATT-layout critic objective with freshly sampled interpolates.
pub fn mlp_grads<R: Rng + ?Sized>(
    mlp: &LipschitzMlp,
    ds: &Dataset,
    w: &WeightVector,
    gv: &GroupView,
    penalty: PenaltyConfig,
    rng: &mut R,
) -> Result<MlpObjective> {
    if penalty.samples == 0 {
        return Err(Error::InvalidConfig(
            "gradient penalty needs at least one sample".into(),
        ));
    }
    let problem = BalanceProblem::att(ds, gv);
    let xs = sample_interpolates(&problem, penalty.samples, rng);
    mlp_objective(mlp, &problem, &w.group_weights(gv), &xs, penalty.tau)
}
