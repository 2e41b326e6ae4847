//! Entropy balancing through its exponential-family dual.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Side, WeightVector};
use crate::discriminators::BalanceProblem;
use crate::error::{Error, Result};

use super::newton::{minimize, Local, Outcome, Standardizer};
use super::{moment_imbalance, BalanceSolution, Method};

const TOL: f64 = 1e-10;
const MAX_ITER: usize = 200;
/// Dual iterates this large (on standardized features) mean the target sits
/// on or outside the boundary of the source hull.
const DIVERGED: f64 = 50.0;

#[derive(Debug, Clone)]
pub struct EntropyFit {
    pub weights: Vec<f64>,
    /// Dual vector on the raw features.
    pub lambda: Vec<f64>,
    pub iterations: usize,
    /// Max-norm of `sum_i w_i phi_i - target` on the raw features.
    pub residual: f64,
}

/// Maximum-entropy weights on the `rows x p` feature matrix `phi` whose
/// weighted mean equals `target`.
pub fn entropy_balance(phi: &[f64], rows: usize, p: usize, target: &[f64]) -> Result<EntropyFit> {
    if target.len() != p {
        return Err(Error::DimensionMismatch {
            what: "moment target",
            expected: p,
            got: target.len(),
        });
    }
    if rows == 0 {
        return Err(Error::EmptySample);
    }
    if phi.len() != rows * p {
        return Err(Error::DimensionMismatch {
            what: "feature matrix",
            expected: rows * p,
            got: phi.len(),
        });
    }
    if p == 0 {
        return Ok(EntropyFit {
            weights: vec![1.0 / rows as f64; rows],
            lambda: Vec::new(),
            iterations: 0,
            residual: 0.0,
        });
    }
    for j in 0..p {
        let (lo, hi) = (0..rows)
            .map(|i| phi[i * p + j])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !(lo <= target[j] && target[j] <= hi) {
            return Err(Error::Infeasible);
        }
    }

    let std = Standardizer::fit(phi, p);
    let z = std.apply(phi);
    let mz: Vec<f64> = target
        .iter()
        .enumerate()
        .map(|(j, v)| (v - std.mean[j]) / std.scale[j])
        .collect();
    let probs = |lambda: &DVector<f64>| -> (Vec<f64>, f64) {
        let s: Vec<f64> = (0..rows)
            .map(|i| (0..p).map(|j| lambda[j] * (z[i * p + j] - mz[j])).sum())
            .collect();
        let smax = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - smax).exp()).collect();
        let total: f64 = e.iter().sum();
        (e.iter().map(|v| v / total).collect(), smax + total.ln())
    };
    let eval = |lambda: &DVector<f64>| {
        let (w, value) = probs(lambda);
        let mut grad = DVector::zeros(p);
        for (i, wi) in w.iter().enumerate() {
            for j in 0..p {
                grad[j] += wi * (z[i * p + j] - mz[j]);
            }
        }
        let mut hess = DMatrix::zeros(p, p);
        let mut c = DVector::zeros(p);
        for (i, wi) in w.iter().enumerate() {
            for j in 0..p {
                c[j] = z[i * p + j] - mz[j] - grad[j];
            }
            hess.ger(*wi, &c, &c, 1.0);
        }
        Local { value, grad, hess }
    };

    let out = minimize(eval, |_, l| l.grad.amax() <= TOL, DVector::zeros(p), MAX_ITER);
    let (lambda, iterations) = match out {
        Outcome::Converged { x, iterations } => (x, iterations),
        Outcome::Singular => return Err(Error::Infeasible),
        Outcome::MaxIterations { x, iterations } | Outcome::Stalled { x, iterations } => {
            if x.amax() > DIVERGED {
                return Err(Error::Infeasible);
            }
            let (w, _) = probs(&x);
            return Err(Error::NoConvergence {
                method: "eb",
                iterations,
                norm: raw_residual(phi, p, target, &w),
            });
        }
    };
    let (weights, _) = probs(&lambda);
    Ok(EntropyFit {
        residual: raw_residual(phi, p, target, &weights),
        lambda: lambda.iter().zip(&std.scale).map(|(l, s)| l / s).collect(),
        weights,
        iterations,
    })
}

fn raw_residual(phi: &[f64], p: usize, target: &[f64], w: &[f64]) -> f64 {
    (0..p)
        .map(|j| (w.iter().enumerate().map(|(i, wi)| wi * phi[i * p + j]).sum::<f64>() - target[j]).abs())
        .fold(0.0, f64::max)
}

fn eb_side(ds: &Dataset, problem: &BalanceProblem) -> Result<BalanceSolution> {
    let gv = ds.groups();
    let side = problem.side();
    let fit = entropy_balance(problem.source(), problem.m(), problem.d(), &problem.target_mean())?;
    let weights = WeightVector::from_group(&gv, side, &fit.weights)?;
    Ok(BalanceSolution {
        method: Method::Eb,
        final_ipm: moment_imbalance(problem, &weights, &gv),
        weights,
        theta: fit.lambda,
        loss_trace: Vec::new(),
        iterations: fit.iterations,
        seed: 0,
        residual_norm: Some(fit.residual),
        warnings: Vec::new(),
    })
}

/// Controls reweighted to the treated covariate means.
pub fn eb_att(ds: &Dataset) -> Result<BalanceSolution> {
    eb_side(ds, &BalanceProblem::att(ds, &ds.groups()))
}

/// Each group reweighted to the overall covariate means.
pub fn eb_ate(ds: &Dataset) -> Result<(BalanceSolution, BalanceSolution)> {
    let gv = ds.groups();
    Ok((
        eb_side(ds, &BalanceProblem::ate(ds, &gv, Side::Control))?,
        eb_side(ds, &BalanceProblem::ate(ds, &gv, Side::Treated))?,
    ))
}
