//! Stabilized inverse propensity weighting from a logistic regression.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Side, WeightVector};
use crate::discriminators::{dot, sigmoid, BalanceProblem};
use crate::error::{Error, Result};

use super::newton::{minimize, Local, Outcome, Standardizer};
use super::{moment_imbalance, BalanceSolution, Method};

const TOL: f64 = 1e-10;
const MAX_ITER: usize = 100;
/// Fitted linear predictors beyond this magnitude are treated as separation.
const SEPARATION: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct LogisticFit {
    /// Intercept first, then one coefficient per covariate.
    pub beta: Vec<f64>,
    pub linear_predictor: Vec<f64>,
    pub fitted: Vec<f64>,
    pub iterations: usize,
    /// Euclidean norm of the score of the mean log-likelihood.
    pub grad_norm: f64,
}

/// Maximum likelihood logistic regression of treatment on the covariates
/// with an intercept.
pub fn fit_logistic(ds: &Dataset) -> Result<LogisticFit> {
    let (n, d) = (ds.n(), ds.d());
    let std = Standardizer::fit(ds.x(), d);
    let z = std.apply(ds.x());
    let t: Vec<f64> = ds.treatment().iter().map(|&b| f64::from(u8::from(b))).collect();
    let p = d + 1;

    let eval = |b: &DVector<f64>| {
        let mut value = 0.0;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let mut phi = DVector::zeros(p);
        for i in 0..n {
            phi[0] = 1.0;
            phi.rows_mut(1, d).copy_from_slice(&z[i * d..(i + 1) * d]);
            let eta = b.dot(&phi);
            // log(1 + e^eta), stable for large |eta|
            let softplus = eta.max(0.0) + (-eta.abs()).exp().ln_1p();
            value += softplus - t[i] * eta;
            let pi = sigmoid(eta);
            grad.axpy(pi - t[i], &phi, 1.0);
            hess.ger(pi * (1.0 - pi), &phi, &phi, 1.0);
        }
        let inv = 1.0 / n as f64;
        Local {
            value: value * inv,
            grad: grad * inv,
            hess: hess * inv,
        }
    };
    let original = |bz: &DVector<f64>| to_original(bz.as_slice(), &std);
    let score_norm = |beta: &[f64]| -> f64 {
        let mut g = vec![0.0; p];
        for i in 0..n {
            let x = ds.row(i);
            let r = t[i] - sigmoid(beta[0] + dot(&beta[1..], x));
            g[0] += r;
            for (gj, xj) in g[1..].iter_mut().zip(x) {
                *gj += r * xj;
            }
        }
        g.iter().map(|v| (v / n as f64).powi(2)).sum::<f64>().sqrt()
    };

    let out = minimize(
        eval,
        |bz, _| score_norm(&original(bz)) <= TOL,
        DVector::zeros(p),
        MAX_ITER,
    );
    let (bz, iterations, converged) = match out {
        Outcome::Converged { x, iterations } => (x, iterations, true),
        Outcome::Singular => return Err(Error::SingularJacobian("glm")),
        Outcome::MaxIterations { x, iterations } | Outcome::Stalled { x, iterations } => (x, iterations, false),
    };
    let beta = original(&bz);
    let grad_norm = score_norm(&beta);
    let linear_predictor: Vec<f64> = (0..n).map(|i| beta[0] + dot(&beta[1..], ds.row(i))).collect();
    let separated = linear_predictor.iter().any(|e| e.abs() > SEPARATION);
    if !converged || separated {
        return Err(Error::NoConvergence {
            method: "glm",
            iterations,
            norm: grad_norm,
        });
    }
    Ok(LogisticFit {
        beta,
        fitted: linear_predictor.iter().map(|&e| sigmoid(e)).collect(),
        linear_predictor,
        iterations,
        grad_norm,
    })
}

/// Maps coefficients on standardized features back to the raw scale.
pub(super) fn to_original(bz: &[f64], std: &Standardizer) -> Vec<f64> {
    let mut beta = Vec::with_capacity(bz.len());
    let mut intercept = bz[0];
    for (j, b) in bz[1..].iter().enumerate() {
        intercept -= b * std.mean[j] / std.scale[j];
    }
    beta.push(intercept);
    beta.extend(bz[1..].iter().zip(&std.scale).map(|(b, s)| b / s));
    beta
}

/// ATT: controls weighted by the fitted odds, normalized.
pub fn sipw_glm(ds: &Dataset) -> Result<BalanceSolution> {
    let fit = fit_logistic(ds)?;
    let gv = ds.groups();
    let eta_max = gv
        .control_idx
        .iter()
        .map(|&i| fit.linear_predictor[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let local: Vec<f64> = gv
        .control_idx
        .iter()
        .map(|&i| (fit.linear_predictor[i] - eta_max).exp())
        .collect();
    let weights = WeightVector::from_group(&gv, Side::Control, &local)?;
    let problem = BalanceProblem::att(ds, &gv);
    Ok(BalanceSolution {
        method: Method::Glm,
        final_ipm: moment_imbalance(&problem, &weights, &gv),
        weights,
        theta: fit.beta,
        loss_trace: Vec::new(),
        iterations: fit.iterations,
        seed: 0,
        residual_norm: Some(fit.grad_norm),
        warnings: Vec::new(),
    })
}

/// ATE: `1 / pi` on the treated and `1 / (1 - pi)` on the controls, each
/// normalized within its group.
pub fn sipw_glm_ate(ds: &Dataset) -> Result<(BalanceSolution, BalanceSolution)> {
    let fit = fit_logistic(ds)?;
    let gv = ds.groups();
    let side = |side: Side| -> Result<BalanceSolution> {
        // 1/pi = 1 + e^-eta and 1/(1-pi) = 1 + e^eta
        let sign = if side == Side::Treated { -1.0 } else { 1.0 };
        let local: Vec<f64> = gv
            .indices(side)
            .iter()
            .map(|&i| 1.0 + (sign * fit.linear_predictor[i]).exp())
            .collect();
        let weights = WeightVector::from_group(&gv, side, &local)?;
        let problem = BalanceProblem::ate(ds, &gv, side);
        Ok(BalanceSolution {
            method: Method::Glm,
            final_ipm: moment_imbalance(&problem, &weights, &gv),
            weights,
            theta: fit.beta.clone(),
            loss_trace: Vec::new(),
            iterations: fit.iterations,
            seed: 0,
            residual_norm: Some(fit.grad_norm),
            warnings: Vec::new(),
        })
    };
    Ok((side(Side::Control)?, side(Side::Treated)?))
}
