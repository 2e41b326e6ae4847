//! Just-identified covariate balancing propensity score.
//!
//! With a logistic propensity model and the balance conditions as the only
//! moments, the estimating equations are the stationarity conditions of a
//! convex exponential-tilting objective, which is minimized by damped Newton.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Side, WeightVector};
use crate::discriminators::{dot, BalanceProblem};
use crate::error::{Error, Result};

use super::glm::to_original;
use super::newton::{minimize, Local, Outcome, Standardizer};
use super::{moment_imbalance, BalanceSolution, Method};

const TOL: f64 = 1e-9;
const MAX_ITER: usize = 200;

/// Solution of `sum_i s_i exp(s_i eta_i) phi_i = b` with `eta_i = beta . phi_i`
/// and `phi_i = (1, x_i)`.
struct Tilt {
    beta: Vec<f64>,
    eta: Vec<f64>,
    iterations: usize,
    residual: f64,
}

fn solve_tilt(ds: &Dataset, sign: &[f64], b_raw: &[f64]) -> Result<Tilt> {
    let (n, d) = (ds.n(), ds.d());
    let p = d + 1;
    let std = Standardizer::fit(ds.x(), d);
    let z = std.apply(ds.x());
    let inv = 1.0 / n as f64;
    // b in standardized coordinates: phi_z = (1, (x - mean) / scale)
    let mut b = DVector::zeros(p);
    b[0] = b_raw[0];
    for j in 0..d {
        b[j + 1] = (b_raw[j + 1] - std.mean[j] * b_raw[0]) / std.scale[j];
    }

    let eval = |beta: &DVector<f64>| {
        let mut value = -beta.dot(&b);
        let mut grad = -b.clone();
        let mut hess = DMatrix::zeros(p, p);
        let mut phi = DVector::zeros(p);
        for i in 0..n {
            if sign[i] == 0.0 {
                continue;
            }
            phi[0] = 1.0;
            phi.rows_mut(1, d).copy_from_slice(&z[i * d..(i + 1) * d]);
            let e = (sign[i] * beta.dot(&phi)).exp();
            value += e;
            grad.axpy(sign[i] * e, &phi, 1.0);
            hess.ger(e, &phi, &phi, 1.0);
        }
        Local {
            value: value * inv,
            grad: grad * inv,
            hess: hess * inv,
        }
    };
    let residual = |beta: &[f64]| -> (f64, Vec<f64>) {
        let mut r: Vec<f64> = b_raw.iter().map(|v| -v).collect();
        let mut eta = vec![0.0; n];
        for i in 0..n {
            let x = ds.row(i);
            eta[i] = beta[0] + dot(&beta[1..], x);
            if sign[i] == 0.0 {
                continue;
            }
            let e = sign[i] * (sign[i] * eta[i]).exp();
            r[0] += e;
            for (rj, xj) in r[1..].iter_mut().zip(x) {
                *rj += e * xj;
            }
        }
        (r.iter().fold(0.0f64, |m, v| m.max((v * inv).abs())), eta)
    };

    let out = minimize(
        eval,
        |bz, _| residual(&to_original(bz.as_slice(), &std)).0 <= TOL,
        DVector::zeros(p),
        MAX_ITER,
    );
    let (bz, iterations) = match out {
        Outcome::Converged { x, iterations } => (x, iterations),
        Outcome::Singular => return Err(Error::SingularJacobian("cbps")),
        Outcome::MaxIterations { x, iterations } | Outcome::Stalled { x, iterations } => {
            let norm = residual(&to_original(x.as_slice(), &std)).0;
            return Err(Error::NoConvergence {
                method: "cbps",
                iterations,
                norm,
            });
        }
    };
    let beta = to_original(bz.as_slice(), &std);
    let (residual, eta) = residual(&beta);
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "cbps",
            iteration: iterations,
        });
    }
    Ok(Tilt {
        beta,
        eta,
        iterations,
        residual,
    })
}

fn phi_sum(ds: &Dataset, idx: &[usize], out: &mut [f64], scale: f64) {
    for &i in idx {
        out[0] += scale;
        for (o, x) in out[1..].iter_mut().zip(ds.row(i)) {
            *o += scale * x;
        }
    }
}

fn solution(
    ds: &Dataset,
    tilt: &Tilt,
    side: Side,
    problem: &BalanceProblem,
    local: Vec<f64>,
) -> Result<BalanceSolution> {
    let gv = ds.groups();
    let weights = WeightVector::from_group(&gv, side, &local)?;
    Ok(BalanceSolution {
        method: Method::Cbps,
        final_ipm: moment_imbalance(problem, &weights, &gv),
        weights,
        theta: tilt.beta.clone(),
        loss_trace: Vec::new(),
        iterations: tilt.iterations,
        seed: 0,
        residual_norm: Some(tilt.residual),
        warnings: Vec::new(),
    })
}

/// Control weights proportional to the fitted odds, with the treated mean of
/// `(1, x)` matched exactly.
pub fn cbps_att(ds: &Dataset) -> Result<BalanceSolution> {
    let gv = ds.groups();
    let sign: Vec<f64> = ds.treatment().iter().map(|&t| if t { 0.0 } else { 1.0 }).collect();
    let mut b = vec![0.0; ds.d() + 1];
    phi_sum(ds, &gv.treated_idx, &mut b, 1.0);
    let tilt = solve_tilt(ds, &sign, &b)?;
    let shift = gv
        .control_idx
        .iter()
        .map(|&i| tilt.eta[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let local = gv.control_idx.iter().map(|&i| (tilt.eta[i] - shift).exp()).collect();
    solution(ds, &tilt, Side::Control, &BalanceProblem::att(ds, &gv), local)
}

/// Inverse propensity weights from the score solving
/// `sum_t phi / pi = sum_c phi / (1 - pi)`.
pub fn cbps_ate(ds: &Dataset) -> Result<(BalanceSolution, BalanceSolution)> {
    let gv = ds.groups();
    let sign: Vec<f64> = ds.treatment().iter().map(|&t| if t { -1.0 } else { 1.0 }).collect();
    let mut b = vec![0.0; ds.d() + 1];
    phi_sum(ds, &gv.treated_idx, &mut b, 1.0);
    phi_sum(ds, &gv.control_idx, &mut b, -1.0);
    let tilt = solve_tilt(ds, &sign, &b)?;
    let side = |side: Side| {
        let s = if side == Side::Treated { -1.0 } else { 1.0 };
        let local = gv
            .indices(side)
            .iter()
            .map(|&i| 1.0 + (s * tilt.eta[i]).exp())
            .collect();
        solution(ds, &tilt, side, &BalanceProblem::ate(ds, &gv, side), local)
    };
    Ok((side(Side::Control)?, side(Side::Treated)?))
}
