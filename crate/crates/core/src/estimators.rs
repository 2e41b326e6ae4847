//! Weighted ATT/ATE point estimates and the simulation-side error
//! decomposition.

use serde::Serialize;

use crate::balancers::{Balanced, Estimand, Method};
use crate::data::{Dataset, Side, SimOracle, WeightVector};
use crate::error::{Error, Result};

/// Mean treated outcome minus the `w`-weighted control outcome.
pub fn att_weighted(ds: &Dataset, w: &WeightVector) -> Result<f64> {
    let y = ds.outcome().ok_or(Error::MissingOutcome)?;
    check(ds, w, Side::Control)?;
    let n1 = ds.treatment().iter().filter(|&&t| t).count() as f64;
    let treated: f64 = y
        .iter()
        .zip(ds.treatment())
        .filter(|(_, &t)| t)
        .map(|(v, _)| v)
        .sum::<f64>()
        / n1;
    Ok(treated - weighted_sum(y, w))
}

pub fn ate_weighted(ds: &Dataset, w0: &WeightVector, w1: &WeightVector) -> Result<f64> {
    let y = ds.outcome().ok_or(Error::MissingOutcome)?;
    check(ds, w0, Side::Control)?;
    check(ds, w1, Side::Treated)?;
    Ok(weighted_sum(y, w1) - weighted_sum(y, w0))
}

/// Point estimate for whatever estimand `b` was fitted for.
pub fn estimate(ds: &Dataset, b: &Balanced) -> Result<f64> {
    match b {
        Balanced::Att(s) => att_weighted(ds, &s.weights),
        Balanced::Ate { control, treated } => ate_weighted(ds, &control.weights, &treated.weights),
    }
}

fn check(ds: &Dataset, w: &WeightVector, side: Side) -> Result<()> {
    if w.len() != ds.n() {
        return Err(Error::DimensionMismatch {
            what: "weights",
            expected: ds.n(),
            got: w.len(),
        });
    }
    if w.side() != side {
        return Err(Error::InvalidWeights(format!(
            "expected {} weights, got {} weights",
            side.as_str(),
            w.side().as_str()
        )));
    }
    Ok(())
}

fn weighted_sum(v: &[f64], w: &WeightVector) -> f64 {
    v.iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub estimand: Estimand,
    pub value: f64,
    pub method: String,
    pub final_ipm: f64,
    pub n: usize,
    pub n0: usize,
    pub n1: usize,
    pub seed: u64,
}

impl EstimateReport {
    pub fn new(ds: &Dataset, method: Method, b: &Balanced) -> Result<Self> {
        let gv = ds.groups();
        let sols = b.solutions();
        let (estimand, final_ipm) = match b {
            Balanced::Att(s) => (Estimand::Att, s.final_ipm),
            Balanced::Ate { control, treated } => (Estimand::Ate, control.final_ipm + treated.final_ipm),
        };
        Ok(EstimateReport {
            estimand,
            value: estimate(ds, b)?,
            method: method.id(),
            final_ipm,
            n: gv.n(),
            n0: gv.n0(),
            n1: gv.n1(),
            seed: sols[0].seed,
        })
    }
}

/// `estimate - truth = err_bal + err_obs + satt_minus_att`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorDecomposition {
    pub err_bal: f64,
    pub err_obs: f64,
    /// Sample minus population effect (SATE minus ATE for the ATE).
    pub satt_minus_att: f64,
}

impl ErrorDecomposition {
    pub fn total(&self) -> f64 {
        self.err_bal + self.err_obs + self.satt_minus_att
    }
}

pub fn decompose_att(ds: &Dataset, w: &WeightVector, oracle: &SimOracle) -> Result<ErrorDecomposition> {
    let y = ds.outcome().ok_or(Error::MissingOutcome)?;
    check(ds, w, Side::Control)?;
    check_oracle(ds, oracle)?;
    let t = ds.treatment();
    let n1 = t.iter().filter(|&&v| v).count() as f64;
    let (mut m0_t, mut resid_t, mut satt) = (0.0, 0.0, 0.0);
    for i in (0..ds.n()).filter(|&i| t[i]) {
        m0_t += oracle.m0[i];
        resid_t += y[i] - oracle.m1[i];
        satt += oracle.m1[i] - oracle.m0[i];
    }
    let w = w.as_slice();
    let (mut m0_c, mut resid_c) = (0.0, 0.0);
    for i in (0..ds.n()).filter(|&i| !t[i]) {
        m0_c += w[i] * oracle.m0[i];
        resid_c += w[i] * (y[i] - oracle.m0[i]);
    }
    Ok(ErrorDecomposition {
        err_bal: m0_t / n1 - m0_c,
        err_obs: resid_t / n1 - resid_c,
        satt_minus_att: satt / n1 - oracle.true_att,
    })
}

pub fn decompose_ate(
    ds: &Dataset,
    w0: &WeightVector,
    w1: &WeightVector,
    oracle: &SimOracle,
) -> Result<ErrorDecomposition> {
    let y = ds.outcome().ok_or(Error::MissingOutcome)?;
    check(ds, w0, Side::Control)?;
    check(ds, w1, Side::Treated)?;
    check_oracle(ds, oracle)?;
    let n = ds.n() as f64;
    let (w0, w1) = (w0.as_slice(), w1.as_slice());
    let (mut bal, mut obs, mut sate) = (0.0, 0.0, 0.0);
    for i in 0..ds.n() {
        let (m0, m1) = (oracle.m0[i], oracle.m1[i]);
        bal += (m0 - m1) / n;
        sate += (m1 - m0) / n;
        if ds.is_treated(i) {
            bal += w1[i] * m1;
            obs += w1[i] * (y[i] - m1);
        } else {
            bal -= w0[i] * m0;
            obs -= w0[i] * (y[i] - m0);
        }
    }
    Ok(ErrorDecomposition {
        err_bal: bal,
        err_obs: obs,
        satt_minus_att: sate - oracle.true_ate,
    })
}

pub fn decompose_error(ds: &Dataset, b: &Balanced, oracle: &SimOracle) -> Result<ErrorDecomposition> {
    match b {
        Balanced::Att(s) => decompose_att(ds, &s.weights, oracle),
        Balanced::Ate { control, treated } => decompose_ate(ds, &control.weights, &treated.weights, oracle),
    }
}

fn check_oracle(ds: &Dataset, oracle: &SimOracle) -> Result<()> {
    for (what, len) in [("oracle m0", oracle.m0.len()), ("oracle m1", oracle.m1.len())] {
        if len != ds.n() {
            return Err(Error::DimensionMismatch {
                what,
                expected: ds.n(),
                got: len,
            });
        }
    }
    Ok(())
}
