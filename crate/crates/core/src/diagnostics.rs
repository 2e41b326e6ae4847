//! Weighted two-sample KS tests, weighted QQ pairs and replication summaries.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_eff_a: f64,
    pub n_eff_b: f64,
}

/// Normalized copy of `w`, checked against `values`.
fn normalized(values: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    if values.len() != w.len() {
        return Err(Error::DimensionMismatch {
            what: "weights",
            expected: values.len(),
            got: w.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite value".into()));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidWeights("weights sum to zero".into()));
    }
    Ok(w.iter().map(|v| v / total).collect())
}

/// Kish effective sample size.
pub fn effective_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    s * s / s2
}

/// Points sorted by value with their weights.
fn sorted(values: &[f64], w: &[f64]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = values.iter().copied().zip(w.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

/// Largest gap between the weighted ECDFs of two samples, with an
/// asymptotic p-value at the Kish effective sample size.
pub fn weighted_ks(values_a: &[f64], weights_a: &[f64], values_b: &[f64], weights_b: &[f64]) -> Result<KsResult> {
    let wa = normalized(values_a, weights_a)?;
    let wb = normalized(values_b, weights_b)?;
    let a = sorted(values_a, &wa);
    let b = sorted(values_b, &wb);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut stat = 0.0f64;
    while i < a.len() || j < b.len() {
        // advance both ECDFs past the next pooled value, ties included
        let v = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.0.min(y.0),
            (Some(x), None) => x.0,
            (None, Some(y)) => y.0,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i].0 == v {
            fa += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == v {
            fb += b[j].1;
            j += 1;
        }
        stat = stat.max((fa - fb).abs());
    }
    let stat = stat.min(1.0);
    let n_eff_a = effective_size(&wa);
    let n_eff_b = effective_size(&wb);
    let ne = n_eff_a * n_eff_b / (n_eff_a + n_eff_b);
    Ok(KsResult {
        statistic: stat,
        p_value: kolmogorov_sf(ne.sqrt() * stat),
        n_eff_a,
        n_eff_b,
    })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    const TERM_TOL: f64 = 1e-12;
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.0 {
        // Jacobi theta form of the CDF converges fast for small lambda
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 1.. {
            let odd = (2 * k - 1) as f64;
            let term = (c * odd * odd).exp();
            cdf += term;
            if term < TERM_TOL {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * cdf
    } else {
        let mut sf = 0.0;
        for k in 1.. {
            let kf = k as f64;
            let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
            sf += if k % 2 == 1 { term } else { -term };
            if term < TERM_TOL {
                break;
            }
        }
        sf
    };
    p.clamp(0.0, 1.0)
}

/// Smallest value whose cumulative weight reaches `p`.
pub fn weighted_quantile(sorted_pts: &[(f64, f64)], p: f64) -> f64 {
    let mut cum = 0.0;
    for &(v, w) in sorted_pts {
        cum += w;
        if cum >= p - 1e-12 {
            return v;
        }
    }
    sorted_pts.last().map(|pt| pt.0).unwrap_or(f64::NAN)
}

/// `(reference quantile, weighted quantile)` at `k / (n_quantiles + 1)`.
pub fn qq_pairs(
    values: &[f64],
    weights: &[f64],
    ref_values: &[f64],
    ref_weights: &[f64],
    n_quantiles: usize,
) -> Result<Vec<(f64, f64)>> {
    if n_quantiles < 2 {
        return Err(Error::InvalidConfig("need at least 2 quantiles".into()));
    }
    let w = normalized(values, weights)?;
    let rw = normalized(ref_values, ref_weights)?;
    let pts = sorted(values, &w);
    let rpts = sorted(ref_values, &rw);
    Ok((1..=n_quantiles)
        .map(|k| {
            let p = k as f64 / (n_quantiles + 1) as f64;
            (weighted_quantile(&rpts, p), weighted_quantile(&pts, p))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub bias: f64,
    pub rmse: f64,
    pub n_reps: usize,
    pub estimates: Vec<f64>,
}

impl ReplicationSummary {
    /// Population standard deviation of the estimates.
    pub fn sd(&self) -> f64 {
        let m = self.estimates.iter().sum::<f64>() / self.n_reps as f64;
        (self.estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>() / self.n_reps as f64).sqrt()
    }
}

pub fn summarize(estimates: &[f64], truth: f64) -> Result<ReplicationSummary> {
    if estimates.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = estimates.len() as f64;
    let bias = estimates.iter().map(|e| e - truth).sum::<f64>() / n;
    let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n;
    Ok(ReplicationSummary {
        bias,
        rmse: mse.sqrt(),
        n_reps: estimates.len(),
        estimates: estimates.to_vec(),
    })
}
