use crate::data::{GroupView, Side, WeightVector};
use crate::error::{Error, Result};

/// Target-weighted mean of `m_target` minus source-weighted mean of `m_source`.
pub fn gap(w_source: &[f64], m_source: &[f64], v_target: &[f64], m_target: &[f64]) -> f64 {
    let tgt: f64 = v_target.iter().zip(m_target).map(|(v, m)| v * m).sum();
    let src: f64 = w_source.iter().zip(m_source).map(|(w, m)| w * m).sum();
    tgt - src
}

pub fn ln_loss_local(w_source: &[f64], m_source: &[f64], v_target: &[f64], m_target: &[f64]) -> f64 {
    gap(w_source, m_source, v_target, m_target).powi(2)
}

/// Squared difference between the treated mean of the discriminator outputs
/// and their `w`-weighted control mean. `m_vals` holds one output per unit.
pub fn ln_loss(w: &WeightVector, m_vals: &[f64], gv: &GroupView) -> Result<f64> {
    if m_vals.len() != gv.n() || w.len() != gv.n() {
        return Err(Error::DimensionMismatch {
            what: "discriminator outputs",
            expected: gv.n(),
            got: m_vals.len().min(w.len()),
        });
    }
    if w.side() != Side::Control {
        return Err(Error::InvalidWeights("ATT loss needs control-side weights".into()));
    }
    let n1 = gv.n1() as f64;
    let treated_mean: f64 = gv.treated_idx.iter().map(|&i| m_vals[i]).sum::<f64>() / n1;
    let ws = w.as_slice();
    let control_mean: f64 = gv.control_idx.iter().map(|&i| ws[i] * m_vals[i]).sum();
    Ok((treated_mean - control_mean).powi(2))
}
