//! Discriminator families and the squared-gap loss they feed.
//!
//! Every family works on a [`BalanceProblem`]: a group of *source* units whose
//! weights are being learned, and a fixed *target* measure they should match.
//! For the ATT the source is the control group and the target is the uniform
//! measure on the treated; for the ATE side `t` the source is group `t` and the
//! target is the uniform measure on all units.

mod linear;
mod loss;
mod mlp;
mod mmd;
mod sigmoid;

pub use linear::{linear_ipm, linear_loss_grad_w, moment_gaps};
pub use loss::{gap, ln_loss, ln_loss_local};
pub use mlp::{
    clip_mlp, mlp_forward, mlp_grads, mlp_objective, sample_interpolates, LipschitzMlp, MlpObjective, PenaltyConfig,
};
pub use mmd::{mmd_sq, mmd_sq_grad_w, RbfMmd};
pub use sigmoid::{sigmoid, sigmoid_forward, sigmoid_grads, Activations, SigmoidEnsemble, SigmoidGrads};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupView, Side};

/// Which discriminator class the IPM is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// RBF-kernel MMD, closed form in the weights.
    Mmd,
    /// Ensemble of single sigmoid units.
    Sipm,
    /// Gradient-penalized one-hidden-layer leaky-relu network.
    Wass,
    /// Linear functions with sup-norm-bounded coefficients; the IPM is the
    /// l1 norm of the first-moment gap.
    Linear,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Mmd => "mmd",
            Family::Sipm => "sipm",
            Family::Wass => "wass",
            Family::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BalanceProblem {
    d: usize,
    source: Vec<f64>,
    source_idx: Vec<usize>,
    target: Vec<f64>,
    target_weights: Vec<f64>,
    side: Side,
}

impl BalanceProblem {
    /// Controls against the uniform measure on the treated.
    pub fn att(ds: &Dataset, gv: &GroupView) -> Self {
        let n1 = gv.n1() as f64;
        BalanceProblem {
            d: ds.d(),
            source: gather(ds, &gv.control_idx),
            source_idx: gv.control_idx.clone(),
            target: gather(ds, &gv.treated_idx),
            target_weights: vec![1.0 / n1; gv.n1()],
            side: Side::Control,
        }
    }

    /// Group `side` against the uniform measure on every unit.
    pub fn ate(ds: &Dataset, gv: &GroupView, side: Side) -> Self {
        BalanceProblem {
            d: ds.d(),
            source: gather(ds, gv.indices(side)),
            source_idx: gv.indices(side).to_vec(),
            target: ds.x().to_vec(),
            target_weights: vec![1.0 / ds.n() as f64; ds.n()],
            side,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of source units.
    pub fn m(&self) -> usize {
        self.source_idx.len()
    }

    /// Number of target points.
    pub fn k(&self) -> usize {
        self.target_weights.len()
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn source_idx(&self) -> &[usize] {
        &self.source_idx
    }

    pub fn source_row(&self, i: usize) -> &[f64] {
        &self.source[i * self.d..(i + 1) * self.d]
    }

    pub fn target_row(&self, j: usize) -> &[f64] {
        &self.target[j * self.d..(j + 1) * self.d]
    }

    pub fn source(&self) -> &[f64] {
        &self.source
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn target_weights(&self) -> &[f64] {
        &self.target_weights
    }

    /// Target-weighted mean of the covariates.
    pub fn target_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        for (j, &v) in self.target_weights.iter().enumerate() {
            for (acc, x) in mean.iter_mut().zip(self.target_row(j)) {
                *acc += v * x;
            }
        }
        mean
    }

    /// Draws a target index according to the target weights.
    pub(crate) fn sample_target<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        // Target measures are uniform for both estimands.
        rng.random_range(0..self.k())
    }
}

fn gather(ds: &Dataset, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * ds.d());
    for &i in idx {
        out.extend_from_slice(ds.row(i));
    }
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
