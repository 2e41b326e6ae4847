//! Simulation designs with ground-truth oracles.
//!
//! The Kang-Schafer designs draw `Z ~ N(0, I_4)` and observe only
//! `X1 = exp(Z1/2)`, `X2 = Z2/(1 + exp(Z1)) + 10`, `X3 = (Z1 Z3/25 + 0.6)^3`,
//! `X4 = (Z2 + Z4 + 20)^2`. The outcome is linear in `Z` with no treatment
//! effect. The heterogeneous design draws six uniform covariates and has an
//! effect of `5 cos(2 X5)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::data::{Dataset, SimOracle};
use crate::discriminators::sigmoid;
use crate::error::{Error, Result};

/// Generator used for every simulated draw.
pub const RNG_NAME: &str = "ChaCha20 (rand_chacha) with ziggurat normals (rand_distr)";

/// Reference ATT of the heterogeneous design.
pub const HETERO_ATT: f64 = -0.684;
/// Reference ATE of the heterogeneous design.
pub const HETERO_ATE: f64 = -0.925;

/// Standard deviation of the latent treatment score in the heterogeneous
/// design.
pub const HETERO_LATENT_SD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    KsLinear,
    KsNonlinear,
    KsSmallOverlap,
    Heterogeneous,
}

impl Design {
    pub const ALL: [Design; 4] = [
        Design::KsLinear,
        Design::KsNonlinear,
        Design::KsSmallOverlap,
        Design::Heterogeneous,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Design::KsLinear => "ks_linear",
            Design::KsNonlinear => "ks_nonlinear",
            Design::KsSmallOverlap => "ks_small_overlap",
            Design::Heterogeneous => "heterogeneous",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Design::Heterogeneous => 6,
            _ => 4,
        }
    }

    pub fn default_noise_sd(self) -> f64 {
        match self {
            Design::Heterogeneous => 0.1,
            _ => 1.0,
        }
    }

    /// Population ATT and ATE.
    pub fn truth(self) -> (f64, f64) {
        match self {
            Design::Heterogeneous => (HETERO_ATT, HETERO_ATE),
            _ => (0.0, 0.0),
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Design::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::UnknownDesign(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub design: Design,
    pub n: usize,
    /// Outcome noise; `None` uses the design default.
    pub noise_sd: Option<f64>,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(design: Design, n: usize, seed: u64) -> Self {
        SimConfig {
            design,
            n,
            noise_sd: None,
            seed,
        }
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd.unwrap_or_else(|| self.design.default_noise_sd())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidConfig(format!("n must be at least 10, got {}", self.n)));
        }
        let sd = self.noise_sd();
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise sd must be positive, got {sd}")));
        }
        Ok(())
    }
}

/// Kang-Schafer covariates from the latent normals.
pub fn ks_covariates(z: &[f64; 4]) -> [f64; 4] {
    [
        (z[0] / 2.0).exp(),
        z[1] / (1.0 + z[0].exp()) + 10.0,
        (z[0] * z[2] / 25.0 + 0.6).powi(3),
        (z[1] + z[3] + 20.0).powi(2),
    ]
}

/// Population means of the Kang-Schafer covariates.
pub fn ks_covariate_means() -> [f64; 4] {
    // E(Z1 Z3)^2 = 1 and odd moments vanish, so E X3 = 0.6^3 + 3 * 0.6 / 625.
    [(0.125f64).exp(), 10.0, 0.216 + 1.8 / 625.0, 402.0]
}

pub fn ks_outcome_mean(z: &[f64; 4]) -> f64 {
    210.0 + 27.4 * z[0] + 13.7 * (z[1] + z[2] + z[3])
}

/// Treatment logit of a Kang-Schafer design.
pub fn ks_logit(design: Design, z: &[f64; 4], x: &[f64; 4]) -> f64 {
    match design {
        Design::KsLinear => {
            // linear in the covariates centered at their population means
            let m = ks_covariate_means();
            (x[0] - m[0]) - 0.5 * (x[1] - m[1]) - 2.0 * (x[2] - m[2]) - 0.01 * (x[3] - m[3])
        }
        Design::KsNonlinear => -z[0] + 0.5 * z[1] - 0.25 * z[2] - 0.1 * z[3],
        Design::KsSmallOverlap => 2.0 * (-z[0] + 0.5 * z[1] - 0.25 * z[2] - 0.1 * z[3]),
        Design::Heterogeneous => unreachable!("not a Kang-Schafer design"),
    }
}

/// Mean of the latent treatment score in the heterogeneous design.
pub fn hetero_score_mean(x: &[f64]) -> f64 {
    let (x1, x2, x3, x4, x5) = (x[0], x[1], x[2], x[3], x[4]);
    let max3 = |a: f64, b: f64, c: f64| a.max(b).max(c);
    (max3(x1, x2, x3).sin() + max3(x3, x4, x5).powi(2)) / (2.0 + (x1 + x5).powi(2))
        + 4.0 * x1.powi(3) * (3.0 * x3).sin() * (1.0 + (x4 - 0.5 * x3).exp())
        + x3 * x3
        + 2.0 * x5 * x5 * x4.sin()
        - 3.0
}

/// Control outcome regression of the heterogeneous design.
pub fn hetero_m0(x: &[f64]) -> f64 {
    let (x1, x2, x3, x4, x6) = (x[0], x[1], x[2], x[3], x[5]);
    2.0 * (x1 - 2.0).powi(2)
        + 1.0 / (x2 * x2 + 1.0) * x1.max(x6).powi(3) / (1.0 + 2.0 * x3 * x3) * x2.sin()
        + 3.0 * (2.0 * x4 - 1.0).powi(2)
}

pub fn hetero_effect(x: &[f64]) -> f64 {
    5.0 * (2.0 * x[4]).cos()
}

/// `P(T = 1 | x) = E sigmoid(mu + sd * N(0, 1))`, by the trapezoid rule on
/// `[-8, 8]`.
pub fn hetero_propensity(x: &[f64]) -> f64 {
    const NODES: usize = 321;
    let mu = hetero_score_mean(x);
    let h = 16.0 / (NODES - 1) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..NODES {
        let z = -8.0 + h * k as f64;
        let phi = (-0.5 * z * z).exp();
        num += phi * sigmoid(mu + HETERO_LATENT_SD * z);
        den += phi;
    }
    (num / den).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// Draws one dataset with its oracle.
pub fn generate(cfg: &SimConfig) -> Result<(Dataset, SimOracle)> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let noise = cfg.noise_sd();
    let d = cfg.design.dim();
    let n = cfg.n;
    let mut x = Vec::with_capacity(n * d);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let (mut m0, mut m1, mut pi) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        match cfg.design {
            Design::Heterogeneous => {
                let row: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
                let latent = hetero_score_mean(&row) + HETERO_LATENT_SD * rng.sample::<f64, _>(StandardNormal);
                let treated = rng.random::<f64>() < sigmoid(latent);
                let base = hetero_m0(&row);
                let effect = hetero_effect(&row);
                let mean = if treated { base + effect } else { base };
                y.push(mean + noise * rng.sample::<f64, _>(StandardNormal));
                m0.push(base);
                m1.push(base + effect);
                pi.push(hetero_propensity(&row));
                t.push(treated);
                x.extend_from_slice(&row);
            }
            design => {
                let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let row = ks_covariates(&z);
                let p = sigmoid(ks_logit(design, &z, &row));
                let treated = rng.random::<f64>() < p;
                let mean = ks_outcome_mean(&z);
                y.push(mean + noise * rng.sample::<f64, _>(StandardNormal));
                m0.push(mean);
                m1.push(mean);
                pi.push(p);
                t.push(treated);
                x.extend_from_slice(&row);
            }
        }
    }
    let (true_att, true_ate) = cfg.design.truth();
    let ds = Dataset::new(x, d, t, Some(y))?;
    Ok((
        ds,
        SimOracle {
            m0,
            m1,
            pi,
            true_att,
            true_ate,
        },
    ))
}

/// Monte Carlo estimate of the population `(ATT, ATE)` from `draws` fresh
/// covariate vectors, weighting the effect by the exact propensity for the
/// ATT.
pub fn monte_carlo_truth(design: Design, draws: usize, seed: u64) -> Result<(f64, f64)> {
    if draws == 0 {
        return Err(Error::EmptySample);
    }
    if design != Design::Heterogeneous {
        return Ok((0.0, 0.0));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut weighted, mut mass, mut total) = (0.0, 0.0, 0.0);
    let mut row = [0.0; 6];
    for _ in 0..draws {
        row.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
        let effect = hetero_effect(&row);
        let p = hetero_propensity(&row);
        weighted += p * effect;
        mass += p;
        total += effect;
    }
    Ok((weighted / mass, total / draws as f64))
}
