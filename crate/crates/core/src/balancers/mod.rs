//! Weight-producing methods.
//!
//! The IPM balancers learn softmax-parameterized weights against a
//! discriminator family: [`pcbipm_att`] uses a linear score in the
//! covariates, [`ncbipm_att`] one free logit per control unit. The classical
//! baselines are stabilized IPW from a logistic fit ([`sipw_glm`]), the
//! just-identified covariate balancing propensity score ([`cbps_att`]) and
//! entropy balancing ([`eb_att`]).

mod cbipm;
mod cbps;
mod eb;
mod glm;
mod newton;
mod weight_map;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cbps::{cbps_ate, cbps_att};
pub use eb::{eb_ate, eb_att, entropy_balance, EntropyFit};
pub use glm::{fit_logistic, sipw_glm, sipw_glm_ate, LogisticFit};
pub use weight_map::{MapKind, WeightMap};

use crate::data::{Dataset, GroupView, Side, WeightVector};
use crate::discriminators::{linear_ipm, BalanceProblem, Family};
use crate::error::{Error, Result};
use crate::optim::{LoopSchedule, OptimizerConfig, RunOptions};

/// N-CBIPM weights above `NCBIPM_CAP / n0` trigger a warning.
pub const NCBIPM_CAP: f64 = 20.0;

/// Default initialization half-width of the Lipschitz MLP parameters.
pub const MLP_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Glm,
    Cbps,
    Eb,
    Pcbipm(Family),
    Ncbipm(Family),
}

impl Method {
    /// Every method reachable from the command line.
    pub const ALL: [Method; 9] = [
        Method::Glm,
        Method::Cbps,
        Method::Eb,
        Method::Pcbipm(Family::Mmd),
        Method::Pcbipm(Family::Sipm),
        Method::Pcbipm(Family::Wass),
        Method::Ncbipm(Family::Mmd),
        Method::Ncbipm(Family::Sipm),
        Method::Ncbipm(Family::Wass),
    ];

    pub fn id(&self) -> String {
        match self {
            Method::Glm => "glm".into(),
            Method::Cbps => "cbps".into(),
            Method::Eb => "eb".into(),
            Method::Pcbipm(f) => format!("pcbipm-{}", f.as_str()),
            Method::Ncbipm(f) => format!("ncbipm-{}", f.as_str()),
        }
    }

    pub fn family(&self) -> Option<Family> {
        match self {
            Method::Pcbipm(f) | Method::Ncbipm(f) => Some(*f),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let family = |f: &str| match f {
            "mmd" => Some(Family::Mmd),
            "sipm" => Some(Family::Sipm),
            "wass" => Some(Family::Wass),
            "linear" => Some(Family::Linear),
            _ => None,
        };
        let parsed = match s {
            "glm" => Some(Method::Glm),
            "cbps" => Some(Method::Cbps),
            "eb" => Some(Method::Eb),
            _ => match s.split_once('-') {
                Some(("pcbipm", f)) => family(f).map(Method::Pcbipm),
                Some(("ncbipm", f)) => family(f).map(Method::Ncbipm),
                _ => None,
            },
        };
        parsed.ok_or_else(|| Error::UnknownMethod(s.to_owned()))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    Att,
    Ate,
}

impl FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "att" => Ok(Estimand::Att),
            "ate" => Ok(Estimand::Ate),
            other => Err(Error::InvalidConfig(format!("unknown estimand `{other}` (att, ate)"))),
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::Att => "att",
            Estimand::Ate => "ate",
        })
    }
}

/// Fully resolved hyperparameters for one IPM balancing run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub descent: OptimizerConfig,
    pub ascent: OptimizerConfig,
    pub schedule: LoopSchedule,
    /// RBF kernel width.
    pub gamma: f64,
    /// Gradient-penalty weight.
    pub tau: f64,
    /// Interpolates per gradient-penalty evaluation.
    pub gp_samples: usize,
    pub ensemble_size: usize,
    pub hidden: usize,
    pub clip: f64,
    pub leaky_slope: f64,
    /// Discriminator parameters start in `U(-init_scale, init_scale)`. When
    /// unset, sigmoid members use `1 / sqrt(d)` and MLPs use `MLP_INIT_SCALE`.
    pub init_scale: Option<f64>,
    pub tol: Option<f64>,
    pub best_iterate: bool,
    /// z-score covariates before balancing. Affects only the IPM methods;
    /// the baselines are affine invariant.
    pub standardize: bool,
}

impl Settings {
    /// Defaults for a method; the baselines ignore all of these.
    pub fn for_method(method: Method) -> Self {
        let mut s = Settings {
            descent: OptimizerConfig::adam(0.03),
            ascent: OptimizerConfig::adam(0.3),
            schedule: LoopSchedule {
                iters: 1000,
                ascent_iters: 0,
            },
            gamma: 10.0,
            tau: 0.3,
            gp_samples: 100,
            ensemble_size: 100,
            hidden: 100,
            clip: 0.1,
            leaky_slope: 0.2,
            init_scale: None,
            tol: None,
            best_iterate: false,
            standardize: true,
        };
        match method {
            Method::Pcbipm(Family::Wass) | Method::Ncbipm(Family::Wass) => {
                s.schedule.ascent_iters = 5;
            }
            Method::Pcbipm(Family::Sipm) => {
                s.ascent = OptimizerConfig::sgd(0.01);
                s.schedule.ascent_iters = 1;
            }
            Method::Ncbipm(Family::Sipm) => {
                s.descent = OptimizerConfig::adam(0.1);
                s.ascent = OptimizerConfig::sgd(1.0);
                s.schedule.ascent_iters = 3;
            }
            _ => {}
        }
        s
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(lr) = o.lr {
            self.descent.lr = lr;
        }
        if let Some(lr) = o.lr_adv {
            self.ascent.lr = lr;
        }
        if let Some(t) = o.iters {
            self.schedule.iters = t;
        }
        if let Some(t) = o.iters_adv {
            self.schedule.ascent_iters = t;
        }
        if let Some(v) = o.gamma {
            self.gamma = v;
        }
        if let Some(v) = o.tau {
            self.tau = v;
        }
        if let Some(v) = o.gp_samples {
            self.gp_samples = v;
        }
        if let Some(v) = o.ensemble_size {
            self.ensemble_size = v;
        }
        if let Some(v) = o.hidden {
            self.hidden = v;
        }
        if let Some(v) = o.clip {
            self.clip = v;
        }
        if o.init_scale.is_some() {
            self.init_scale = o.init_scale;
        }
        if o.tol.is_some() {
            self.tol = o.tol;
        }
        self.best_iterate |= o.best_iterate;
        if o.raw {
            self.standardize = false;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        LoopSchedule::new(self.schedule.iters, self.schedule.ascent_iters)?;
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_owned()));
        if !(self.descent.lr > 0.0) || !(self.ascent.lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if self.gp_samples == 0 || self.ensemble_size == 0 || self.hidden == 0 {
            return bad("gp-samples, ensemble-size and hidden must be at least 1");
        }
        if !(self.clip > 0.0) || !(self.tau >= 0.0) {
            return bad("clip must be positive and tau nonnegative");
        }
        if self.init_scale.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
            return bad("init-scale must be positive");
        }
        Ok(())
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            schedule: self.schedule,
            descent: self.descent,
            ascent: self.ascent,
            tol: self.tol,
            best_iterate: self.best_iterate,
        }
    }
}

/// Optional hyperparameter overrides, as given on the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub lr: Option<f64>,
    pub lr_adv: Option<f64>,
    pub iters: Option<usize>,
    pub iters_adv: Option<usize>,
    pub gamma: Option<f64>,
    pub tau: Option<f64>,
    pub gp_samples: Option<usize>,
    pub ensemble_size: Option<usize>,
    pub hidden: Option<usize>,
    pub clip: Option<f64>,
    pub init_scale: Option<f64>,
    pub tol: Option<f64>,
    pub best_iterate: bool,
    /// Balance on the covariates as given instead of z-scores.
    pub raw: bool,
}

#[derive(Debug, Clone)]
pub struct BalanceSolution {
    pub method: Method,
    pub weights: WeightVector,
    /// Method parameters: the linear score for P-CBIPM, per-unit logits for
    /// N-CBIPM, logistic coefficients (intercept first) for GLM and CBPS, the
    /// dual vector for EB.
    pub theta: Vec<f64>,
    /// Squared IPM for the CBIPM families; l1 first-moment gap for the
    /// baselines.
    pub final_ipm: f64,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
    /// Max-norm of the defining moment equations, where the method has them.
    pub residual_norm: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum Balanced {
    Att(BalanceSolution),
    Ate {
        control: BalanceSolution,
        treated: BalanceSolution,
    },
}

impl Balanced {
    pub fn solutions(&self) -> Vec<&BalanceSolution> {
        match self {
            Balanced::Att(s) => vec![s],
            Balanced::Ate { control, treated } => vec![control, treated],
        }
    }
}

/// Runs `method` for `estimand`.
pub fn balance(ds: &Dataset, method: Method, estimand: Estimand, settings: &Settings, seed: u64) -> Result<Balanced> {
    settings.validate()?;
    let standardized;
    let scaled = if settings.standardize && method.family().is_some() {
        standardized = ds.standardized();
        &standardized
    } else {
        ds
    };
    match (method, estimand) {
        (Method::Glm, Estimand::Att) => sipw_glm(ds).map(Balanced::Att),
        (Method::Cbps, Estimand::Att) => cbps_att(ds).map(Balanced::Att),
        (Method::Eb, Estimand::Att) => eb_att(ds).map(Balanced::Att),
        (Method::Pcbipm(f), Estimand::Att) => pcbipm_att(scaled, f, settings, seed).map(Balanced::Att),
        (Method::Ncbipm(f), Estimand::Att) => ncbipm_att(scaled, f, settings, seed).map(Balanced::Att),
        (Method::Glm, Estimand::Ate) => sipw_glm_ate(ds).map(ate),
        (Method::Cbps, Estimand::Ate) => cbps_ate(ds).map(ate),
        (Method::Eb, Estimand::Ate) => eb_ate(ds).map(ate),
        (Method::Pcbipm(f), Estimand::Ate) => pcbipm_ate(scaled, f, settings, seed).map(ate),
        (Method::Ncbipm(f), Estimand::Ate) => ncbipm_ate(scaled, f, settings, seed).map(ate),
    }
}

fn ate((control, treated): (BalanceSolution, BalanceSolution)) -> Balanced {
    Balanced::Ate { control, treated }
}

fn cbipm_solution(
    gv: &GroupView,
    problem: &BalanceProblem,
    map: WeightMap,
    method: Method,
    settings: &Settings,
    seed: u64,
) -> Result<BalanceSolution> {
    let family = method.family().expect("CBIPM method");
    let fit = cbipm::fit(problem, map, family, settings, seed)?;
    let weights = WeightVector::from_group(gv, problem.side(), &fit.weights)?;
    let mut warnings = Vec::new();
    if let Method::Ncbipm(_) = method {
        let m = problem.m() as f64;
        let max = weights.max_weight();
        if max > NCBIPM_CAP / m {
            warnings.push(format!(
                "largest weight {max:.4} exceeds {NCBIPM_CAP}/n_{} = {:.4}",
                if problem.side() == Side::Control { 0 } else { 1 },
                NCBIPM_CAP / m
            ));
        }
    }
    Ok(BalanceSolution {
        method,
        weights,
        theta: fit.theta,
        final_ipm: fit.final_ipm,
        iterations: fit.loss_trace.len(),
        loss_trace: fit.loss_trace,
        seed,
        residual_norm: None,
        warnings,
    })
}

/// Derives an independent stream seed for a side of an ATE problem.
pub(crate) fn side_seed(seed: u64, side: Side) -> u64 {
    crate::seed::derive(
        seed,
        match side {
            Side::Control => 0,
            Side::Treated => 1,
        },
    )
}

/// Linear-score softmax weights over the controls, fitted against the
/// treated.
pub fn pcbipm_att(ds: &Dataset, family: Family, settings: &Settings, seed: u64) -> Result<BalanceSolution> {
    let gv = ds.groups();
    let problem = BalanceProblem::att(ds, &gv);
    let map = WeightMap::plain(MapKind::Parametric { negate: false });
    cbipm_solution(&gv, &problem, map, Method::Pcbipm(family), settings, seed)
}

/// One free logit per control unit.
pub fn ncbipm_att(ds: &Dataset, family: Family, settings: &Settings, seed: u64) -> Result<BalanceSolution> {
    let gv = ds.groups();
    let problem = BalanceProblem::att(ds, &gv);
    let map = WeightMap::plain(MapKind::Nonparametric);
    cbipm_solution(&gv, &problem, map, Method::Ncbipm(family), settings, seed)
}

/// The parametric ATE weight maps: each group gets a `1/n` floor plus the
/// other group's share spread by a softmax of `+-theta . x`.
pub fn ate_weight_map(gv: &GroupView, side: Side) -> WeightMap {
    let n = gv.n() as f64;
    let other = gv.indices(side.other()).len() as f64;
    WeightMap {
        kind: MapKind::Parametric {
            negate: side == Side::Treated,
        },
        offset: 1.0 / n,
        scale: other / n,
    }
}

/// Both sides are fitted independently against the whole sample.
pub fn pcbipm_ate(
    ds: &Dataset,
    family: Family,
    settings: &Settings,
    seed: u64,
) -> Result<(BalanceSolution, BalanceSolution)> {
    let gv = ds.groups();
    let method = Method::Pcbipm(family);
    let fit_side = |side| {
        let problem = BalanceProblem::ate(ds, &gv, side);
        cbipm_solution(
            &gv,
            &problem,
            ate_weight_map(&gv, side),
            method,
            settings,
            side_seed(seed, side),
        )
    };
    Ok((fit_side(Side::Control)?, fit_side(Side::Treated)?))
}

pub fn ncbipm_ate(
    ds: &Dataset,
    family: Family,
    settings: &Settings,
    seed: u64,
) -> Result<(BalanceSolution, BalanceSolution)> {
    let gv = ds.groups();
    let method = Method::Ncbipm(family);
    let fit_side = |side| {
        let problem = BalanceProblem::ate(ds, &gv, side);
        let map = WeightMap::plain(MapKind::Nonparametric);
        cbipm_solution(&gv, &problem, map, method, settings, side_seed(seed, side))
    };
    Ok((fit_side(Side::Control)?, fit_side(Side::Treated)?))
}

/// l1 first-moment gap of `w` against the target of `problem`.
pub(crate) fn moment_imbalance(problem: &BalanceProblem, w: &WeightVector, gv: &GroupView) -> f64 {
    linear_ipm(problem, &w.group_weights(gv))
}
