//! First-order optimizers and the alternating ascent/descent loop.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Ascent => 1.0,
            Direction::Descent => -1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(len: usize, lr: f64) -> Result<Self> {
        Self::with_moments(len, lr, Self::BETA1, Self::BETA2, Self::EPS)
    }

    pub fn with_moments(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0) || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "Adam needs lr > 0 and betas in [0, 1) (lr={lr}, beta1={beta1}, beta2={beta2})"
            )));
        }
        Ok(AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step_count: 0,
            lr,
            beta1,
            beta2,
            eps,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn second_moments(&self) -> &[f64] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], dir: Direction) -> Result<()> {
        check_shapes(self.m.len(), params, grads)?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let sign = dir.sign();
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p += sign * self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

fn check_shapes(len: usize, params: &[f64], grads: &[f64]) -> Result<()> {
    if params.len() != len || grads.len() != len {
        return Err(Error::DimensionMismatch {
            what: "optimizer parameters",
            expected: len,
            got: if params.len() != len { params.len() } else { grads.len() },
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr,
        }
    }

    pub fn build(&self, len: usize) -> Result<Optimizer> {
        match self.kind {
            OptimizerKind::Adam => Ok(Optimizer::Adam(AdamState::new(len, self.lr)?)),
            OptimizerKind::Sgd => {
                if !(self.lr > 0.0) {
                    return Err(Error::InvalidConfig(format!("SGD needs lr > 0, got {}", self.lr)));
                }
                Ok(Optimizer::Sgd { lr: self.lr, len })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { lr: f64, len: usize },
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], dir: Direction) -> Result<()> {
        match self {
            Optimizer::Adam(state) => state.step(params, grads, dir),
            Optimizer::Sgd { lr, len } => {
                check_shapes(*len, params, grads)?;
                let scale = dir.sign() * *lr;
                params.iter_mut().zip(grads).for_each(|(p, g)| *p += scale * g);
                Ok(())
            }
        }
    }
}

/// Outer iterations `T` and ascent steps per outer iteration `T_adv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopSchedule {
    pub iters: usize,
    pub ascent_iters: usize,
}

impl LoopSchedule {
    pub fn new(iters: usize, ascent_iters: usize) -> Result<Self> {
        if iters == 0 {
            return Err(Error::InvalidConfig("at least one outer iteration is required".into()));
        }
        Ok(LoopSchedule { iters, ascent_iters })
    }
}

/// A min-max problem over weight parameters `theta` and critic parameters
/// `psi`. The objective owns `psi`; the driver owns `theta`.
pub trait AdversarialObjective {
    fn psi(&self) -> &[f64];

    fn psi_mut(&mut self) -> &mut [f64];

    /// Value of the ascent objective and its gradient in `psi`.
    fn ascent(&mut self, theta: &[f64], rng: &mut dyn RngCore) -> Result<(f64, Vec<f64>)>;

    /// Value of the descent objective and its gradient in `theta`.
    fn descent(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Hook run after each ascent step, e.g. parameter clipping.
    fn after_ascent(&mut self) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub schedule: LoopSchedule,
    pub descent: OptimizerConfig,
    pub ascent: OptimizerConfig,
    /// Stop once the loss moved by less than this over the last 50 iterations.
    pub tol: Option<f64>,
    /// Return the iterate with the smallest recorded loss instead of the last.
    pub best_iterate: bool,
}

/// Window for the `tol` stopping rule.
pub const TOL_WINDOW: usize = 50;

#[derive(Debug, Clone)]
pub struct AdversarialRun {
    pub theta: Vec<f64>,
    /// Descent loss at the start of every executed outer iteration.
    pub loss_trace: Vec<f64>,
    /// Index into `loss_trace` of the returned iterate, or `None` for the
    /// iterate after the last update.
    pub returned_index: Option<usize>,
}

/// Runs `iters` rounds of (`ascent_iters` ascent steps on psi, one descent
/// step on theta).
pub fn run_adversarial<O: AdversarialObjective + ?Sized>(
    objective: &mut O,
    theta0: Vec<f64>,
    opts: &RunOptions,
    rng: &mut dyn RngCore,
) -> Result<AdversarialRun> {
    let mut theta = theta0;
    let mut descent = opts.descent.build(theta.len())?;
    let mut ascent = if opts.schedule.ascent_iters > 0 {
        Some(opts.ascent.build(objective.psi().len())?)
    } else {
        None
    };
    let mut trace = Vec::with_capacity(opts.schedule.iters);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    for it in 0..opts.schedule.iters {
        if let Some(opt) = ascent.as_mut() {
            for _ in 0..opts.schedule.ascent_iters {
                let (value, grad) = objective.ascent(&theta, rng)?;
                if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite {
                        stage: "ascent",
                        iteration: it,
                    });
                }
                opt.step(objective.psi_mut(), &grad, Direction::Ascent)?;
                objective.after_ascent();
            }
        }
        let (loss, grad) = objective.descent(&theta)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                stage: "descent",
                iteration: it,
            });
        }
        trace.push(loss);
        if opts.best_iterate && best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
            best = Some((loss, it, theta.clone()));
        }
        descent.step(&mut theta, &grad, Direction::Descent)?;

        if let Some(tol) = opts.tol {
            if trace.len() > TOL_WINDOW {
                let now = trace[trace.len() - 1];
                let then = trace[trace.len() - 1 - TOL_WINDOW];
                if (now - then).abs() < tol {
                    break;
                }
            }
        }
    }

    let (theta, returned_index) = match best {
        Some((_, idx, th)) => (th, Some(idx)),
        None => (theta, None),
    };
    Ok(AdversarialRun {
        theta,
        loss_trace: trace,
        returned_index,
    })
}
