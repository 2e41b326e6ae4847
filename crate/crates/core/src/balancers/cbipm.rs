//! Weights by adversarial IPM minimization.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::discriminators::{
    linear_ipm, linear_loss_grad_w, mlp_objective, sample_interpolates, Activations, BalanceProblem, Family,
    LipschitzMlp, RbfMmd, SigmoidEnsemble,
};
use crate::error::Result;
use crate::optim::{run_adversarial, AdversarialObjective, RunOptions};

use super::weight_map::WeightMap;
use super::Settings;

enum Critic {
    Mmd(RbfMmd),
    /// Activations of the current parameters are kept between calls.
    Sipm {
        ens: SigmoidEnsemble,
        cache: Option<Activations>,
    },
    Wass {
        mlp: LipschitzMlp,
        tau: f64,
        samples: usize,
    },
    Linear,
}

pub(crate) struct CbipmObjective<'a> {
    problem: &'a BalanceProblem,
    map: WeightMap,
    critic: Critic,
}

impl<'a> CbipmObjective<'a> {
    pub(crate) fn new<R: RngCore + ?Sized>(
        problem: &'a BalanceProblem,
        map: WeightMap,
        family: Family,
        settings: &Settings,
        rng: &mut R,
    ) -> Result<Self> {
        let critic = match family {
            Family::Mmd => Critic::Mmd(RbfMmd::new(problem, settings.gamma)?),
            Family::Sipm => Critic::Sipm {
                ens: SigmoidEnsemble::random(
                    settings.ensemble_size,
                    problem.d(),
                    settings.init_scale.unwrap_or(1.0 / (problem.d() as f64).sqrt()),
                    rng,
                )?,
                cache: None,
            },
            Family::Wass => Critic::Wass {
                mlp: LipschitzMlp::random(
                    problem.d(),
                    settings.hidden,
                    settings.leaky_slope,
                    settings.clip,
                    settings.init_scale.unwrap_or(super::MLP_INIT_SCALE),
                    rng,
                )?,
                tau: settings.tau,
                samples: settings.gp_samples,
            },
            Family::Linear => Critic::Linear,
        };
        Ok(CbipmObjective { problem, map, critic })
    }

    /// Descent loss and its gradient with respect to the source weights.
    fn loss_and_grad_w(&mut self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        match &mut self.critic {
            Critic::Mmd(mmd) => mmd.value_and_grad(w),
            Critic::Sipm { ens, cache } => {
                let act = activations(ens, cache, self.problem);
                let eval = ens.evaluate_with(act, self.problem, w)?;
                let s = SigmoidEnsemble::argmax_member(&eval.per_member_loss);
                Ok((eval.per_member_loss[s], ens.member_grad_w(act, s, eval.gaps[s])))
            }
            Critic::Wass { mlp, .. } => {
                let outputs: Vec<f64> = (0..self.problem.m())
                    .map(|i| mlp.forward(self.problem.source_row(i)))
                    .collect();
                let targets: Vec<f64> = (0..self.problem.k())
                    .map(|j| mlp.forward(self.problem.target_row(j)))
                    .collect();
                let gap = crate::discriminators::gap(w, &outputs, self.problem.target_weights(), &targets);
                Ok((gap * gap, outputs.iter().map(|o| -2.0 * gap * o).collect()))
            }
            Critic::Linear => Ok(linear_loss_grad_w(self.problem, w)),
        }
    }

    /// The squared IPM estimate reported for a final weight vector.
    pub(crate) fn final_ipm(&mut self, w: &[f64]) -> Result<f64> {
        match &self.critic {
            Critic::Linear => Ok(linear_ipm(self.problem, w)),
            _ => Ok(self.loss_and_grad_w(w)?.0),
        }
    }
}

impl AdversarialObjective for CbipmObjective<'_> {
    fn psi(&self) -> &[f64] {
        match &self.critic {
            Critic::Sipm { ens, .. } => ens.params(),
            Critic::Wass { mlp, .. } => mlp.params(),
            Critic::Mmd(_) | Critic::Linear => &[],
        }
    }

    fn psi_mut(&mut self) -> &mut [f64] {
        match &mut self.critic {
            Critic::Sipm { ens, .. } => ens.params_mut(),
            Critic::Wass { mlp, .. } => mlp.params_mut(),
            Critic::Mmd(_) | Critic::Linear => &mut [],
        }
    }

    fn ascent(&mut self, theta: &[f64], rng: &mut dyn RngCore) -> Result<(f64, Vec<f64>)> {
        let w = self.map.weights(self.problem, theta);
        match &mut self.critic {
            Critic::Sipm { ens, cache } => {
                let act = activations(ens, cache, self.problem);
                let eval = ens.evaluate_with(act, self.problem, &w)?;
                Ok((eval.per_member_loss.iter().sum(), eval.flat()))
            }
            Critic::Wass { mlp, tau, samples } => {
                let xs = sample_interpolates(self.problem, *samples, rng);
                let obj = mlp_objective(mlp, self.problem, &w, &xs, *tau)?;
                Ok((obj.value, obj.grad))
            }
            Critic::Mmd(_) | Critic::Linear => Ok((0.0, Vec::new())),
        }
    }

    fn descent(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let p = self.map.softmax(self.problem, theta);
        let w = self.map.weights_from_softmax(&p);
        let (loss, grad_w) = self.loss_and_grad_w(&w)?;
        Ok((loss, self.map.pullback(self.problem, &p, &grad_w)))
    }

    fn after_ascent(&mut self) {
        if let Critic::Wass { mlp, .. } = &mut self.critic {
            mlp.clip();
        }
    }
}

/// Activations for the ensemble's current parameters, recomputed only after
/// the parameters changed.
fn activations<'c>(
    ens: &SigmoidEnsemble,
    cache: &'c mut Option<Activations>,
    problem: &BalanceProblem,
) -> &'c Activations {
    if !cache.as_ref().is_some_and(|a| a.matches(ens)) {
        *cache = Some(ens.activations(problem));
    }
    cache.as_ref().expect("cache filled above")
}

/// Result of one CBIPM optimization on a single balancing problem.
#[derive(Debug, Clone)]
pub(crate) struct CbipmFit {
    pub weights: Vec<f64>,
    pub theta: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub final_ipm: f64,
}

pub(crate) fn fit(
    problem: &BalanceProblem,
    map: WeightMap,
    family: Family,
    settings: &Settings,
    seed: u64,
) -> Result<CbipmFit> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut objective = CbipmObjective::new(problem, map, family, settings, &mut rng)?;
    let mut opts: RunOptions = settings.run_options();
    if matches!(family, Family::Mmd | Family::Linear) {
        opts.schedule.ascent_iters = 0;
    }
    let theta0 = vec![0.0; map.theta_len(problem)];
    let run = run_adversarial(&mut objective, theta0, &opts, &mut rng)?;
    let weights = map.weights(problem, &run.theta);
    let final_ipm = objective.final_ipm(&weights)?;
    Ok(CbipmFit {
        weights,
        theta: run.theta,
        loss_trace: run.loss_trace,
        final_ipm,
    })
}
