//! Continuous actor-critic learning automaton over latent states.
//!
//! The critic regresses on TD targets from a slowly tracking target critic.
//! The actor is pulled toward an explored action only on samples whose TD
//! error is positive, i.e. where that action turned out better than expected.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::approximator::{Activation, AdamState, DenseNet, GradientSet};
use crate::error::{Error, Result};
use crate::replay::LatentTransition;
use crate::representation::EncoderDecoder;

#[derive(Clone, Debug, PartialEq)]
pub struct ActorCriticConfig {
    pub latent_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
    pub gamma: f64,
    pub tau: f64,
    pub sigma_policy: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
}

impl Default for ActorCriticConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            action_dim: crate::grasp_env::ACTION_DIM,
            hidden: 64,
            gamma: 0.99,
            tau: 1e-3,
            sigma_policy: 0.35,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TdResult {
    pub delta: f64,
    pub target: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CriticReport {
    /// Importance-weighted mean squared TD error before the step.
    pub loss: f64,
    pub td_abs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ActorReport {
    /// Samples with positive TD error.
    pub qualified: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct ActorCritic {
    actor: DenseNet,
    critic: DenseNet,
    target_critic: DenseNet,
    actor_adam: AdamState,
    critic_adam: AdamState,
    pub gamma: f64,
    pub tau: f64,
    pub sigma_policy: f64,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(config: &ActorCriticConfig, rng: &mut R) -> Result<Self> {
        let actor = DenseNet::new(
            config.latent_dim,
            &[(config.hidden, Activation::Relu), (config.action_dim, Activation::Tanh)],
            rng,
        )?;
        let critic = DenseNet::new(
            config.latent_dim,
            &[(config.hidden, Activation::Relu), (1, Activation::Linear)],
            rng,
        )?;
        Self::from_parts(actor, critic, config)
    }

    pub fn from_parts(actor: DenseNet, critic: DenseNet, config: &ActorCriticConfig) -> Result<Self> {
        if critic.output_dim() != 1 {
            return Err(Error::ShapeMismatch("critic must have a single output".into()));
        }
        if actor.input_dim() != critic.input_dim() {
            return Err(Error::ShapeMismatch("actor and critic read different latents".into()));
        }
        if !(0.0..=1.0).contains(&config.gamma) || !(0.0..=1.0).contains(&config.tau) {
            return Err(Error::Config(format!(
                "gamma={} and tau={} must lie in [0, 1]",
                config.gamma, config.tau
            )));
        }
        if config.sigma_policy < 0.0 {
            return Err(Error::Config("policy standard deviation must be non-negative".into()));
        }
        Ok(Self {
            target_critic: critic.clone(),
            actor_adam: AdamState::new(&actor, config.lr_actor),
            critic_adam: AdamState::new(&critic, config.lr_critic),
            actor,
            critic,
            gamma: config.gamma,
            tau: config.tau,
            sigma_policy: config.sigma_policy,
        })
    }

    pub fn actor(&self) -> &DenseNet {
        &self.actor
    }

    pub fn critic(&self) -> &DenseNet {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut DenseNet {
        &mut self.critic
    }

    pub fn actor_mut(&mut self) -> &mut DenseNet {
        &mut self.actor
    }

    pub fn target_critic(&self) -> &DenseNet {
        &self.target_critic
    }

    pub fn target_critic_mut(&mut self) -> &mut DenseNet {
        &mut self.target_critic
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn policy_mean(&self, latent: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward(latent)
    }

    /// Gaussian exploration around the actor output, before clipping.
    pub fn explore<R: Rng + ?Sized>(&self, latent: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut a = self.policy_mean(latent)?;
        if self.sigma_policy > 0.0 {
            for v in &mut a {
                let z: f64 = rng.sample(StandardNormal);
                *v += self.sigma_policy * z;
            }
        }
        Ok(a)
    }

    /// `a ~ N(Ac(φ), σ²I)` clipped to the action box `[−1, 1]`.
    pub fn policy_sample<R: Rng + ?Sized>(&self, latent: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut a = self.explore(latent, rng)?;
        a.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        Ok(a)
    }

    pub fn value(&self, latent: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(latent)?[0])
    }

    pub fn td_error(&self, t: &LatentTransition) -> Result<TdResult> {
        let target = if t.terminal {
            t.reward
        } else {
            t.reward + self.gamma * self.target_critic.forward(&t.next_latent)?[0]
        };
        Ok(TdResult {
            delta: target - self.value(&t.latent)?,
            target,
        })
    }

    fn stack(rows: &[&[f64]], width: usize) -> Result<Array2<f64>> {
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::dims("latent batch", width, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Array2::from_shape_vec((rows.len(), width), data).expect("stacked rows"))
    }

    fn targets(&self, batch: &[&LatentTransition]) -> Result<Array1<f64>> {
        let width = self.critic.input_dim();
        let next: Vec<&[f64]> = batch.iter().map(|t| t.next_latent.as_slice()).collect();
        let next_values = self.target_critic.forward_batch(Self::stack(&next, width)?.view())?;
        Ok(batch
            .iter()
            .zip(next_values.column(0))
            .map(|(t, &v)| {
                if t.terminal {
                    t.reward
                } else {
                    t.reward + self.gamma * v
                }
            })
            .collect())
    }

    /// Importance-weighted mean of `(target − V(φ))²`, its critic gradient
    /// and the per-sample `|δ|`.
    pub fn critic_loss_and_grads(
        &self,
        batch: &[&LatentTransition],
        weights: &[f64],
    ) -> Result<(CriticReport, GradientSet)> {
        if batch.len() != weights.len() {
            return Err(Error::dims("importance weights", batch.len(), weights.len()));
        }
        if batch.is_empty() {
            return Ok((CriticReport::default(), GradientSet::zeros_like(&self.critic)));
        }
        let n = batch.len() as f64;
        let targets = self.targets(batch)?;
        let latents: Vec<&[f64]> = batch.iter().map(|t| t.latent.as_slice()).collect();
        let cache = self
            .critic
            .forward_cached(Self::stack(&latents, self.critic.input_dim())?.view())?;
        let residual = &cache.output().column(0) - &targets;
        let w = Array1::from(weights.to_vec());
        let loss = w.dot(&residual.mapv(|d| d * d)) / n;
        let d_out = (&residual * &w * (2.0 / n)).insert_axis(Axis(1));
        let grads = self.critic.param_gradient(&cache, d_out.view())?;
        let report = CriticReport {
            loss,
            td_abs: residual.iter().map(|d| d.abs()).collect(),
        };
        Ok((report, grads))
    }

    /// One Adam step on the critic along [`Self::critic_loss_and_grads`].
    pub fn critic_update(&mut self, batch: &[&LatentTransition], weights: &[f64]) -> Result<CriticReport> {
        let (report, grads) = self.critic_loss_and_grads(batch, weights)?;
        if !batch.is_empty() {
            self.critic.adam_update(&grads, &mut self.critic_adam)?;
        }
        Ok(report)
    }

    /// Mean of `‖Ac(φ) − a‖²` over the samples with positive TD error and
    /// its actor gradient; `None` when no sample qualifies.
    pub fn actor_loss_and_grads(&self, batch: &[&LatentTransition]) -> Result<Option<(ActorReport, GradientSet)>> {
        if batch.is_empty() {
            return Ok(None);
        }
        let width = self.critic.input_dim();
        let targets = self.targets(batch)?;
        let latents: Vec<&[f64]> = batch.iter().map(|t| t.latent.as_slice()).collect();
        let values = self.critic.forward_batch(Self::stack(&latents, width)?.view())?;
        let chosen: Vec<&LatentTransition> = batch
            .iter()
            .zip(targets.iter().zip(values.column(0)))
            .filter(|(_, (y, v))| *y - *v > 0.0)
            .map(|(t, _)| *t)
            .collect();
        if chosen.is_empty() {
            return Ok(None);
        }
        let k = chosen.len() as f64;
        let inputs: Vec<&[f64]> = chosen.iter().map(|t| t.latent.as_slice()).collect();
        let actions: Vec<&[f64]> = chosen.iter().map(|t| t.action.as_slice()).collect();
        let cache = self.actor.forward_cached(Self::stack(&inputs, width)?.view())?;
        let diff = cache.output() - &Self::stack(&actions, self.actor.output_dim())?;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / k;
        let grads = self.actor.param_gradient(&cache, (diff * (2.0 / k)).view())?;
        let report = ActorReport {
            qualified: chosen.len(),
            loss,
        };
        Ok(Some((report, grads)))
    }

    /// One Adam step pulling `Ac(φ)` toward the taken action on samples with
    /// positive TD error. Leaves the actor untouched when none qualifies.
    pub fn actor_update(&mut self, batch: &[&LatentTransition]) -> Result<ActorReport> {
        match self.actor_loss_and_grads(batch)? {
            None => Ok(ActorReport::default()),
            Some((report, grads)) => {
                self.actor.adam_update(&grads, &mut self.actor_adam)?;
                Ok(report)
            }
        }
    }

    /// `θ^V′ ← τ·θ^V + (1 − τ)·θ^V′`.
    pub fn soft_update_critic(&mut self) -> Result<()> {
        self.target_critic.soft_update_from(&self.critic, self.tau)
    }
}

/// Soft-updates the target critic and the target encoder at the same rate.
pub fn soft_update(ac: &mut ActorCritic, ed: &mut EncoderDecoder) -> Result<()> {
    ac.soft_update_critic()?;
    ed.soft_update(ac.tau)
}
