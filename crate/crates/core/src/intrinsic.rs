//! Per-region forward models, prediction-error statistics and the
//! learning-progress intrinsic reward.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::{Activation, AdamState, DenseNet, GradientSet};
use crate::error::{Error, Result};
use crate::itm::{squared_distance, ItmMap, NodeSummary};

/// Joint next-latent and reward predictor for one map region.
///
/// A tanh trunk over `latent ⊕ action` feeds a linear output layer whose
/// first `latent_dim` units are the next-latent head and whose last unit is
/// the reward head. Both heads read the same hidden activation.
#[derive(Clone, Debug)]
pub struct LocalModelPair {
    net: DenseNet,
    adam: AdamState,
    latent_dim: usize,
    action_dim: usize,
}

impl LocalModelPair {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        action_dim: usize,
        hidden: usize,
        lr: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let net = DenseNet::new(
            latent_dim + action_dim,
            &[(hidden, Activation::Tanh), (latent_dim + 1, Activation::Linear)],
            rng,
        )?;
        let adam = AdamState::new(&net, lr);
        Ok(Self {
            net,
            adam,
            latent_dim,
            action_dim,
        })
    }

    /// Zeroes both output heads, so every prediction is exactly zero.
    pub fn with_zero_heads(mut self) -> Self {
        let out = self.net.layers_mut().last_mut().unwrap();
        out.weights.fill(0.0);
        out.bias.fill(0.0);
        self
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    fn input(&self, latent: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if latent.len() != self.latent_dim {
            return Err(Error::dims("local model latent", self.latent_dim, latent.len()));
        }
        if action.len() != self.action_dim {
            return Err(Error::dims("local model action", self.action_dim, action.len()));
        }
        Ok(latent.iter().chain(action).copied().collect())
    }

    /// Predicted next latent and reward from one trunk evaluation.
    pub fn predict(&self, latent: &[f64], action: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut out = self.net.forward(&self.input(latent, action)?)?;
        let reward = out.pop().unwrap();
        Ok((out, reward))
    }

    /// `‖M(φ,a) − φ′‖² + (R(φ,a) − r)²` and its gradient.
    pub fn loss_and_grads(
        &self,
        latent: &[f64],
        action: &[f64],
        reward: f64,
        next_latent: &[f64],
    ) -> Result<(f64, GradientSet)> {
        if next_latent.len() != self.latent_dim {
            return Err(Error::dims("local model target", self.latent_dim, next_latent.len()));
        }
        let target: Vec<f64> = next_latent.iter().copied().chain(std::iter::once(reward)).collect();
        self.net.mse_and_grad(&self.input(latent, action)?, &target)
    }

    pub fn prediction_error(&self, latent: &[f64], action: &[f64], reward: f64, next_latent: &[f64]) -> Result<f64> {
        let (next, r) = self.predict(latent, action)?;
        if next_latent.len() != self.latent_dim {
            return Err(Error::dims("local model target", self.latent_dim, next_latent.len()));
        }
        Ok(squared_distance(&next, next_latent) + (r - reward) * (r - reward))
    }

    pub fn fit_step(&mut self, latent: &[f64], action: &[f64], reward: f64, next_latent: &[f64]) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(latent, action, reward, next_latent)?;
        self.net.adam_update(&grads, &mut self.adam)?;
        Ok(loss)
    }
}

/// Recent prediction errors of one region and the statistics derived
/// from them.
#[derive(Clone, Debug)]
pub struct NodeStats {
    error_window: usize,
    progress_window: usize,
    errors: VecDeque<f64>,
    /// Moving averages after each push; holds `progress_window + 1` values
    /// so the one recorded `progress_window` pushes ago is available.
    averages: VecDeque<f64>,
    recorded: u64,
}

impl NodeStats {
    pub fn new(error_window: usize, progress_window: usize) -> Self {
        let error_window = error_window.max(1);
        let progress_window = progress_window.max(1);
        Self {
            error_window,
            progress_window,
            errors: VecDeque::with_capacity(error_window),
            averages: VecDeque::with_capacity(progress_window + 1),
            recorded: 0,
        }
    }

    pub fn push(&mut self, error: f64) {
        if self.errors.len() == self.error_window {
            self.errors.pop_front();
        }
        self.errors.push_back(error.max(0.0));
        let avg = self.moving_average();
        if self.averages.len() == self.progress_window + 1 {
            self.averages.pop_front();
        }
        self.averages.push_back(avg);
        self.recorded += 1;
    }

    /// Number of errors ever pushed.
    pub fn recorded(&self) -> u64 {
        self.recorded
    }

    pub fn errors(&self) -> impl Iterator<Item = &f64> + '_ {
        self.errors.iter()
    }

    /// Mean of the retained errors; 0 before any error is recorded.
    pub fn moving_average(&self) -> f64 {
        if self.errors.is_empty() {
            0.0
        } else {
            self.errors.iter().sum::<f64>() / self.errors.len() as f64
        }
    }

    /// `|⟨e⟩_now − ⟨e⟩_{W pushes ago}|`, or 0 while that history is missing.
    pub fn learning_progress(&self) -> f64 {
        if self.averages.len() <= self.progress_window {
            return 0.0;
        }
        let now = *self.averages.back().unwrap();
        let then = self.averages[self.averages.len() - 1 - self.progress_window];
        (now - then).abs()
    }

    /// Largest moving average among the last `W` recorded.
    pub fn recent_max_average(&self) -> f64 {
        self.averages
            .iter()
            .rev()
            .take(self.progress_window)
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn summary(&self) -> NodeSummary {
        NodeSummary {
            mean_error: self.moving_average(),
            learning_progress: self.learning_progress(),
            updates: self.recorded,
        }
    }
}

/// Pushes the pre-update prediction error of `pair` on the transition into
/// `stats`, then fits the pair for `steps` Adam steps. Returns that error.
pub fn train_local(
    pair: &mut LocalModelPair,
    stats: &mut NodeStats,
    latent: &[f64],
    action: &[f64],
    reward: f64,
    next_latent: &[f64],
    steps: usize,
) -> Result<f64> {
    let error = pair.prediction_error(latent, action, reward, next_latent)?;
    for _ in 0..steps {
        pair.fit_step(latent, action, reward, next_latent)?;
    }
    stats.push(error);
    Ok(error)
}

/// Everything a map node owns during training.
#[derive(Clone, Debug)]
pub struct Region {
    pub models: LocalModelPair,
    pub stats: NodeStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScaling {
    /// Divide by the largest raw reward seen so far, then map `[0,1]` onto
    /// `[−1,1]`.
    RunningMax,
    /// Clamp the raw reward to `[0,1]`, then map onto `[−1,1]`.
    Clamp,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntrinsicSample {
    pub learning_progress: f64,
    pub perception_error: f64,
    pub raw: f64,
    pub scaled: f64,
}

#[derive(Clone, Debug)]
pub struct IntrinsicReward {
    scaling: RewardScaling,
    running_max: f64,
}

impl IntrinsicReward {
    pub fn new(scaling: RewardScaling) -> Self {
        Self {
            scaling,
            running_max: 0.0,
        }
    }

    pub fn running_max(&self) -> f64 {
        self.running_max
    }

    /// Raw reward `LP + ‖φ′ − w_m‖²` (m nearest to φ′) and its scaled form.
    pub fn compute<P>(
        &mut self,
        learning_progress: f64,
        next_latent: &[f64],
        map: &ItmMap<P>,
    ) -> Result<IntrinsicSample> {
        let m = map.nearest(next_latent)?;
        let perception_error = squared_distance(next_latent, &map.node(m).unwrap().weight);
        let raw = learning_progress + perception_error;
        let unit = match self.scaling {
            RewardScaling::RunningMax => {
                self.running_max = self.running_max.max(raw);
                if self.running_max > 0.0 {
                    (raw / self.running_max).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            }
            RewardScaling::Clamp => raw.clamp(0.0, 1.0),
        };
        Ok(IntrinsicSample {
            learning_progress,
            perception_error,
            raw,
            scaled: 2.0 * unit - 1.0,
        })
    }
}
