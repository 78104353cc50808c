//! Run configuration, loaded from a flat `key = value` TOML file.
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected so typos do not silently fall back to a default.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cacla::ActorCriticConfig;
use crate::error::{Error, Result};
use crate::grasp_env::{GraspConfig, ACTION_DIM, OBS_LEN};
use crate::intrinsic::RewardScaling;
use crate::representation::RepresentationConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImaginationMode {
    None,
    Static,
    Adaptive,
}

impl std::fmt::Display for ImaginationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ImaginationMode::None => "none",
            ImaginationMode::Static => "static",
            ImaginationMode::Adaptive => "adaptive",
        })
    }
}

impl FromStr for ImaginationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ImaginationMode::None),
            "static" => Ok(ImaginationMode::Static),
            "adaptive" => Ok(ImaginationMode::Adaptive),
            other => Err(Error::Config(format!("unknown imagination mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lambda_rec: f64,
    pub lambda_critic: f64,
    /// Number of recent prediction errors averaged per region.
    pub error_window: usize,
    /// Lag, in recorded errors, of the learning-progress difference.
    pub progress_window: usize,
    pub e_max: f64,
    pub max_depth: usize,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub lr_models: f64,
    pub lr_representation: f64,
    pub batch_size: usize,
    pub pixel_capacity: usize,
    pub latent_capacity: usize,
    pub alpha: f64,
    pub beta0: f64,
    pub sigma_policy: f64,
    /// Critic and actor updates per environment step.
    pub actor_critic_steps: usize,
    /// Local-model fitting steps per environment step.
    pub model_steps: usize,
    /// Encoder/decoder updates per environment step.
    pub representation_steps: usize,
    pub episodes: usize,
    pub episode_len: usize,
    pub imagination: ImaginationMode,
    pub seed: u64,
    /// Environment steps collected before any gradient update.
    pub warmup_steps: u64,
    /// Recorded errors a region needs before it may drive imagination.
    pub imagination_warmup: u64,
    pub latent_dim: usize,
    pub hidden: usize,
    pub model_hidden: usize,
    pub intrinsic_scaling: RewardScaling,
    /// Multiplier on the scaled intrinsic reward before it joins the
    /// extrinsic one; 0 trains on extrinsic reward alone.
    pub intrinsic_weight: f64,
    /// Fit the reward heads on extrinsic plus intrinsic reward, not just
    /// extrinsic.
    pub models_use_total_reward: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 1e-3,
            lambda_rec: 0.1,
            lambda_critic: 1.0,
            error_window: 40,
            progress_window: 20,
            e_max: 6.0,
            max_depth: 7,
            lr_critic: 1e-3,
            lr_actor: 1e-4,
            lr_models: 1e-3,
            lr_representation: 1e-3,
            batch_size: 64,
            pixel_capacity: 60_000,
            latent_capacity: 200_000,
            alpha: 0.6,
            beta0: 0.4,
            sigma_policy: 0.35,
            actor_critic_steps: 4,
            model_steps: 2,
            representation_steps: 1,
            episodes: 600,
            episode_len: 50,
            imagination: ImaginationMode::Adaptive,
            seed: 0,
            warmup_steps: 500,
            imagination_warmup: crate::imagination::DEFAULT_WARMUP,
            latent_dim: 16,
            hidden: 64,
            model_hidden: 32,
            intrinsic_scaling: RewardScaling::RunningMax,
            intrinsic_weight: 1.0,
            models_use_total_reward: true,
        }
    }
}

impl TrainConfig {
    /// Per-timestep update counts used in the original large-scale runs.
    pub fn full_cadence(mut self) -> Self {
        self.actor_critic_steps = 15;
        self.model_steps = 10;
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let unit = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name}={v} must lie in [0, 1]")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("beta0", self.beta0)?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau={} must lie in (0, 1]", self.tau));
        }
        for (name, v) in [
            ("lr_critic", self.lr_critic),
            ("lr_actor", self.lr_actor),
            ("lr_models", self.lr_models),
            ("lr_representation", self.lr_representation),
            ("e_max", self.e_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name}={v} must be positive"));
            }
        }
        for (name, v) in [
            ("lambda_rec", self.lambda_rec),
            ("lambda_critic", self.lambda_critic),
            ("alpha", self.alpha),
            ("sigma_policy", self.sigma_policy),
            ("intrinsic_weight", self.intrinsic_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name}={v} must be non-negative"));
            }
        }
        for (name, v) in [
            ("error_window", self.error_window),
            ("progress_window", self.progress_window),
            ("batch_size", self.batch_size),
            ("episodes", self.episodes),
            ("episode_len", self.episode_len),
            ("latent_dim", self.latent_dim),
            ("hidden", self.hidden),
            ("model_hidden", self.model_hidden),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.pixel_capacity < self.batch_size || self.latent_capacity < self.batch_size {
            return fail("replay capacities must hold at least one batch".into());
        }
        Ok(())
    }

    pub fn env(&self) -> GraspConfig {
        GraspConfig {
            episode_len: self.episode_len,
            ..GraspConfig::default()
        }
    }

    pub fn representation(&self) -> RepresentationConfig {
        RepresentationConfig {
            obs_len: OBS_LEN,
            hidden: self.hidden,
            latent_dim: self.latent_dim,
            lr: self.lr_representation,
            lambda_rec: self.lambda_rec,
            lambda_critic: self.lambda_critic,
        }
    }

    pub fn actor_critic(&self) -> ActorCriticConfig {
        ActorCriticConfig {
            latent_dim: self.latent_dim,
            action_dim: ACTION_DIM,
            hidden: self.hidden,
            gamma: self.gamma,
            tau: self.tau,
            sigma_policy: self.sigma_policy,
            lr_actor: self.lr_actor,
            lr_critic: self.lr_critic,
        }
    }

    /// Total environment steps if every episode runs to the time limit.
    pub fn step_budget(&self) -> u64 {
        (self.episodes * self.episode_len) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = TrainConfig::from_toml_str("episodes = 3\nimagination = \"static\"\nmax_depth = 2\n").unwrap();
        assert_eq!(
            (c.episodes, c.imagination, c.max_depth),
            (3, ImaginationMode::Static, 2)
        );
        assert_eq!(c.gamma, 0.99);
    }

    #[test]
    fn round_trip() {
        let c = TrainConfig {
            seed: 9,
            ..TrainConfig::default().full_cadence()
        };
        assert_eq!(TrainConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values_and_keys() {
        assert!(TrainConfig::from_toml_str("gamma = 1.5").is_err());
        assert!(TrainConfig::from_toml_str("tau = 0.0").is_err());
        assert!(TrainConfig::from_toml_str("batch_size = 0").is_err());
        assert!(TrainConfig::from_toml_str("gama = 0.9").is_err());
        assert!(TrainConfig::from_toml_str("imagination = \"sometimes\"").is_err());
        assert!(TrainConfig::from_toml_str("intrinsic_weight = -1.0").is_err());
    }

    #[test]
    fn mode_parses() {
        for m in [
            ImaginationMode::None,
            ImaginationMode::Static,
            ImaginationMode::Adaptive,
        ] {
            assert_eq!(m.to_string().parse::<ImaginationMode>().unwrap(), m);
        }
    }
}
