//! Intrinsically motivated actor-critic learning in a learned latent space,
//! with learning-adaptive imagination rollouts.

pub mod approximator;
pub mod audit;
pub mod cacla;
pub mod config;
pub mod curves;
pub mod error;
pub mod grasp_env;
pub mod imagination;
pub mod intrinsic;
pub mod itm;
pub mod replay;
pub mod representation;
pub mod trainer;

pub use config::{ImaginationMode, TrainConfig};
pub use error::{Error, Result};
pub use trainer::{run_ablation, run_training, EpisodeMetrics, Trainer};
