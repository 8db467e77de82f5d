//! Teacher-forced next-frame training: normalized MSE over supervised
//! positions, AdamW with decoupled weight decay, warmup-stable-decay
//! schedule, deterministic data order, CSV metrics, checkpointing.

mod data;
mod loss;
mod optimizer;
mod schedule;
mod trainer;

pub use data::{conform_trajectory, prepare_example, Dataset, TrainingExample};
pub use loss::{channel_mask, sequence_loss, Alignment};
pub use optimizer::{adamw_step, clip_gradients, GradSet, OptState};
pub use schedule::wsd_lr;
pub use trainer::{train, TrainOutput};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),

    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),

    #[error(transparent)]
    Data(#[from] crate::dataio::DataError),

    #[error(transparent)]
    Gen(#[from] crate::datagen::GenError),

    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),

    #[error("non-finite gradient for {name} at step {step}; step rejected")]
    NonFiniteGradient { name: String, step: usize },

    #[error("numeric failure at step {step}: {detail} (last good checkpoint: {last_checkpoint:?})")]
    NumericFailure {
        step: usize,
        detail: String,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("invalid training config: {0}")]
    BadConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Optimizer and schedule hyperparameters. The input-window and horizon
/// lengths live on [`ModelConfig`](crate::model::ModelConfig) to keep a
/// single source of truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub decay_frac: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Steps between checkpoints (the final step always checkpoints).
    pub checkpoint_every: usize,
    /// Random start offsets for over-length trajectories; off by default so
    /// runs are reproducible from the seed alone.
    pub random_crop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps_opt: 1e-8,
            batch_size: 4,
            total_steps: 2000,
            warmup_frac: 0.05,
            decay_frac: 0.10,
            grad_clip: 1.0,
            seed: 0,
            checkpoint_every: 500,
            random_crop: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.total_steps == 0 {
            return Err(TrainError::BadConfig("total_steps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be positive".into()));
        }
        if self.warmup_frac < 0.0 || self.decay_frac < 0.0 || self.warmup_frac + self.decay_frac > 1.0 {
            return Err(TrainError::BadConfig(format!(
                "warmup_frac {} + decay_frac {} must stay within [0, 1]",
                self.warmup_frac, self.decay_frac
            )));
        }
        if self.base_lr <= 0.0 {
            return Err(TrainError::BadConfig("base_lr must be positive".into()));
        }
        Ok(())
    }
}
