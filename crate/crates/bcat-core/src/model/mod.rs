//! The backbone: patch-token embedding, decoder layers with RMS norm,
//! QK-normalized attention and SwiGLU/GeLU FFNs, block-causal masking, an
//! output head, checkpointing, and the ablation variants.

mod checkpoint;
mod config;
mod forward;
mod mask;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{Activation, MaskKind, ModelConfig, Variant};
pub use forward::{rmsnorm, ForwardOutput, KvCache, RMS_EPS};
pub use mask::{allowed, build_mask, AttentionMask};
pub use params::{decay_exempt, AttnParams, FfnParams, LayerParams, ModelParams};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),

    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),

    #[error("KV cache mismatch: expected {expected}, got {got}")]
    CacheMismatch { expected: usize, got: usize },

    #[error("sequence length {len} exceeds the position budget {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("bad model input: {0}")]
    BadInput(String),

    #[error("bad checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
