//! Backbone hyperparameters.

use super::ModelError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Swiglu,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    BlockCausal,
    Causal,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Next-frame prediction with a block-causal mask.
    Bcat,
    /// Next-token prediction with a plain causal mask.
    NextToken,
    /// Divided attention: causal over time per patch, then full over patches
    /// per frame.
    TimeThenSpace,
    /// Direct mapping of the input window to the horizon in one pass with
    /// full attention.
    VitDirect,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Bcat => "bcat",
            Variant::NextToken => "next_token",
            Variant::TimeThenSpace => "time_then_space",
            Variant::VitDirect => "vit_direct",
        }
    }
}

/// Round to the nearest multiple of 64 (ties away from zero).
fn round_to_64(x: f64) -> usize {
    ((x / 64.0).round() as usize) * 64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature dimension D.
    pub feature_dim: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Patch size P (square patches).
    pub patch_size: usize,
    /// Spatial resolution R (square frames).
    pub resolution: usize,
    /// Input window length T0.
    pub t_input: usize,
    /// Prediction horizon T.
    pub t_horizon: usize,
    /// Channel count after zero padding.
    pub channels: usize,
    /// FFN hidden width; None derives it from the activation
    /// (SwiGLU: (8/3)*D rounded to a multiple of 64, GeLU: 4*D).
    pub ffn_hidden: Option<usize>,
    pub activation: Activation,
    pub qk_norm: bool,
    pub mask_kind: MaskKind,
    pub variant: Variant,
    /// Carried for config compatibility; only 0 is supported.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::tiny()
    }
}

impl ModelConfig {
    /// Reference scale: the published 156M-parameter configuration.
    pub fn reference() -> ModelConfig {
        ModelConfig {
            feature_dim: 1024,
            n_heads: 8,
            n_layers: 12,
            patch_size: 8,
            resolution: 128,
            t_input: 10,
            t_horizon: 10,
            channels: 4,
            ffn_hidden: None,
            activation: Activation::Swiglu,
            qk_norm: true,
            mask_kind: MaskKind::BlockCausal,
            variant: Variant::Bcat,
            dropout: 0.0,
        }
    }

    /// Desk-scale config used by the training smoke tests and CLI defaults.
    pub fn tiny() -> ModelConfig {
        ModelConfig {
            feature_dim: 64,
            n_heads: 8,
            n_layers: 2,
            patch_size: 8,
            resolution: 32,
            ..ModelConfig::reference()
        }
    }

    /// Frames the position table covers: T0 + T.
    pub fn t_max(&self) -> usize {
        self.t_input + self.t_horizon
    }

    /// Tokens per frame N = (R/P)^2.
    pub fn n_patches(&self) -> usize {
        let side = self.resolution / self.patch_size;
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn max_seq_len(&self) -> usize {
        self.t_max() * self.n_patches()
    }

    pub fn head_dim(&self) -> usize {
        self.feature_dim / self.n_heads
    }

    /// Resolved FFN hidden width.
    pub fn ffn_hidden(&self) -> usize {
        match self.ffn_hidden {
            Some(h) => h,
            None => match self.activation {
                Activation::Swiglu => round_to_64(8.0 / 3.0 * self.feature_dim as f64),
                Activation::Gelu => 4 * self.feature_dim,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::BadConfig(msg));
        if self.feature_dim == 0 || self.n_heads == 0 || self.feature_dim % self.n_heads != 0 {
            return fail(format!(
                "feature_dim {} must be a positive multiple of n_heads {}",
                self.feature_dim, self.n_heads
            ));
        }
        if self.n_layers == 0 {
            return fail("n_layers must be positive".into());
        }
        if self.patch_size == 0 || self.resolution % self.patch_size != 0 {
            return fail(format!(
                "patch_size {} must divide resolution {}",
                self.patch_size, self.resolution
            ));
        }
        if self.t_input == 0 || self.t_horizon == 0 {
            return fail("t_input and t_horizon must be positive".into());
        }
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        if self.ffn_hidden() == 0 {
            return fail("ffn hidden width resolved to zero".into());
        }
        if self.dropout != 0.0 {
            return fail(format!("dropout {} is not supported; use 0", self.dropout));
        }
        match self.variant {
            Variant::Bcat | Variant::TimeThenSpace => {
                if self.mask_kind == MaskKind::Full {
                    return fail("a full mask leaks future frames into next-frame prediction".into());
                }
            }
            Variant::NextToken => {
                if self.mask_kind != MaskKind::Causal {
                    return fail("next_token alignment requires the causal mask".into());
                }
            }
            Variant::VitDirect => {
                if self.mask_kind != MaskKind::Full {
                    return fail("vit_direct maps the window in one pass and needs the full mask".into());
                }
                if self.t_horizon > self.t_input {
                    return fail(format!(
                        "vit_direct reads predictions off the {} input positions; t_horizon {} exceeds that",
                        self.t_input, self.t_horizon
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_ffn_width_is_2752() {
        assert_eq!(ModelConfig::reference().ffn_hidden(), 2752);
    }

    #[test]
    fn gelu_ffn_width_is_4x() {
        let cfg = ModelConfig { activation: Activation::Gelu, ..ModelConfig::reference() };
        assert_eq!(cfg.ffn_hidden(), 4096);
    }

    #[test]
    fn reference_sequence_length() {
        assert_eq!(ModelConfig::reference().max_seq_len(), 5120);
    }

    #[test]
    fn validate_rejects_bad_combos() {
        let mut cfg = ModelConfig::tiny();
        cfg.variant = Variant::NextToken;
        assert!(cfg.validate().is_err(), "next_token with block mask");
        cfg.mask_kind = MaskKind::Causal;
        cfg.validate().unwrap();

        let mut cfg = ModelConfig::tiny();
        cfg.mask_kind = MaskKind::Full;
        assert!(cfg.validate().is_err(), "bcat with full mask");

        let mut cfg = ModelConfig::tiny();
        cfg.n_heads = 7;
        assert!(cfg.validate().is_err(), "indivisible heads");
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = ModelConfig::tiny();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
