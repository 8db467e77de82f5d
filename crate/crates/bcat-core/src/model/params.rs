//! Learnable arrays of the backbone.
//!
//! Canonical parameter order (used by checkpoints, the optimizer, and the
//! forward pass's leaf registration) is the traversal order of
//! [`ModelParams::named_tensors`].

use super::config::{Activation, ModelConfig, Variant};
use super::ModelError;
use crate::numerics::{Element, Tensor};
use crate::rng::Rng;

const INIT_STD: f64 = 0.02;
const INIT_CUT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams<E: Element = f32> {
    /// Projections, each [D][D].
    pub wq: Tensor<E>,
    pub wk: Tensor<E>,
    pub wv: Tensor<E>,
    pub wo: Tensor<E>,
    /// Per-head RMS gains over the head dimension, [H][1][dh]; present when
    /// the config enables QK normalization.
    pub q_gain: Option<Tensor<E>>,
    pub k_gain: Option<Tensor<E>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FfnParams<E: Element = f32> {
    SwiGlu {
        gate: Tensor<E>,
        up: Tensor<E>,
        down: Tensor<E>,
    },
    Gelu {
        w_in: Tensor<E>,
        w_out: Tensor<E>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<E: Element = f32> {
    /// Temporal attention of the time-then-space variant; runs before the
    /// main (spatial/joint) attention.
    pub temporal_norm: Option<Tensor<E>>,
    pub temporal: Option<AttnParams<E>>,
    pub attn_norm: Tensor<E>,
    pub attn: AttnParams<E>,
    pub ffn_norm: Tensor<E>,
    pub ffn: FfnParams<E>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<E: Element = f32> {
    pub config: ModelConfig,
    /// Patch embedding [patch_dim][D] plus bias [D].
    pub embed_w: Tensor<E>,
    pub embed_b: Tensor<E>,
    /// Learned absolute position embeddings [t_max * N][D].
    pub pos_embed: Tensor<E>,
    pub layers: Vec<LayerParams<E>>,
    pub final_norm: Tensor<E>,
    /// Output head [D][patch_dim], bias-free.
    pub head_w: Tensor<E>,
}

fn trunc_normal<E: Element>(rng: &mut Rng, shape: Vec<usize>) -> Tensor<E> {
    Tensor::from_fn(shape, |_| E::from_f64(rng.truncated_normal(INIT_STD, INIT_CUT)))
}

fn attn_init<E: Element>(rng: &mut Rng, d: usize, heads: usize, qk_norm: bool) -> AttnParams<E> {
    let dh = d / heads;
    let gain = || Some(Tensor::full(vec![heads, 1, dh], E::ONE));
    AttnParams {
        wq: trunc_normal(rng, vec![d, d]),
        wk: trunc_normal(rng, vec![d, d]),
        wv: trunc_normal(rng, vec![d, d]),
        wo: trunc_normal(rng, vec![d, d]),
        q_gain: if qk_norm { gain() } else { None },
        k_gain: if qk_norm { gain() } else { None },
    }
}

impl<E: Element> ModelParams<E> {
    /// Deterministic init: truncated normal (std 0.02, cut at 2 sigma) for
    /// projections and position embeddings, zeros for biases, ones for norm
    /// gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<ModelParams<E>, ModelError> {
        config.validate()?;
        let mut rng = Rng::seed_from(seed);
        let d = config.feature_dim;
        let pd = config.patch_dim();
        let h = config.ffn_hidden();

        let embed_w = trunc_normal(&mut rng, vec![pd, d]);
        let embed_b = Tensor::zeros(vec![d]);
        let pos_embed = trunc_normal(&mut rng, vec![config.max_seq_len(), d]);

        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let (temporal_norm, temporal) = if config.variant == Variant::TimeThenSpace {
                (
                    Some(Tensor::full(vec![d], E::ONE)),
                    Some(attn_init(&mut rng, d, config.n_heads, config.qk_norm)),
                )
            } else {
                (None, None)
            };
            let ffn = match config.activation {
                Activation::Swiglu => FfnParams::SwiGlu {
                    gate: trunc_normal(&mut rng, vec![d, h]),
                    up: trunc_normal(&mut rng, vec![d, h]),
                    down: trunc_normal(&mut rng, vec![h, d]),
                },
                Activation::Gelu => FfnParams::Gelu {
                    w_in: trunc_normal(&mut rng, vec![d, h]),
                    w_out: trunc_normal(&mut rng, vec![h, d]),
                },
            };
            layers.push(LayerParams {
                temporal_norm,
                temporal,
                attn_norm: Tensor::full(vec![d], E::ONE),
                attn: attn_init(&mut rng, d, config.n_heads, config.qk_norm),
                ffn_norm: Tensor::full(vec![d], E::ONE),
                ffn,
            });
        }

        Ok(ModelParams {
            config: config.clone(),
            embed_w,
            embed_b,
            pos_embed,
            layers,
            final_norm: Tensor::full(vec![d], E::ONE),
            head_w: trunc_normal(&mut rng, vec![d, pd]),
        })
    }

    /// All tensors in canonical order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<E>)> {
        fn push_attn<'a, E: Element>(
            out: &mut Vec<(String, &'a Tensor<E>)>,
            i: usize,
            tag: &str,
            a: &'a AttnParams<E>,
        ) {
            out.push((format!("layers.{i}.{tag}.wq"), &a.wq));
            out.push((format!("layers.{i}.{tag}.wk"), &a.wk));
            out.push((format!("layers.{i}.{tag}.wv"), &a.wv));
            out.push((format!("layers.{i}.{tag}.wo"), &a.wo));
            if let Some(g) = &a.q_gain {
                out.push((format!("layers.{i}.{tag}.q_gain"), g));
            }
            if let Some(g) = &a.k_gain {
                out.push((format!("layers.{i}.{tag}.k_gain"), g));
            }
        }
        let mut out: Vec<(String, &Tensor<E>)> = vec![
            ("embed.w".into(), &self.embed_w),
            ("embed.b".into(), &self.embed_b),
            ("pos_embed".into(), &self.pos_embed),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            if let (Some(norm), Some(t)) = (&layer.temporal_norm, &layer.temporal) {
                out.push((format!("layers.{i}.temporal_norm"), norm));
                push_attn(&mut out, i, "temporal", t);
            }
            out.push((format!("layers.{i}.attn_norm"), &layer.attn_norm));
            push_attn(&mut out, i, "attn", &layer.attn);
            out.push((format!("layers.{i}.ffn_norm"), &layer.ffn_norm));
            match &layer.ffn {
                FfnParams::SwiGlu { gate, up, down } => {
                    out.push((format!("layers.{i}.ffn.gate"), gate));
                    out.push((format!("layers.{i}.ffn.up"), up));
                    out.push((format!("layers.{i}.ffn.down"), down));
                }
                FfnParams::Gelu { w_in, w_out } => {
                    out.push((format!("layers.{i}.ffn.w_in"), w_in));
                    out.push((format!("layers.{i}.ffn.w_out"), w_out));
                }
            }
        }
        out.push(("final_norm".into(), &self.final_norm));
        out.push(("head.w".into(), &self.head_w));
        out
    }

    /// Mutable view in the same canonical order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out: Vec<(String, &mut Tensor<E>)> = vec![
            ("embed.w".into(), &mut self.embed_w),
            ("embed.b".into(), &mut self.embed_b),
            ("pos_embed".into(), &mut self.pos_embed),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let (Some(norm), Some(t)) = (&mut layer.temporal_norm, &mut layer.temporal) {
                out.push((format!("layers.{i}.temporal_norm"), norm));
                out.push((format!("layers.{i}.temporal.wq"), &mut t.wq));
                out.push((format!("layers.{i}.temporal.wk"), &mut t.wk));
                out.push((format!("layers.{i}.temporal.wv"), &mut t.wv));
                out.push((format!("layers.{i}.temporal.wo"), &mut t.wo));
                if let Some(g) = &mut t.q_gain {
                    out.push((format!("layers.{i}.temporal.q_gain"), g));
                }
                if let Some(g) = &mut t.k_gain {
                    out.push((format!("layers.{i}.temporal.k_gain"), g));
                }
            }
            out.push((format!("layers.{i}.attn_norm"), &mut layer.attn_norm));
            out.push((format!("layers.{i}.attn.wq"), &mut layer.attn.wq));
            out.push((format!("layers.{i}.attn.wk"), &mut layer.attn.wk));
            out.push((format!("layers.{i}.attn.wv"), &mut layer.attn.wv));
            out.push((format!("layers.{i}.attn.wo"), &mut layer.attn.wo));
            if let Some(g) = &mut layer.attn.q_gain {
                out.push((format!("layers.{i}.attn.q_gain"), g));
            }
            if let Some(g) = &mut layer.attn.k_gain {
                out.push((format!("layers.{i}.attn.k_gain"), g));
            }
            out.push((format!("layers.{i}.ffn_norm"), &mut layer.ffn_norm));
            match &mut layer.ffn {
                FfnParams::SwiGlu { gate, up, down } => {
                    out.push((format!("layers.{i}.ffn.gate"), gate));
                    out.push((format!("layers.{i}.ffn.up"), up));
                    out.push((format!("layers.{i}.ffn.down"), down));
                }
                FfnParams::Gelu { w_in, w_out } => {
                    out.push((format!("layers.{i}.ffn.w_in"), w_in));
                    out.push((format!("layers.{i}.ffn.w_out"), w_out));
                }
            }
        }
        out.push(("final_norm".into(), &mut self.final_norm));
        out.push(("head.w".into(), &mut self.head_w));
        out
    }

    pub fn n_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.all_finite())
    }

    /// Convert storage precision (used to run gradient checks at f64).
    pub fn cast<F: Element>(&self) -> ModelParams<F> {
        let mut out = ModelParams::<F>::init(&self.config, 0).expect("same config");
        let src = self.named_tensors();
        for ((_, dst), (_, s)) in out.named_tensors_mut().into_iter().zip(src) {
            *dst = s.cast();
        }
        out
    }
}

/// Whether a parameter is exempt from weight decay (norm gains and biases).
pub fn decay_exempt(name: &str) -> bool {
    name.ends_with(".b") || name.ends_with("_norm") || name.ends_with("_gain") || name == "final_norm"
}
