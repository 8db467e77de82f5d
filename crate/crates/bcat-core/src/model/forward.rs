//! Backbone forward pass over recorded graph ops.
//!
//! Pre-norm residual layout per layer: x + Attn(RMS(x)), then
//! x + FFN(RMS(x)), with a final RMS norm before the output head. The
//! time-then-space variant inserts a causal temporal attention (per patch)
//! ahead of the spatial one. Gradients come from `Graph::backward` over the
//! leaf ids this pass returns.

use super::config::{MaskKind, Variant};
use super::mask::AttentionMask;
use super::params::{AttnParams, FfnParams, ModelParams};
use super::ModelError;
use crate::numerics::{Element, Graph, NumericsError, Tensor, TensorId};

/// Epsilon inside every RMS normalization.
pub const RMS_EPS: f64 = 1e-6;

/// x * gain / sqrt(mean(x^2, last axis) + eps); no mean subtraction.
pub fn rmsnorm<E: Element>(
    g: &mut Graph<E>,
    x: TensorId,
    gain: TensorId,
) -> Result<TensorId, NumericsError> {
    let last = g.value(x).rank() - 1;
    let sq = g.mul(x, x)?;
    let ms = g.mean(sq, &[last], true)?;
    let stabilized = g.add_const(ms, RMS_EPS)?;
    let denom = g.sqrt(stabilized)?;
    let normed = g.div(x, denom)?;
    g.mul(normed, gain)
}

/// Per-layer cached keys/values, each `[H][len][dh]`, post QK-norm.
#[derive(Debug, Clone)]
pub struct KvCache<E: Element = f32> {
    layers: Vec<Option<(Tensor<E>, Tensor<E>)>>,
    len: usize,
}

impl<E: Element> KvCache<E> {
    pub fn new(n_layers: usize) -> Self {
        KvCache { layers: vec![None; n_layers], len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// A completed forward pass: the graph (holding all values), the output
/// node `[S_new][patch_dim]`, and the leaf id of every parameter.
pub struct ForwardOutput<E: Element = f32> {
    pub graph: Graph<E>,
    pub output: TensorId,
    pub param_ids: Vec<(String, TensorId)>,
}

impl<E: Element> ForwardOutput<E> {
    pub fn output_tokens(&self) -> &Tensor<E> {
        self.graph.value(self.output)
    }
}

struct ParamReg {
    track: bool,
    bound: Vec<(String, TensorId)>,
}

impl ParamReg {
    fn leaf<E: Element>(&mut self, g: &mut Graph<E>, name: String, t: &Tensor<E>) -> TensorId {
        let id = g.leaf(t.clone().with_grad(self.track));
        self.bound.push((name, id));
        id
    }
}

struct AttnIds {
    wq: TensorId,
    wk: TensorId,
    wv: TensorId,
    wo: TensorId,
    q_gain: Option<TensorId>,
    k_gain: Option<TensorId>,
}

fn register_attn<E: Element>(
    reg: &mut ParamReg,
    g: &mut Graph<E>,
    prefix: &str,
    a: &AttnParams<E>,
) -> AttnIds {
    AttnIds {
        wq: reg.leaf(g, format!("{prefix}.wq"), &a.wq),
        wk: reg.leaf(g, format!("{prefix}.wk"), &a.wk),
        wv: reg.leaf(g, format!("{prefix}.wv"), &a.wv),
        wo: reg.leaf(g, format!("{prefix}.wo"), &a.wo),
        q_gain: a.q_gain.as_ref().map(|t| reg.leaf(g, format!("{prefix}.q_gain"), t)),
        k_gain: a.k_gain.as_ref().map(|t| reg.leaf(g, format!("{prefix}.k_gain"), t)),
    }
}

enum FfnIds {
    SwiGlu { gate: TensorId, up: TensorId, down: TensorId },
    Gelu { w_in: TensorId, w_out: TensorId },
}

fn register_ffn<E: Element>(
    reg: &mut ParamReg,
    g: &mut Graph<E>,
    prefix: &str,
    f: &FfnParams<E>,
) -> FfnIds {
    match f {
        FfnParams::SwiGlu { gate, up, down } => FfnIds::SwiGlu {
            gate: reg.leaf(g, format!("{prefix}.gate"), gate),
            up: reg.leaf(g, format!("{prefix}.up"), up),
            down: reg.leaf(g, format!("{prefix}.down"), down),
        },
        FfnParams::Gelu { w_in, w_out } => FfnIds::Gelu {
            w_in: reg.leaf(g, format!("{prefix}.w_in"), w_in),
            w_out: reg.leaf(g, format!("{prefix}.w_out"), w_out),
        },
    }
}

/// SwiGLU: down(silu(gate(x)) * up(x)); GeLU: w_out(gelu(w_in(x))).
fn ffn<E: Element>(g: &mut Graph<E>, x: TensorId, ids: &FfnIds) -> Result<TensorId, NumericsError> {
    match ids {
        FfnIds::SwiGlu { gate, up, down } => {
            let gated = g.matmul(x, *gate)?;
            let act = g.silu(gated)?;
            let lifted = g.matmul(x, *up)?;
            let prod = g.mul(act, lifted)?;
            g.matmul(prod, *down)
        }
        FfnIds::Gelu { w_in, w_out } => {
            let hidden = g.matmul(x, *w_in)?;
            let act = g.gelu(hidden)?;
            g.matmul(act, *w_out)
        }
    }
}

/// Split features into heads: [.., L, D] -> [.., H, L, dh].
fn to_heads<E: Element>(
    g: &mut Graph<E>,
    x: TensorId,
    heads: usize,
    head_dim: usize,
) -> Result<TensorId, NumericsError> {
    let shape = g.value(x).shape().to_vec();
    let rank = shape.len();
    let mut with_heads = shape[..rank - 1].to_vec();
    with_heads.push(heads);
    with_heads.push(head_dim);
    let r = g.reshape(x, with_heads)?;
    let new_rank = rank + 1;
    let mut perm: Vec<usize> = (0..new_rank).collect();
    perm.swap(new_rank - 3, new_rank - 2); // [.., L, H, dh] -> [.., H, L, dh]
    g.permute(r, &perm)
}

/// Inverse of [`to_heads`]: [.., H, L, dh] -> [.., L, D].
fn from_heads<E: Element>(g: &mut Graph<E>, x: TensorId) -> Result<TensorId, NumericsError> {
    let shape = g.value(x).shape().to_vec();
    let rank = shape.len();
    let mut perm: Vec<usize> = (0..rank).collect();
    perm.swap(rank - 3, rank - 2);
    let p = g.permute(x, &perm)?;
    let mut merged = shape[..rank - 3].to_vec();
    merged.push(shape[rank - 2]);
    merged.push(shape[rank - 3] * shape[rank - 1]);
    g.reshape(p, merged)
}

/// Per-head RMS normalization with learnable gain over the head dimension.
fn qk_normalize<E: Element>(
    g: &mut Graph<E>,
    x: TensorId,
    gain: Option<TensorId>,
) -> Result<TensorId, NumericsError> {
    match gain {
        Some(gid) => rmsnorm(g, x, gid),
        None => Ok(x),
    }
}

/// Scaled dot-product attention over already-normed input.
///
/// `x` is `[L, D]` (joint path, optionally KV-cached) or `[B, L, D]`
/// (batched path, no cache). `mask` is an additive tensor broadcastable to
/// the score shape, or None for full attention. Cached keys/values are
/// stored after QK normalization, so cached and uncached paths share the
/// same score arithmetic.
#[allow(clippy::too_many_arguments)]
fn attention<E: Element>(
    g: &mut Graph<E>,
    x: TensorId,
    ids: &AttnIds,
    heads: usize,
    head_dim: usize,
    mask: Option<TensorId>,
    cache_entry: Option<&mut Option<(Tensor<E>, Tensor<E>)>>,
) -> Result<TensorId, NumericsError> {
    let q_lin = g.matmul(x, ids.wq)?;
    let k_lin = g.matmul(x, ids.wk)?;
    let v_lin = g.matmul(x, ids.wv)?;
    let q = to_heads(g, q_lin, heads, head_dim)?;
    let k_new = to_heads(g, k_lin, heads, head_dim)?;
    let v_new = to_heads(g, v_lin, heads, head_dim)?;
    let q = qk_normalize(g, q, ids.q_gain)?;
    let k_new = qk_normalize(g, k_new, ids.k_gain)?;

    let (k_all, v_all) = match cache_entry {
        Some(entry) => {
            let (k_all, v_all) = match entry.take() {
                Some((k_prev, v_prev)) => {
                    let kp = g.constant(k_prev);
                    let vp = g.constant(v_prev);
                    let axis = g.value(k_new).rank() - 2;
                    (g.concat(&[kp, k_new], axis)?, g.concat(&[vp, v_new], axis)?)
                }
                None => (k_new, v_new),
            };
            *entry = Some((g.value(k_all).clone(), g.value(v_all).clone()));
            (k_all, v_all)
        }
        None => (k_new, v_new),
    };

    let rank = g.value(k_all).rank();
    let mut perm: Vec<usize> = (0..rank).collect();
    perm.swap(rank - 2, rank - 1);
    let k_t = g.permute(k_all, &perm)?;
    let scores = g.matmul(q, k_t)?;
    let scaled = g.scale(scores, 1.0 / (head_dim as f64).sqrt())?;
    let weights = g.softmax(scaled, mask)?;
    let ctx = g.matmul(weights, v_all)?;
    let merged = from_heads(g, ctx)?;
    g.matmul(merged, ids.wo)
}

impl<E: Element> ModelParams<E> {
    /// Run the backbone over `tokens` `[S_new][patch_dim]` starting at
    /// global position `start_pos` (must equal the cache length when a cache
    /// is supplied). Output token s is the prediction for input token
    /// s + N (bcat) or s + 1 (next_token); vit_direct maps the input window
    /// to the horizon in one pass.
    pub fn forward(
        &self,
        tokens: &Tensor<E>,
        start_pos: usize,
        track_grads: bool,
        mut cache: Option<&mut KvCache<E>>,
    ) -> Result<ForwardOutput<E>, ModelError> {
        let cfg = &self.config;
        let n = cfg.n_patches();
        let d = cfg.feature_dim;

        if tokens.rank() != 2 || tokens.shape()[1] != cfg.patch_dim() {
            return Err(ModelError::BadInput(format!(
                "tokens must be [S][{}], got {:?}",
                cfg.patch_dim(),
                tokens.shape()
            )));
        }
        let s_new = tokens.shape()[0];
        if s_new == 0 {
            return Err(ModelError::BadInput("empty token sequence".into()));
        }
        if start_pos + s_new > cfg.max_seq_len() {
            return Err(ModelError::SequenceTooLong {
                len: start_pos + s_new,
                max: cfg.max_seq_len(),
            });
        }
        if let Some(c) = &cache {
            if c.len != start_pos {
                return Err(ModelError::CacheMismatch { expected: start_pos, got: c.len });
            }
            if c.layers.len() != cfg.n_layers {
                return Err(ModelError::CacheMismatch { expected: cfg.n_layers, got: c.layers.len() });
            }
            if matches!(cfg.variant, Variant::TimeThenSpace | Variant::VitDirect) {
                return Err(ModelError::BadInput(format!(
                    "KV caching is not supported for the {} variant",
                    cfg.variant.as_str()
                )));
            }
        }
        match cfg.variant {
            Variant::TimeThenSpace => {
                if start_pos != 0 || s_new % n != 0 {
                    return Err(ModelError::BadInput(
                        "time_then_space consumes whole-frame sequences from position 0".into(),
                    ));
                }
            }
            Variant::VitDirect => {
                if start_pos != 0 || s_new != cfg.t_input * n {
                    return Err(ModelError::BadInput(format!(
                        "vit_direct consumes exactly the {}-token input window",
                        cfg.t_input * n
                    )));
                }
            }
            _ => {}
        }

        let mut g = Graph::new();
        let mut reg = ParamReg { track: track_grads, bound: Vec::new() };

        let tok = g.constant(tokens.clone());
        let ew = reg.leaf(&mut g, "embed.w".into(), &self.embed_w);
        let eb = reg.leaf(&mut g, "embed.b".into(), &self.embed_b);
        let projected = g.matmul(tok, ew)?;
        let embedded = g.add(projected, eb)?;
        let pos_tab = reg.leaf(&mut g, "pos_embed".into(), &self.pos_embed);
        let positions: Vec<usize> = (start_pos..start_pos + s_new).collect();
        let pos = g.gather_rows(pos_tab, &positions)?;
        let mut x = g.add(embedded, pos)?;

        let heads = cfg.n_heads;
        let dh = cfg.head_dim();

        match cfg.variant {
            Variant::Bcat | Variant::NextToken | Variant::VitDirect => {
                let mask_id = match cfg.mask_kind {
                    MaskKind::Full => None,
                    kind => {
                        let m = AttentionMask {
                            kind,
                            n_per_frame: n,
                            q_start: start_pos,
                            q_len: s_new,
                            k_len: start_pos + s_new,
                        };
                        Some(g.constant(m.to_additive::<E>()))
                    }
                };
                for (li, layer) in self.layers.iter().enumerate() {
                    let norm1 = reg.leaf(&mut g, format!("layers.{li}.attn_norm"), &layer.attn_norm);
                    let attn_ids = register_attn(&mut reg, &mut g, &format!("layers.{li}.attn"), &layer.attn);
                    let normed = rmsnorm(&mut g, x, norm1)?;
                    let entry = cache.as_deref_mut().map(|c| &mut c.layers[li]);
                    let a = attention(&mut g, normed, &attn_ids, heads, dh, mask_id, entry)?;
                    x = g.add(x, a)?;

                    let norm2 = reg.leaf(&mut g, format!("layers.{li}.ffn_norm"), &layer.ffn_norm);
                    let ffn_ids = register_ffn(&mut reg, &mut g, &format!("layers.{li}.ffn"), &layer.ffn);
                    let normed = rmsnorm(&mut g, x, norm2)?;
                    let f = ffn(&mut g, normed, &ffn_ids)?;
                    x = g.add(x, f)?;
                }
            }
            Variant::TimeThenSpace => {
                let frames = s_new / n;
                let t_mask = AttentionMask::square(MaskKind::Causal, frames, 1).to_additive::<E>();
                let t_mask_id = g.constant(t_mask);
                for (li, layer) in self.layers.iter().enumerate() {
                    let t_norm = layer.temporal_norm.as_ref().expect("tts layer has temporal norm");
                    let t_attn = layer.temporal.as_ref().expect("tts layer has temporal attention");
                    let norm_t = reg.leaf(&mut g, format!("layers.{li}.temporal_norm"), t_norm);
                    let temporal_ids =
                        register_attn(&mut reg, &mut g, &format!("layers.{li}.temporal"), t_attn);
                    let norm1 = reg.leaf(&mut g, format!("layers.{li}.attn_norm"), &layer.attn_norm);
                    let attn_ids = register_attn(&mut reg, &mut g, &format!("layers.{li}.attn"), &layer.attn);

                    // causal attention over time, one sequence per patch
                    let normed = rmsnorm(&mut g, x, norm_t)?;
                    let cube = g.reshape(normed, vec![frames, n, d])?;
                    let per_patch = g.permute(cube, &[1, 0, 2])?;
                    let a = attention(&mut g, per_patch, &temporal_ids, heads, dh, Some(t_mask_id), None)?;
                    let back = g.permute(a, &[1, 0, 2])?;
                    let flat = g.reshape(back, vec![s_new, d])?;
                    x = g.add(x, flat)?;

                    // full attention over patches, one sequence per frame
                    let normed = rmsnorm(&mut g, x, norm1)?;
                    let per_frame = g.reshape(normed, vec![frames, n, d])?;
                    let a = attention(&mut g, per_frame, &attn_ids, heads, dh, None, None)?;
                    let flat = g.reshape(a, vec![s_new, d])?;
                    x = g.add(x, flat)?;

                    let norm2 = reg.leaf(&mut g, format!("layers.{li}.ffn_norm"), &layer.ffn_norm);
                    let ffn_ids = register_ffn(&mut reg, &mut g, &format!("layers.{li}.ffn"), &layer.ffn);
                    let normed = rmsnorm(&mut g, x, norm2)?;
                    let f = ffn(&mut g, normed, &ffn_ids)?;
                    x = g.add(x, f)?;
                }
            }
        }

        let fin = reg.leaf(&mut g, "final_norm".into(), &self.final_norm);
        let normed = rmsnorm(&mut g, x, fin)?;
        let hw = reg.leaf(&mut g, "head.w".into(), &self.head_w);
        let output = g.matmul(normed, hw)?;

        if let Some(c) = cache.as_deref_mut() {
            c.len = start_pos + s_new;
        }
        Ok(ForwardOutput { graph: g, output, param_ids: reg.bound })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::rng::Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            feature_dim: 32,
            n_heads: 4,
            n_layers: 2,
            patch_size: 8,
            resolution: 16,
            t_input: 2,
            t_horizon: 2,
            ..ModelConfig::tiny()
        }
    }

    fn random_tokens(cfg: &ModelConfig, frames: usize, seed: u64) -> Tensor<f32> {
        let mut rng = Rng::seed_from(seed);
        let s = frames * cfg.n_patches();
        Tensor::from_fn(vec![s, cfg.patch_dim()], |_| rng.range(-1.0, 1.0) as f32)
    }

    #[test]
    fn output_shape_matches_input_shape() {
        let cfg = tiny_cfg();
        let params = ModelParams::<f32>::init(&cfg, 1).unwrap();
        let tokens = random_tokens(&cfg, 3, 2);
        let out = params.forward(&tokens, 0, false, None).unwrap();
        assert_eq!(out.output_tokens().shape(), tokens.shape());
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg();
        let params = ModelParams::<f32>::init(&cfg, 1).unwrap();
        let tokens = random_tokens(&cfg, 2, 3);
        let a = params.forward(&tokens, 0, false, None).unwrap();
        let b = params.forward(&tokens, 0, false, None).unwrap();
        assert_eq!(a.output_tokens().data(), b.output_tokens().data());
    }

    #[test]
    fn every_parameter_is_registered_once() {
        for variant in [Variant::Bcat, Variant::TimeThenSpace] {
            let mut cfg = tiny_cfg();
            cfg.variant = variant;
            let params = ModelParams::<f32>::init(&cfg, 1).unwrap();
            let tokens = random_tokens(&cfg, 2, 3);
            let out = params.forward(&tokens, 0, true, None).unwrap();
            let mut bound: Vec<String> = out.param_ids.iter().map(|(n, _)| n.clone()).collect();
            let mut named: Vec<String> =
                params.named_tensors().into_iter().map(|(n, _)| n).collect();
            bound.sort();
            named.sort();
            assert_eq!(bound, named, "{variant:?}");
        }
    }

    #[test]
    fn perturbing_future_frames_leaves_past_outputs_bitwise_unchanged() {
        let cfg = tiny_cfg();
        let n = cfg.n_patches();
        let params = ModelParams::<f32>::init(&cfg, 5).unwrap();
        let tokens = random_tokens(&cfg, 4, 7);
        let base = params.forward(&tokens, 0, false, None).unwrap();

        // perturb frame 2 (positions 2N..3N); outputs before position 2N fixed
        let mut data = tokens.data().to_vec();
        let mut rng = Rng::seed_from(11);
        for v in data
            .iter_mut()
            .skip(2 * n * cfg.patch_dim())
            .take(n * cfg.patch_dim())
        {
            *v += rng.range(-3.0, 3.0) as f32;
        }
        let perturbed = Tensor::new(tokens.shape().to_vec(), data).unwrap();
        let out = params.forward(&perturbed, 0, false, None).unwrap();

        let pd = cfg.patch_dim();
        let before = &base.output_tokens().data()[..2 * n * pd];
        let after = &out.output_tokens().data()[..2 * n * pd];
        assert_eq!(before, after, "outputs for frames < 2 must be bitwise identical");
        assert_ne!(
            &base.output_tokens().data()[2 * n * pd..],
            &out.output_tokens().data()[2 * n * pd..],
            "perturbation must reach the perturbed frame's outputs"
        );
    }

    #[test]
    fn cached_forward_matches_uncached() {
        let cfg = tiny_cfg();
        let n = cfg.n_patches();
        let pd = cfg.patch_dim();
        let params = ModelParams::<f32>::init(&cfg, 9).unwrap();
        let tokens = random_tokens(&cfg, 4, 13);

        let full = params.forward(&tokens, 0, false, None).unwrap();

        let mut cache = KvCache::new(cfg.n_layers);
        let mut incremental: Vec<f32> = Vec::new();
        for f in 0..4 {
            let chunk = Tensor::new(
                vec![n, pd],
                tokens.data()[f * n * pd..(f + 1) * n * pd].to_vec(),
            )
            .unwrap();
            let out = params.forward(&chunk, f * n, false, Some(&mut cache)).unwrap();
            incremental.extend_from_slice(out.output_tokens().data());
        }
        assert_eq!(cache.len(), 4 * n);

        let full_data = full.output_tokens().data();
        let mut max_diff = 0.0f32;
        for (a, b) in full_data.iter().zip(&incremental) {
            max_diff = max_diff.max((a - b).abs());
        }
        assert!(max_diff < 1e-5, "cached vs uncached diff {max_diff}");
    }

    #[test]
    fn single_token_output_ignores_mask_kind() {
        let mut cfg = tiny_cfg();
        cfg.t_input = 1;
        let params = ModelParams::<f32>::init(&cfg, 2).unwrap();
        let mut rng = Rng::seed_from(1);
        let one = Tensor::from_fn(vec![1, cfg.patch_dim()], |_| rng.range(-1.0, 1.0) as f32);
        let a = params.forward(&one, 0, false, None).unwrap();
        let mut causal_cfg = cfg.clone();
        causal_cfg.mask_kind = MaskKind::Causal;
        let mut p2 = params.clone();
        p2.config = causal_cfg;
        let b = p2.forward(&one, 0, false, None).unwrap();
        assert_eq!(a.output_tokens().data(), b.output_tokens().data());
    }

    #[test]
    fn block_causal_with_one_patch_equals_causal_bitwise() {
        // R == P makes N = 1; the two mask kinds must agree exactly
        let mut cfg = tiny_cfg();
        cfg.patch_size = 16;
        cfg.t_input = 3;
        cfg.t_horizon = 3;
        let params = ModelParams::<f32>::init(&cfg, 3).unwrap();
        let tokens = random_tokens(&cfg, 5, 17);
        let block = params.forward(&tokens, 0, false, None).unwrap();
        let mut p2 = params.clone();
        p2.config.mask_kind = MaskKind::Causal;
        let causal = p2.forward(&tokens, 0, false, None).unwrap();
        assert_eq!(block.output_tokens().data(), causal.output_tokens().data());
    }

    #[test]
    fn time_then_space_respects_frame_causality() {
        let mut cfg = tiny_cfg();
        cfg.variant = Variant::TimeThenSpace;
        let n = cfg.n_patches();
        let pd = cfg.patch_dim();
        let params = ModelParams::<f32>::init(&cfg, 21).unwrap();
        let tokens = random_tokens(&cfg, 4, 23);
        let base = params.forward(&tokens, 0, false, None).unwrap();
        let mut data = tokens.data().to_vec();
        for v in data.iter_mut().skip(3 * n * pd) {
            *v = -*v + 0.5;
        }
        let perturbed = Tensor::new(tokens.shape().to_vec(), data).unwrap();
        let out = params.forward(&perturbed, 0, false, None).unwrap();
        assert_eq!(
            &base.output_tokens().data()[..3 * n * pd],
            &out.output_tokens().data()[..3 * n * pd]
        );
    }

    #[test]
    fn cache_position_mismatch_is_rejected() {
        let cfg = tiny_cfg();
        let params = ModelParams::<f32>::init(&cfg, 1).unwrap();
        let tokens = random_tokens(&cfg, 1, 2);
        let mut cache = KvCache::new(cfg.n_layers);
        let r = params.forward(&tokens, 3, false, Some(&mut cache));
        assert!(matches!(r, Err(ModelError::CacheMismatch { .. })));
    }

    #[test]
    fn sequence_over_budget_is_rejected() {
        let cfg = tiny_cfg();
        let params = ModelParams::<f32>::init(&cfg, 1).unwrap();
        let tokens = random_tokens(&cfg, cfg.t_max() + 1, 2);
        let r = params.forward(&tokens, 0, false, None);
        assert!(matches!(r, Err(ModelError::SequenceTooLong { .. })));
    }
}
