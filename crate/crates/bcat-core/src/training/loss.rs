//! Supervised loss over a teacher-forced forward pass.
//!
//! Everything happens in normalized space. Padded channels and unrealized
//! frames never contribute: masking is total, so garbage in those entries
//! cannot change the loss value.

use super::TrainError;
use crate::model::Variant;
use crate::numerics::{Element, Graph, Tensor, TensorId};

/// How forward outputs line up with their targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    /// Output at position s predicts input token s + N.
    NextFrame,
    /// Output at position s predicts input token s + 1.
    NextToken,
    /// Direct map: output position s predicts token t_input*N + s.
    Direct,
}

impl Alignment {
    pub fn for_variant(v: Variant) -> Alignment {
        match v {
            Variant::Bcat | Variant::TimeThenSpace => Alignment::NextFrame,
            Variant::NextToken => Alignment::NextToken,
            Variant::VitDirect => Alignment::Direct,
        }
    }
}

/// Per-feature weights over a flattened patch: 1 for features that belong
/// to a valid channel, 0 for padding. Channel is the innermost feature axis.
pub fn channel_mask(patch_size: usize, channels: usize, valid_channels: usize) -> Vec<f32> {
    let mut w = vec![0.0f32; patch_size * patch_size * channels];
    for (f, slot) in w.iter_mut().enumerate() {
        if f % channels < valid_channels {
            *slot = 1.0;
        }
    }
    w
}

/// Mean squared error between aligned predictions and targets over
/// supervised positions, valid channels, realized frames only.
///
/// `pred` is the forward output; `full_tokens` is the token sequence of the
/// whole realized trajectory (targets are read from it at the alignment
/// shift). Returns the scalar loss node.
#[allow(clippy::too_many_arguments)]
pub fn sequence_loss<E: Element>(
    g: &mut Graph<E>,
    pred: TensorId,
    full_tokens: &Tensor<E>,
    align: Alignment,
    n_per_frame: usize,
    t_input: usize,
    realized_frames: usize,
    mask: &[f32],
) -> Result<TensorId, TrainError> {
    let patch_dim = full_tokens.shape()[1];
    if mask.len() != patch_dim {
        return Err(TrainError::BadConfig(format!(
            "channel mask has {} weights for patch_dim {patch_dim}",
            mask.len()
        )));
    }
    let realized_tokens = realized_frames * n_per_frame;
    if full_tokens.shape()[0] < realized_tokens {
        return Err(TrainError::BadConfig(format!(
            "token sequence has {} rows, {realized_frames} frames need {realized_tokens}",
            full_tokens.shape()[0]
        )));
    }

    // supervised span and the matching target rows in the full sequence
    let (sup, target_start) = match align {
        Alignment::NextFrame => {
            if realized_frames < 2 {
                return Err(TrainError::BadConfig("need at least 2 frames to supervise".into()));
            }
            ((realized_frames - 1) * n_per_frame, n_per_frame)
        }
        Alignment::NextToken => (realized_tokens - 1, 1),
        Alignment::Direct => {
            if realized_frames <= t_input {
                return Err(TrainError::BadConfig(format!(
                    "direct alignment needs frames beyond the {t_input}-frame input window"
                )));
            }
            ((realized_frames - t_input) * n_per_frame, t_input * n_per_frame)
        }
    };
    if g.value(pred).shape()[0] < sup {
        return Err(TrainError::BadConfig(format!(
            "prediction has {} rows, supervision needs {sup}",
            g.value(pred).shape()[0]
        )));
    }

    let targets = Tensor::new(
        vec![sup, patch_dim],
        full_tokens.data()[target_start * patch_dim..(target_start + sup) * patch_dim].to_vec(),
    )
    .map_err(crate::numerics::NumericsError::from)?;

    let pred_sup = g.narrow(pred, 0, 0, sup)?;
    let tgt = g.constant(targets);
    let diff = g.sub(pred_sup, tgt)?;
    let sq = g.mul(diff, diff)?;
    let w = g.constant(Tensor::from_f64_slice(
        vec![patch_dim],
        &mask.iter().map(|&v| v as f64).collect::<Vec<_>>(),
    )?);
    let masked = g.mul(sq, w)?;
    let total = g.sum(masked, &[0, 1], false)?;
    let valid_per_token: f64 = mask.iter().map(|&v| v as f64).sum();
    let count = sup as f64 * valid_per_token;
    Ok(g.scale(total, 1.0 / count)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn toy_tokens(frames: usize, n: usize, pd: usize, seed: u64) -> Tensor<f32> {
        let mut rng = Rng::seed_from(seed);
        Tensor::from_fn(vec![frames * n, pd], |_| rng.range(-1.0, 1.0) as f32)
    }

    #[test]
    fn perfect_prediction_gives_zero() {
        let (frames, n, pd) = (3, 2, 4);
        let tokens = toy_tokens(frames, n, pd, 1);
        let mut g = Graph::<f32>::new();
        // prediction rows equal the shifted targets exactly
        let shifted = Tensor::new(
            vec![(frames - 1) * n, pd],
            tokens.data()[n * pd..].to_vec(),
        )
        .unwrap();
        let pred = g.constant(shifted);
        let mask = vec![1.0f32; pd];
        let loss = sequence_loss(&mut g, pred, &tokens, Alignment::NextFrame, n, 1, frames, &mask).unwrap();
        assert_eq!(g.value(loss).data()[0], 0.0);
    }

    #[test]
    fn constant_offset_gives_one() {
        let (frames, n, pd) = (3, 2, 4);
        let tokens = toy_tokens(frames, n, pd, 2);
        let mut g = Graph::<f32>::new();
        let shifted: Vec<f32> = tokens.data()[n * pd..].iter().map(|v| v + 1.0).collect();
        let pred = g.constant(Tensor::new(vec![(frames - 1) * n, pd], shifted).unwrap());
        let mask = vec![1.0f32; pd];
        let loss = sequence_loss(&mut g, pred, &tokens, Alignment::NextFrame, n, 1, frames, &mask).unwrap();
        assert!((g.value(loss).data()[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn padded_channels_are_fully_masked() {
        // channels 2..4 padded; garbage there must not move the loss
        let (frames, n, p, c, cv) = (3usize, 4usize, 2usize, 4usize, 2usize);
        let pd = p * p * c;
        let tokens = toy_tokens(frames, n, pd, 3);
        let mask = channel_mask(p, c, cv);

        let mut rng = Rng::seed_from(9);
        let clean: Vec<f32> = (0..(frames - 1) * n * pd).map(|_| rng.range(-1.0, 1.0) as f32).collect();
        let mut garbage = clean.clone();
        for (f, v) in garbage.iter_mut().enumerate() {
            if f % c >= cv {
                *v += 1000.0;
            }
        }

        let mut ga = Graph::<f32>::new();
        let pa = ga.constant(Tensor::new(vec![(frames - 1) * n, pd], clean).unwrap());
        let la = sequence_loss(&mut ga, pa, &tokens, Alignment::NextFrame, n, 1, frames, &mask).unwrap();
        let mut gb = Graph::<f32>::new();
        let pb = gb.constant(Tensor::new(vec![(frames - 1) * n, pd], garbage).unwrap());
        let lb = sequence_loss(&mut gb, pb, &tokens, Alignment::NextFrame, n, 1, frames, &mask).unwrap();
        assert_eq!(ga.value(la).data()[0], gb.value(lb).data()[0]);
    }

    #[test]
    fn unrealized_frames_are_ignored() {
        // same prediction values, extra junk frames beyond realized: equal loss
        let (n, pd) = (2usize, 4usize);
        let tokens5 = toy_tokens(5, n, pd, 4);
        let realized = 3;
        let mask = vec![1.0f32; pd];

        let mut rng = Rng::seed_from(5);
        let pred_vals: Vec<f32> = (0..5 * n * pd).map(|_| rng.range(-1.0, 1.0) as f32).collect();

        let mut ga = Graph::<f32>::new();
        let pa = ga.constant(Tensor::new(vec![5 * n, pd], pred_vals.clone()).unwrap());
        let la = sequence_loss(&mut ga, pa, &tokens5, Alignment::NextFrame, n, 1, realized, &mask).unwrap();

        let mut junk_tokens = tokens5.data().to_vec();
        for v in junk_tokens.iter_mut().skip(realized * n * pd) {
            *v = 77.0;
        }
        let tokens_junk = Tensor::new(vec![5 * n, pd], junk_tokens).unwrap();
        let mut junk_pred = pred_vals;
        for v in junk_pred.iter_mut().skip((realized - 1) * n * pd) {
            *v = -55.0;
        }
        let mut gb = Graph::<f32>::new();
        let pb = gb.constant(Tensor::new(vec![5 * n, pd], junk_pred).unwrap());
        let lb = sequence_loss(&mut gb, pb, &tokens_junk, Alignment::NextFrame, n, 1, realized, &mask).unwrap();
        assert_eq!(ga.value(la).data()[0], gb.value(lb).data()[0]);
    }

    #[test]
    fn next_token_supervises_all_but_last() {
        let (frames, n, pd) = (2, 3, 2);
        let tokens = toy_tokens(frames, n, pd, 6);
        let mut g = Graph::<f32>::new();
        let shifted = Tensor::new(vec![frames * n - 1, pd], tokens.data()[pd..].to_vec()).unwrap();
        let pred = g.constant(shifted);
        let mask = vec![1.0f32; pd];
        let loss = sequence_loss(&mut g, pred, &tokens, Alignment::NextToken, n, 1, frames, &mask).unwrap();
        assert_eq!(g.value(loss).data()[0], 0.0);
    }
}
