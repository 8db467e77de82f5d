//! Per-trajectory, per-channel normalization from the input window.
//!
//! Stats come from the first `t0` frames only — the information available
//! at inference time — and the same stats normalize the target frames
//! during training.

use super::{DataError, Trajectory};

/// Clamp for near-constant channels.
pub const EPS_STD: f64 = 1e-6;

/// Mean and standard deviation per valid channel, from frames `[0, t0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn compute_norm_stats(traj: &Trajectory, t0: usize) -> Result<NormStats, DataError> {
    if t0 == 0 || t0 > traj.t_total {
        return Err(DataError::invalid(format!(
            "input window {t0} out of 1..={}",
            traj.t_total
        )));
    }
    let c = traj.channels;
    let cv = traj.valid_channels;
    let window = &traj.frames()[..t0 * traj.frame_len()];
    let n = (window.len() / c) as f64;

    let mut mean = vec![0.0f64; cv];
    for px in window.chunks_exact(c) {
        for (ch, m) in mean.iter_mut().enumerate() {
            *m += px[ch] as f64;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0f64; cv];
    for px in window.chunks_exact(c) {
        for (ch, v) in var.iter_mut().enumerate() {
            let d = px[ch] as f64 - mean[ch];
            *v += d * d;
        }
    }
    let std = var
        .iter()
        .map(|v| (v / n).sqrt().max(EPS_STD))
        .collect();
    Ok(NormStats { mean, std })
}

/// Map each valid channel to `(x - mean) / std`; padded channels stay zero.
pub fn normalize(traj: &Trajectory, stats: &NormStats) -> Result<Trajectory, DataError> {
    if stats.mean.len() != traj.valid_channels {
        return Err(DataError::invalid(format!(
            "stats carry {} channels, trajectory has {} valid",
            stats.mean.len(),
            traj.valid_channels
        )));
    }
    let mut out = traj.clone();
    apply_per_channel(out.frames_mut(), traj.channels, traj.valid_channels, |ch, v| {
        ((v as f64 - stats.mean[ch]) / stats.std[ch]) as f32
    });
    Ok(out)
}

/// Exact inverse of [`normalize`] on valid channels, applied to a raw
/// `[T][H][W][C]` frame buffer.
pub fn denormalize_frames(frames: &mut [f32], channels: usize, valid: usize, stats: &NormStats) {
    apply_per_channel(frames, channels, valid, |ch, v| {
        (v as f64 * stats.std[ch] + stats.mean[ch]) as f32
    });
}

fn apply_per_channel(frames: &mut [f32], channels: usize, valid: usize, f: impl Fn(usize, f32) -> f32) {
    for px in frames.chunks_exact_mut(channels) {
        for (ch, v) in px.iter_mut().enumerate().take(valid) {
            *v = f(ch, *v);
        }
    }
}

impl Trajectory {
    pub(crate) fn frames_mut(&mut self) -> &mut [f32] {
        &mut self.frames
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::pad_channels;
    use crate::rng::Rng;

    fn gaussianish_traj() -> Trajectory {
        let (t, h, w, c) = (6, 4, 4, 2);
        let mut rng = Rng::seed_from(77);
        let frames: Vec<f32> = (0..t * h * w * c)
            .map(|i| {
                let base = if i % c == 0 { 5.0 } else { -1.0 };
                let scale = if i % c == 0 { 2.0 } else { 0.5 };
                (base + scale * rng.normal()) as f32
            })
            .collect();
        Trajectory::new(frames, t, h, w, c, c, 0.1, 0.1, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn normalized_window_has_zero_mean_unit_std() {
        let traj = gaussianish_traj();
        let t0 = 4;
        let stats = compute_norm_stats(&traj, t0).unwrap();
        let normed = normalize(&traj, &stats).unwrap();
        let restats = compute_norm_stats(&normed, t0).unwrap();
        for ch in 0..2 {
            assert!(restats.mean[ch].abs() < 1e-5, "mean {}", restats.mean[ch]);
            assert!((restats.std[ch] - 1.0).abs() < 1e-5, "std {}", restats.std[ch]);
        }
    }

    #[test]
    fn constant_channel_clamps_std_and_zeroes() {
        let (t, h, w, c) = (3, 2, 2, 1);
        let frames = vec![4.25f32; t * h * w * c];
        let traj = Trajectory::new(frames, t, h, w, c, 1, 0.1, 0.1, vec!["k".into()]).unwrap();
        let stats = compute_norm_stats(&traj, 2).unwrap();
        assert_eq!(stats.std[0], EPS_STD);
        let normed = normalize(&traj, &stats).unwrap();
        assert!(normed.frames().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn denormalize_inverts_normalize() {
        let traj = gaussianish_traj();
        let stats = compute_norm_stats(&traj, 3).unwrap();
        let normed = normalize(&traj, &stats).unwrap();
        let mut frames = normed.frames().to_vec();
        denormalize_frames(&mut frames, traj.channels, traj.valid_channels, &stats);
        for (a, b) in frames.iter().zip(traj.frames()) {
            let rel = (a - b).abs() / b.abs().max(1e-3);
            assert!(rel < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn padded_channels_stay_zero_through_normalize() {
        let traj = gaussianish_traj();
        let padded = pad_channels(&traj, 4).unwrap();
        let stats = compute_norm_stats(&padded, 4).unwrap();
        assert_eq!(stats.mean.len(), 2);
        let normed = normalize(&padded, &stats).unwrap();
        assert!(normed.padding_is_zero());
    }

    #[test]
    fn affine_transform_leaves_normalized_window_unchanged() {
        // x -> alpha*x + beta with alpha > 0 must not change normalized values
        let traj = gaussianish_traj();
        let mut shifted = traj.clone();
        let (alpha, beta) = [(1.7f32, -3.0f32), (0.3, 12.0)][0];
        for px in shifted.frames_mut().chunks_exact_mut(2) {
            px[0] = alpha * px[0] + beta;
        }
        let sa = compute_norm_stats(&traj, 4).unwrap();
        let sb = compute_norm_stats(&shifted, 4).unwrap();
        let na = normalize(&traj, &sa).unwrap();
        let nb = normalize(&shifted, &sb).unwrap();
        for (a, b) in na.frames().iter().zip(nb.frames()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }
}
