//! Dataset assembly: manifest -> padded, normalized, patchified examples.

use super::{loss::channel_mask, TrainError};
use crate::dataio::{
    compute_norm_stats, downsample_mean, normalize, pad_channels, read_trajectory, upsample_bilinear,
    NormStats, Trajectory,
};
use crate::datagen::Manifest;
use crate::model::ModelConfig;
use crate::tokenizer::{patchify, PatchGrid};
use crate::numerics::Tensor;
use std::path::Path;

/// One trajectory ready for teacher forcing: tokens are normalized with the
/// trajectory's own input-window statistics.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub tokens: Tensor<f32>,
    pub realized_frames: usize,
    pub stats: NormStats,
    /// Denormalized source, padded to the model channel count (kept for
    /// evaluation and cropping).
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<TrainingExample>,
    pub channel_mask: Vec<f32>,
    pub valid_channels: usize,
    pub family: String,
}

/// Bring a trajectory onto the model grid: resample to the configured
/// resolution and zero-pad channels.
pub fn conform_trajectory(traj: &Trajectory, cfg: &ModelConfig) -> Result<Trajectory, TrainError> {
    let mut traj = traj.clone();
    if traj.height != cfg.resolution {
        let src = traj.height;
        let target = cfg.resolution;
        let mut frames = Vec::with_capacity(traj.t_total * target * target * traj.channels);
        for t in 0..traj.t_total {
            let resampled = if src > target {
                downsample_mean(traj.frame(t), src, traj.channels, target)?
            } else {
                upsample_bilinear(traj.frame(t), src, traj.channels, target)?
            };
            frames.extend_from_slice(&resampled);
        }
        let scale = src as f64 / target as f64;
        let mut out = Trajectory::new(
            frames,
            traj.t_total,
            target,
            target,
            traj.channels,
            traj.valid_channels,
            traj.dt,
            traj.dx * scale,
            traj.channel_names.clone(),
        )?;
        out.family = traj.family.clone();
        out.source_seed = traj.source_seed;
        traj = out;
    }
    Ok(pad_channels(&traj, cfg.channels)?)
}

/// Normalize with input-window stats and patchify up to the model's frame
/// budget.
pub fn prepare_example(
    traj: &Trajectory,
    cfg: &ModelConfig,
) -> Result<TrainingExample, TrainError> {
    let conformed = conform_trajectory(traj, cfg)?;
    let realized = conformed.t_total.min(cfg.t_max());
    let t0 = cfg.t_input.min(realized);
    let stats = compute_norm_stats(&conformed, t0)?;
    let normed = normalize(&conformed, &stats)?;
    let grid = PatchGrid::new(cfg.patch_size, cfg.resolution, cfg.channels)?;
    let window = normed.slice_frames(0, realized)?;
    let tokens = patchify(window.frames(), realized, &grid)?;
    Ok(TrainingExample {
        tokens: Tensor::new(vec![realized * grid.patches_per_frame(), grid.patch_dim()], tokens)
            .map_err(crate::numerics::NumericsError::from)?,
        realized_frames: realized,
        stats,
        trajectory: conformed,
    })
}

impl Dataset {
    /// Load every trajectory a manifest lists. Trajectories shorter than 2
    /// frames are rejected; valid channel counts must agree across files.
    pub fn load(manifest_path: &Path, cfg: &ModelConfig) -> Result<Dataset, TrainError> {
        let manifest = Manifest::load(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let mut examples = Vec::with_capacity(manifest.files.len());
        let mut valid_channels = None;
        for entry in &manifest.files {
            let mut traj = read_trajectory(&dir.join(&entry.path))?;
            traj.family = manifest.family.clone();
            traj.source_seed = entry.seed;
            if traj.t_total < 2 {
                return Err(TrainError::BadConfig(format!(
                    "trajectory {} has {} frames; need at least 2",
                    entry.path, traj.t_total
                )));
            }
            match valid_channels {
                None => valid_channels = Some(traj.valid_channels),
                Some(v) if v != traj.valid_channels => {
                    return Err(TrainError::BadConfig(format!(
                        "mixed valid channel counts in one dataset: {v} vs {}",
                        traj.valid_channels
                    )));
                }
                _ => {}
            }
            examples.push(prepare_example(&traj, cfg)?);
        }
        let valid = valid_channels
            .ok_or_else(|| TrainError::BadConfig("manifest lists no trajectories".into()))?;
        Ok(Dataset {
            examples,
            channel_mask: channel_mask(cfg.patch_size, cfg.channels, valid),
            valid_channels: valid,
            family: manifest.family,
        })
    }
}
