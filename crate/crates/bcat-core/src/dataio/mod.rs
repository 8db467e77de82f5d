//! Trajectory container, channel padding, spatial resampling, and
//! per-trajectory normalization.

mod format;
mod normalize;
mod resample;

pub use format::{read_trajectory, write_trajectory};
pub use normalize::{compute_norm_stats, denormalize_frames, normalize, NormStats, EPS_STD};
pub use resample::{downsample_mean, upsample_bilinear};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("bad trajectory file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        DataError::Invalid(msg.into())
    }
}

/// One simulation: frames of physical field values plus grid metadata.
///
/// Layout is `[T][H][W][C]` row-major. The first `valid_channels` channels
/// carry data; trailing channels are zero padding added to unify widths
/// across PDE families.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    frames: Vec<f32>,
    pub t_total: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub valid_channels: usize,
    /// Seconds between stored frames.
    pub dt: f64,
    /// Grid spacing (uniform, square grid).
    pub dx: f64,
    /// One name per channel; padded channels get empty names.
    pub channel_names: Vec<String>,
    /// Generator family tag; not serialized in the trajectory file itself
    /// (the dataset manifest carries it).
    pub family: String,
    /// Seed the generator used; manifest-provided, 0 when unknown.
    pub source_seed: u64,
}

impl Trajectory {
    pub fn new(
        frames: Vec<f32>,
        t_total: usize,
        height: usize,
        width: usize,
        channels: usize,
        valid_channels: usize,
        dt: f64,
        dx: f64,
        channel_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if frames.len() != t_total * height * width * channels {
            return Err(DataError::invalid(format!(
                "frame buffer has {} values, shape implies {}",
                frames.len(),
                t_total * height * width * channels
            )));
        }
        if t_total == 0 {
            return Err(DataError::invalid("need at least 1 frame".to_string()));
        }
        if valid_channels > channels {
            return Err(DataError::invalid(format!(
                "valid_channels {valid_channels} > channels {channels}"
            )));
        }
        if channel_names.len() != channels {
            return Err(DataError::invalid(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                channels
            )));
        }
        if height != width {
            return Err(DataError::invalid(format!("grid must be square, got {height}x{width}")));
        }
        Ok(Trajectory {
            frames,
            t_total,
            height,
            width,
            channels,
            valid_channels,
            dt,
            dx,
            channel_names,
            family: String::new(),
            source_seed: 0,
        })
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// One frame as a `[H][W][C]` slice.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn at(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.frames[((t * self.height + y) * self.width + x) * self.channels + c]
    }

    /// Copy of the frame range `[start, start+len)` with metadata carried over.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Trajectory, DataError> {
        if start + len > self.t_total {
            return Err(DataError::invalid(format!(
                "frame range {start}..{} out of {}",
                start + len,
                self.t_total
            )));
        }
        let n = self.frame_len();
        let mut out = self.clone();
        out.frames = self.frames[start * n..(start + len) * n].to_vec();
        out.t_total = len;
        Ok(out)
    }

    /// Check the padding invariant: channels at or beyond `valid_channels`
    /// must be exactly zero everywhere.
    pub fn padding_is_zero(&self) -> bool {
        if self.valid_channels == self.channels {
            return true;
        }
        self.frames
            .chunks_exact(self.channels)
            .all(|px| px[self.valid_channels..].iter().all(|&v| v == 0.0))
    }
}

/// Extend a trajectory to `c_target` channels with exact zeros.
/// Already-wide-enough input passes through unchanged.
pub fn pad_channels(traj: &Trajectory, c_target: usize) -> Result<Trajectory, DataError> {
    if traj.valid_channels > c_target {
        return Err(DataError::invalid(format!(
            "cannot pad {} valid channels into {} target channels",
            traj.valid_channels, c_target
        )));
    }
    if traj.channels == c_target {
        return Ok(traj.clone());
    }
    let (t, h, w, c) = (traj.t_total, traj.height, traj.width, traj.channels);
    let mut frames = vec![0.0f32; t * h * w * c_target];
    let keep = c.min(c_target);
    for (src_px, dst_px) in traj
        .frames
        .chunks_exact(c)
        .zip(frames.chunks_exact_mut(c_target))
    {
        dst_px[..keep].copy_from_slice(&src_px[..keep]);
    }
    let mut names = traj.channel_names.clone();
    names.resize(c_target, String::new());
    names.truncate(c_target);
    let mut out = Trajectory::new(frames, t, h, w, c_target, traj.valid_channels, traj.dt, traj.dx, names)?;
    out.family = traj.family.clone();
    out.source_seed = traj.source_seed;
    Ok(out)
}
