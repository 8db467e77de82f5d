//! Autoregressive inference.
//!
//! Next-frame generation needs exactly T model calls (all tokens of a frame
//! are produced in parallel); the next-token variant needs T*N calls. Both
//! support KV caching, and both re-tokenize the model's own normalized
//! outputs directly, without a denormalize/renormalize round trip.
//!
//! The API only ever accepts the input window, so corrupted future ground
//! truth cannot influence a rollout by construction.

use crate::dataio::{compute_norm_stats, denormalize_frames, write_trajectory, DataError, NormStats, Trajectory};
use crate::eval::frame_relative_l2;
use crate::model::{KvCache, ModelError, ModelParams, Variant};
use crate::numerics::{NumericsError, Tensor};
use crate::tokenizer::{depatchify, patchify, PatchGrid, TokenizerError};
use crate::training::{conform_trajectory, Alignment, TrainError};
use serde::Serialize;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),

    #[error(transparent)]
    Train(#[from] TrainError),

    #[error("non-finite prediction at generated frame {completed}; rollout truncated")]
    NonFinite { completed: usize },

    #[error("bad rollout input: {0}")]
    BadInput(String),
}

/// Rollout result: denormalized predicted frames plus instrumentation.
#[derive(Debug, Clone)]
pub struct RolloutReport {
    /// `[T][H][W][C]` denormalized predictions (C is the model channel count).
    pub frames: Vec<f32>,
    pub t_frames: usize,
    pub resolution: usize,
    pub channels: usize,
    pub valid_channels: usize,
    pub model_calls: usize,
    pub wall_time_ms: f64,
    /// Best-effort scratch accounting: the largest graph footprint of any
    /// single model call.
    pub peak_scratch_bytes: usize,
    pub stats: NormStats,
}

impl RolloutReport {
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.resolution * self.resolution * self.channels;
        &self.frames[t * n..(t + 1) * n]
    }
}

struct Prepared {
    tokens: Vec<f32>,
    t0: usize,
    grid: PatchGrid,
    stats: NormStats,
    conformed: Trajectory,
}

fn prepare(params: &ModelParams<f32>, input: &Trajectory, t_future: usize) -> Result<Prepared, RolloutError> {
    let cfg = &params.config;
    let conformed = conform_trajectory(input, cfg)?;
    let t0 = conformed.t_total;
    if t0 + t_future > cfg.t_max() {
        return Err(RolloutError::BadInput(format!(
            "window {t0} + horizon {t_future} exceeds the {}-frame budget",
            cfg.t_max()
        )));
    }
    let stats = compute_norm_stats(&conformed, t0)?;
    let normed = crate::dataio::normalize(&conformed, &stats)?;
    let grid = PatchGrid::new(cfg.patch_size, cfg.resolution, cfg.channels)?;
    let tokens = patchify(normed.frames(), t0, &grid)?;
    Ok(Prepared { tokens, t0, grid, stats, conformed })
}

fn finish_report(
    params: &ModelParams<f32>,
    prep: &Prepared,
    generated: Vec<f32>,
    t_future: usize,
    model_calls: usize,
    wall_time_ms: f64,
    peak: usize,
) -> Result<RolloutReport, RolloutError> {
    let cfg = &params.config;
    let mut frames = depatchify(&generated, &prep.grid)?;
    denormalize_frames(&mut frames, cfg.channels, prep.conformed.valid_channels, &prep.stats);
    Ok(RolloutReport {
        frames,
        t_frames: t_future,
        resolution: cfg.resolution,
        channels: cfg.channels,
        valid_channels: prep.conformed.valid_channels,
        model_calls,
        wall_time_ms,
        peak_scratch_bytes: peak,
        stats: prep.stats.clone(),
    })
}

/// Generate `t_future` frames, one model call per frame.
pub fn rollout_next_frame(
    params: &ModelParams<f32>,
    input: &Trajectory,
    t_future: usize,
    use_cache: bool,
) -> Result<RolloutReport, RolloutError> {
    let cfg = &params.config;
    if !matches!(cfg.variant, Variant::Bcat | Variant::TimeThenSpace) {
        return Err(RolloutError::BadInput(format!(
            "next-frame rollout needs a next-frame variant, model is {}",
            cfg.variant.as_str()
        )));
    }
    let supports_cache = use_cache && cfg.variant == Variant::Bcat;
    let prep = prepare(params, input, t_future)?;
    let n = prep.grid.patches_per_frame();
    let pd = prep.grid.patch_dim();

    let start = Instant::now();
    let mut tokens = prep.tokens.clone();
    let mut generated: Vec<f32> = Vec::with_capacity(t_future * n * pd);
    let mut calls = 0usize;
    let mut peak = 0usize;
    let mut cache = KvCache::new(cfg.n_layers);

    for step in 0..t_future {
        let out = if supports_cache {
            let new_rows = if step == 0 { prep.t0 * n } else { n };
            let start_pos = cache.len();
            let chunk = Tensor::new(
                vec![new_rows, pd],
                tokens[tokens.len() - new_rows * pd..].to_vec(),
            )
            .map_err(NumericsError::from)?;
            params.forward(&chunk, start_pos, false, Some(&mut cache))
        } else {
            let all = Tensor::new(vec![tokens.len() / pd, pd], tokens.clone())
                .map_err(NumericsError::from)?;
            params.forward(&all, 0, false, None)
        };
        let out = match out {
            Ok(o) => o,
            Err(ModelError::Numerics(NumericsError::NonFinite { .. })) => {
                return Err(RolloutError::NonFinite { completed: step })
            }
            Err(e) => return Err(e.into()),
        };
        calls += 1;
        peak = peak.max(out.graph.peak_bytes());
        let data = out.output_tokens().data();
        let next_frame = &data[data.len() - n * pd..];
        if next_frame.iter().any(|v| !v.is_finite()) {
            return Err(RolloutError::NonFinite { completed: step });
        }
        tokens.extend_from_slice(next_frame);
        generated.extend_from_slice(next_frame);
    }
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    finish_report(params, &prep, generated, t_future, calls, elapsed, peak)
}

/// Generate `t_future` frames one token at a time (T*N model calls).
pub fn rollout_next_token(
    params: &ModelParams<f32>,
    input: &Trajectory,
    t_future: usize,
    use_cache: bool,
) -> Result<RolloutReport, RolloutError> {
    let cfg = &params.config;
    if cfg.variant != Variant::NextToken {
        return Err(RolloutError::BadInput(format!(
            "next-token rollout needs next_token params, model is {}",
            cfg.variant.as_str()
        )));
    }
    let prep = prepare(params, input, t_future)?;
    let n = prep.grid.patches_per_frame();
    let pd = prep.grid.patch_dim();

    let start = Instant::now();
    let mut tokens = prep.tokens.clone();
    let mut generated: Vec<f32> = Vec::with_capacity(t_future * n * pd);
    let mut calls = 0usize;
    let mut peak = 0usize;
    let mut cache = KvCache::new(cfg.n_layers);

    for tok_idx in 0..t_future * n {
        let out = if use_cache {
            let new_rows = if tok_idx == 0 { prep.t0 * n } else { 1 };
            let start_pos = cache.len();
            let chunk = Tensor::new(
                vec![new_rows, pd],
                tokens[tokens.len() - new_rows * pd..].to_vec(),
            )
            .map_err(NumericsError::from)?;
            params.forward(&chunk, start_pos, false, Some(&mut cache))
        } else {
            let all = Tensor::new(vec![tokens.len() / pd, pd], tokens.clone())
                .map_err(NumericsError::from)?;
            params.forward(&all, 0, false, None)
        };
        let out = match out {
            Ok(o) => o,
            Err(ModelError::Numerics(NumericsError::NonFinite { .. })) => {
                return Err(RolloutError::NonFinite { completed: tok_idx / n })
            }
            Err(e) => return Err(e.into()),
        };
        calls += 1;
        peak = peak.max(out.graph.peak_bytes());
        let data = out.output_tokens().data();
        let next = &data[data.len() - pd..];
        if next.iter().any(|v| !v.is_finite()) {
            return Err(RolloutError::NonFinite { completed: tok_idx / n });
        }
        tokens.extend_from_slice(next);
        generated.extend_from_slice(next);
    }
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    finish_report(params, &prep, generated, t_future, calls, elapsed, peak)
}

/// One-step ("local") errors with the ground truth teacher-forced in: a
/// single full-sequence forward with the proper mask, then the per-frame
/// relative L2 of each one-step prediction in physical space. No
/// autoregression. Frame j's entry covers the prediction of frame j made
/// from exactly known history (j = 1 .. realized-1).
pub fn teacher_forced_next_error(
    params: &ModelParams<f32>,
    full_trajectory: &Trajectory,
    alignment: Alignment,
) -> Result<Vec<f64>, RolloutError> {
    let cfg = &params.config;
    let conformed = conform_trajectory(full_trajectory, cfg)?;
    let realized = conformed.t_total.min(cfg.t_max());
    if realized < 2 {
        return Err(RolloutError::BadInput("need at least 2 frames".into()));
    }
    let t0 = cfg.t_input.min(realized);
    let stats = compute_norm_stats(&conformed, t0)?;
    let normed = crate::dataio::normalize(&conformed, &stats)?;
    let grid = PatchGrid::new(cfg.patch_size, cfg.resolution, cfg.channels)?;
    let window = normed.slice_frames(0, realized)?;
    let tokens = patchify(window.frames(), realized, &grid)?;
    let n = grid.patches_per_frame();
    let pd = grid.patch_dim();

    let input = Tensor::new(vec![realized * n, pd], tokens).map_err(NumericsError::from)?;
    let fwd = params.forward(&input, 0, false, None)?;
    let out = fwd.output_tokens().data();

    let mut errors = Vec::with_capacity(realized - 1);
    for frame in 1..realized {
        // positions whose outputs predict the tokens of `frame`
        let token_range = match alignment {
            Alignment::NextFrame => ((frame - 1) * n * pd, frame * n * pd),
            Alignment::NextToken => ((frame * n - 1) * pd, ((frame + 1) * n - 1) * pd),
            Alignment::Direct => {
                return Err(RolloutError::BadInput(
                    "teacher forcing is defined for autoregressive alignments".into(),
                ))
            }
        };
        let pred_tokens = out[token_range.0..token_range.1].to_vec();
        let mut pred_frame = depatchify(&pred_tokens, &grid)?;
        denormalize_frames(&mut pred_frame, cfg.channels, conformed.valid_channels, &stats);
        let err = frame_relative_l2(
            &pred_frame,
            conformed.frame(frame),
            cfg.channels,
            conformed.valid_channels,
            crate::eval::EvalConfig::default().eps,
        );
        errors.push(err);
    }
    Ok(errors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    NextFrame { use_cache: bool },
    NextToken { use_cache: bool },
}

/// Timing statistics over repeated rollouts.
#[derive(Debug, Clone)]
pub struct ResourceStats {
    pub model_calls: usize,
    pub times_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub peak_scratch_bytes: usize,
    /// Whether every repeat produced bitwise-identical frames.
    pub outputs_identical: bool,
}

/// Run `warmup` unrecorded rollouts, then `repeats` timed ones.
pub fn measure_resources(
    params: &ModelParams<f32>,
    input: &Trajectory,
    t_future: usize,
    repeats: usize,
    warmup: usize,
    mode: RolloutMode,
) -> Result<ResourceStats, RolloutError> {
    if repeats == 0 {
        return Err(RolloutError::BadInput("repeats must be at least 1".into()));
    }
    let run = |params: &ModelParams<f32>| -> Result<RolloutReport, RolloutError> {
        match mode {
            RolloutMode::NextFrame { use_cache } => rollout_next_frame(params, input, t_future, use_cache),
            RolloutMode::NextToken { use_cache } => rollout_next_token(params, input, t_future, use_cache),
        }
    };
    for _ in 0..warmup {
        run(params)?;
    }
    let mut times = Vec::with_capacity(repeats);
    let mut reference: Option<RolloutReport> = None;
    let mut identical = true;
    let mut calls = 0;
    let mut peak = 0;
    for _ in 0..repeats {
        let report = run(params)?;
        times.push(report.wall_time_ms);
        calls = report.model_calls;
        peak = peak.max(report.peak_scratch_bytes);
        match &reference {
            None => reference = Some(report),
            Some(r) => {
                if r.frames != report.frames {
                    identical = false;
                }
            }
        }
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let mut sorted = times.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    Ok(ResourceStats {
        model_calls: calls,
        times_ms: times,
        mean_ms: mean,
        median_ms: median,
        peak_scratch_bytes: peak,
        outputs_identical: identical,
    })
}

#[derive(Serialize)]
struct RolloutSidecar<'a> {
    model_calls: usize,
    wall_time_ms: f64,
    config_hash: &'a str,
}

/// Write the predicted frames as a trajectory file plus a JSON sidecar with
/// the instrumentation.
pub fn write_rollout_dump(
    report: &RolloutReport,
    template: &Trajectory,
    base_path: &Path,
    config_hash: &str,
) -> Result<(), RolloutError> {
    if report.t_frames == 0 {
        return Err(RolloutError::BadInput("nothing to dump: zero predicted frames".into()));
    }
    let mut names = template.channel_names.clone();
    names.resize(report.channels, String::new());
    let traj = Trajectory::new(
        report.frames.clone(),
        report.t_frames,
        report.resolution,
        report.resolution,
        report.channels,
        report.valid_channels,
        template.dt,
        template.dx,
        names,
    )?;
    let traj_path = base_path.with_extension("btrj");
    write_trajectory(&traj, &traj_path)?;
    let sidecar = RolloutSidecar {
        model_calls: report.model_calls,
        wall_time_ms: report.wall_time_ms,
        config_hash,
    };
    let json_path = base_path.with_extension("json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"))
        .map_err(|e| DataError::Io { path: json_path.display().to_string(), source: e })?;
    Ok(())
}
