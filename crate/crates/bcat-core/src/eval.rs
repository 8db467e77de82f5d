//! Evaluation: time-averaged relative L2 error, dataset-level scoring, and
//! the ablation harness.

use crate::dataio::DataError;
use crate::datagen::Manifest;
use crate::model::{MaskKind, ModelConfig, ModelParams, Variant};
use crate::rollout::{rollout_next_frame, rollout_next_token, RolloutError, RolloutReport};
use crate::tokenizer::{depatchify, patchify, PatchGrid};
use crate::training::{
    conform_trajectory, train, Dataset, TrainConfig, TrainError, TrainOutput,
};
use crate::dataio::{denormalize_frames, read_trajectory, Trajectory};
use crate::numerics::{NumericsError, Tensor};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Rollout(#[from] RolloutError),

    #[error(transparent)]
    Train(#[from] TrainError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Gen(#[from] crate::datagen::GenError),

    #[error(transparent)]
    Model(#[from] crate::model::ModelError),

    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),

    #[error("checkpoint/data mismatch: {0}")]
    Mismatch(String),

    #[error("bad evaluation input: {0}")]
    BadInput(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Input window length.
    pub t_input: usize,
    /// Output steps scored.
    pub t_horizon: usize,
    /// Denominator regularizer in the relative error.
    pub eps: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { t_input: 10, t_horizon: 10, eps: 1e-7 }
    }
}

/// Relative L2 of one frame: |pred - truth|_2 / (|truth|_2 + eps), pooling
/// all spatial points and valid channels into a single norm.
pub fn frame_relative_l2(
    pred: &[f32],
    truth: &[f32],
    channels: usize,
    valid_channels: usize,
    eps: f64,
) -> f64 {
    debug_assert_eq!(pred.len(), truth.len());
    let mut diff_sq = 0.0f64;
    let mut truth_sq = 0.0f64;
    for (p_px, t_px) in pred.chunks_exact(channels).zip(truth.chunks_exact(channels)) {
        for c in 0..valid_channels {
            let d = p_px[c] as f64 - t_px[c] as f64;
            diff_sq += d * d;
            truth_sq += (t_px[c] as f64) * (t_px[c] as f64);
        }
    }
    diff_sq.sqrt() / (truth_sq.sqrt() + eps)
}

/// Time-averaged relative L2 over `t_horizon` output frames:
/// (1/T) * sum_i |u_i - pred_i| / (|u_i| + eps).
///
/// `pred` and `truth` are `[T][H][W][C]` buffers over the scored frames only.
pub fn relative_l2(
    pred: &[f32],
    truth: &[f32],
    t_horizon: usize,
    channels: usize,
    valid_channels: usize,
    cfg: &EvalConfig,
) -> Result<f64, EvalError> {
    if pred.len() != truth.len() || t_horizon == 0 || pred.len() % t_horizon != 0 {
        return Err(EvalError::BadInput(format!(
            "shape mismatch: pred {} truth {} over {t_horizon} frames",
            pred.len(),
            truth.len()
        )));
    }
    let frame_len = pred.len() / t_horizon;
    let mut acc = 0.0f64;
    for t in 0..t_horizon {
        acc += frame_relative_l2(
            &pred[t * frame_len..(t + 1) * frame_len],
            &truth[t * frame_len..(t + 1) * frame_len],
            channels,
            valid_channels,
            cfg.eps,
        );
    }
    Ok(acc / t_horizon as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryScore {
    pub family: String,
    pub trajectory_id: usize,
    pub rel_l2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyScore {
    pub family: String,
    pub mean_rel_l2: f64,
    pub n_trajectories: usize,
}

/// Per-trajectory scores, per-family means, and their unweighted average.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub trajectories: Vec<TrajectoryScore>,
    pub families: Vec<FamilyScore>,
    pub grand_average: f64,
    pub t_input: usize,
    pub t_horizon: usize,
}

impl EvalReport {
    /// Report CSV: family,trajectory_id,rel_l2 rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("family,trajectory_id,rel_l2\n");
        for t in &self.trajectories {
            out.push_str(&format!("{},{},{}\n", t.family, t.trajectory_id, t.rel_l2));
        }
        out
    }
}

/// Predict the horizon of one trajectory with whatever inference scheme the
/// parameter variant requires, then score.
pub fn score_trajectory(
    params: &ModelParams<f32>,
    traj: &Trajectory,
    cfg: &EvalConfig,
) -> Result<f64, EvalError> {
    let model_cfg = &params.config;
    let conformed = conform_trajectory(traj, model_cfg)?;
    let t0 = cfg.t_input.min(model_cfg.t_input);
    let horizon = cfg
        .t_horizon
        .min(conformed.t_total.saturating_sub(t0))
        .min(model_cfg.t_max() - t0);
    if horizon == 0 {
        return Err(EvalError::BadInput(format!(
            "trajectory with {} frames leaves no horizon after a {t0}-frame window",
            conformed.t_total
        )));
    }
    let window = conformed.slice_frames(0, t0)?;
    let report: RolloutReport = match model_cfg.variant {
        Variant::Bcat | Variant::TimeThenSpace => rollout_next_frame(params, &window, horizon, true)?,
        Variant::NextToken => rollout_next_token(params, &window, horizon, true)?,
        Variant::VitDirect => vit_direct_predict(params, &window, horizon)?,
    };
    let frame_len = conformed.frame_len();
    let truth = &conformed.frames()[t0 * frame_len..(t0 + horizon) * frame_len];
    relative_l2(
        &report.frames,
        truth,
        horizon,
        model_cfg.channels,
        conformed.valid_channels,
        cfg,
    )
}

/// One-pass direct prediction for the ViT-style baseline: the model maps the
/// input window to the horizon with full attention (a single model call).
pub fn vit_direct_predict(
    params: &ModelParams<f32>,
    input: &Trajectory,
    t_future: usize,
) -> Result<RolloutReport, EvalError> {
    let cfg = &params.config;
    if cfg.variant != Variant::VitDirect {
        return Err(EvalError::BadInput(format!(
            "direct prediction needs vit_direct params, model is {}",
            cfg.variant.as_str()
        )));
    }
    if t_future > cfg.t_horizon {
        return Err(EvalError::BadInput(format!(
            "horizon {t_future} exceeds the configured {}",
            cfg.t_horizon
        )));
    }
    let conformed = conform_trajectory(input, cfg)?;
    if conformed.t_total != cfg.t_input {
        return Err(EvalError::BadInput(format!(
            "vit_direct consumes exactly {} input frames, got {}",
            cfg.t_input, conformed.t_total
        )));
    }
    let stats = crate::dataio::compute_norm_stats(&conformed, conformed.t_total)?;
    let normed = crate::dataio::normalize(&conformed, &stats)?;
    let grid = PatchGrid::new(cfg.patch_size, cfg.resolution, cfg.channels)?;
    let tokens = patchify(normed.frames(), conformed.t_total, &grid)?;
    let n = grid.patches_per_frame();
    let pd = grid.patch_dim();

    let start = std::time::Instant::now();
    let input_tensor =
        Tensor::new(vec![conformed.t_total * n, pd], tokens).map_err(NumericsError::from)?;
    let fwd = params.forward(&input_tensor, 0, false, None).map_err(RolloutError::from)?;
    let out = fwd.output_tokens().data();
    let mut frames = depatchify(&out[..t_future * n * pd], &grid).map_err(RolloutError::from)?;
    denormalize_frames(&mut frames, cfg.channels, conformed.valid_channels, &stats);
    Ok(RolloutReport {
        frames,
        t_frames: t_future,
        resolution: cfg.resolution,
        channels: cfg.channels,
        valid_channels: conformed.valid_channels,
        model_calls: 1,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        peak_scratch_bytes: fwd.graph.peak_bytes(),
        stats,
    })
}

/// Evaluate a checkpointed model over one or more family manifests.
/// The grand average is the unweighted mean of the family means.
pub fn evaluate(
    params: &ModelParams<f32>,
    manifest_paths: &[PathBuf],
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if manifest_paths.is_empty() {
        return Err(EvalError::BadInput("no manifests given".into()));
    }
    let mut trajectories = Vec::new();
    let mut families = Vec::new();
    for manifest_path in manifest_paths {
        let manifest = Manifest::load(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        if manifest.files.is_empty() {
            return Err(EvalError::BadInput(format!("{} lists no files", manifest_path.display())));
        }
        let mut sum = 0.0f64;
        for (id, entry) in manifest.files.iter().enumerate() {
            let mut traj = read_trajectory(&dir.join(&entry.path))?;
            traj.family = manifest.family.clone();
            traj.source_seed = entry.seed;
            let rel = score_trajectory(params, &traj, cfg)?;
            sum += rel;
            trajectories.push(TrajectoryScore {
                family: manifest.family.clone(),
                trajectory_id: id,
                rel_l2: rel,
            });
        }
        families.push(FamilyScore {
            family: manifest.family.clone(),
            mean_rel_l2: sum / manifest.files.len() as f64,
            n_trajectories: manifest.files.len(),
        });
    }
    // canonical (name-sorted) summation order makes the average independent
    // of the order manifests were passed in
    let mut ordered: Vec<&FamilyScore> = families.iter().collect();
    ordered.sort_by(|a, b| a.family.cmp(&b.family));
    let grand_average = ordered.iter().map(|f| f.mean_rel_l2).sum::<f64>() / ordered.len() as f64;
    Ok(EvalReport {
        trajectories,
        families,
        grand_average,
        t_input: cfg.t_input,
        t_horizon: cfg.t_horizon,
    })
}

/// One ablation axis: a named model-config variation trained and scored
/// under a shared budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCase {
    pub name: String,
    pub variant: Variant,
    pub mask_kind: MaskKind,
    pub activation: crate::model::Activation,
    pub qk_norm: bool,
    pub patch_size: usize,
}

impl AblationCase {
    pub fn from_base(name: &str, cfg: &ModelConfig) -> AblationCase {
        AblationCase {
            name: name.to_string(),
            variant: cfg.variant,
            mask_kind: cfg.mask_kind,
            activation: cfg.activation,
            qk_norm: cfg.qk_norm,
            patch_size: cfg.patch_size,
        }
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            mask_kind: self.mask_kind,
            activation: self.activation,
            qk_norm: self.qk_norm,
            patch_size: self.patch_size,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub params: usize,
    pub train_loss: f64,
    pub test_rel_l2: f64,
}

/// Train every case under an identical budget and score it on the held-out
/// manifests. Incompatible combinations are rejected up front by config
/// validation.
pub fn ablate(
    cases: &[AblationCase],
    base_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_manifest: &Path,
    test_manifests: &[PathBuf],
    eval_cfg: &EvalConfig,
    out_dir: &Path,
) -> Result<Vec<AblationRow>, EvalError> {
    // validate the whole suite before spending any training time
    for case in cases {
        case.apply(base_cfg).validate()?;
    }
    let mut rows = Vec::with_capacity(cases.len());
    for case in cases {
        let cfg = case.apply(base_cfg);
        let dataset = Dataset::load(train_manifest, &cfg)?;
        let case_dir = out_dir.join(&case.name);
        let TrainOutput { params, final_loss, .. } = train(&cfg, train_cfg, &dataset, &case_dir)?;
        let report = evaluate(&params, test_manifests, eval_cfg)?;
        rows.push(AblationRow {
            name: case.name.clone(),
            params: params.n_params(),
            train_loss: final_loss,
            test_rel_l2: report.grand_average,
        });
    }
    Ok(rows)
}

/// Summary CSV: variant,params,train_loss,test_rel_l2.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,params,train_loss,test_rel_l2\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.name, r.params, r.train_loss, r.test_rel_l2));
    }
    out
}
