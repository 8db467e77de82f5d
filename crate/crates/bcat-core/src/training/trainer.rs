//! The training loop.
//!
//! Per step: a seeded epoch shuffle picks the batch, every example runs an
//! independent forward/backward graph (in parallel across a thread pool),
//! per-example gradients are averaged in fixed index order, clipped, and fed
//! to AdamW under the warmup-stable-decay schedule. All reductions have
//! fixed order, so a seed pins the entire run bit-for-bit regardless of
//! thread count.

use super::data::{Dataset, TrainingExample};
use super::loss::{sequence_loss, Alignment};
use super::optimizer::{adamw_step, clip_gradients, GradSet, OptState};
use super::schedule::wsd_lr;
use super::{TrainConfig, TrainError};
use crate::model::{save_checkpoint, ModelConfig, ModelParams, Variant};
use crate::rng::Rng;
use crate::tokenizer::{patchify, PatchGrid};
use crate::numerics::Tensor;
use rayon::prelude::*;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub struct TrainOutput {
    pub params: ModelParams<f32>,
    pub final_loss: f64,
    pub losses: Vec<f64>,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// Forward + loss + backward for one example; returns the loss value and
/// per-parameter gradients.
fn example_grads(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    example: &TrainingExample,
    mask: &[f32],
) -> Result<(f64, GradSet), TrainError> {
    let align = Alignment::for_variant(cfg.variant);
    let input = match cfg.variant {
        Variant::VitDirect => {
            let n = cfg.n_patches();
            let pd = cfg.patch_dim();
            let window = cfg.t_input * n;
            Tensor::new(vec![window, pd], example.tokens.data()[..window * pd].to_vec())
                .map_err(crate::numerics::NumericsError::from)?
        }
        _ => example.tokens.clone(),
    };
    let mut fwd = params.forward(&input, 0, true, None)?;
    let loss_id = sequence_loss(
        &mut fwd.graph,
        fwd.output,
        &example.tokens,
        align,
        cfg.n_patches(),
        cfg.t_input,
        example.realized_frames,
        mask,
    )?;
    let loss = fwd.graph.value(loss_id).data()[0] as f64;
    let grads = fwd.graph.backward(loss_id)?;
    let mut set = GradSet::with_capacity(fwd.param_ids.len());
    for (name, id) in fwd.param_ids {
        if let Some(g) = grads.wrt(id) {
            set.insert(name, g.to_f64_vec());
        }
    }
    Ok((loss, set))
}

/// Re-tokenize an example from a random temporal crop (only meaningful when
/// the stored trajectory is longer than the model budget).
fn crop_example(
    example: &TrainingExample,
    cfg: &ModelConfig,
    offset: usize,
) -> Result<TrainingExample, TrainError> {
    let traj = &example.trajectory;
    let len = cfg.t_max().min(traj.t_total - offset);
    let window = traj.slice_frames(offset, len)?;
    let stats = crate::dataio::compute_norm_stats(&window, cfg.t_input.min(len))?;
    let normed = crate::dataio::normalize(&window, &stats)?;
    let grid = PatchGrid::new(cfg.patch_size, cfg.resolution, cfg.channels)?;
    let tokens = patchify(normed.frames(), len, &grid)?;
    Ok(TrainingExample {
        tokens: Tensor::new(vec![len * grid.patches_per_frame(), grid.patch_dim()], tokens)
            .map_err(crate::numerics::NumericsError::from)?,
        realized_frames: len,
        stats,
        trajectory: window,
    })
}

pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
) -> Result<TrainOutput, TrainError> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if dataset.examples.is_empty() {
        return Err(TrainError::BadConfig("dataset is empty".into()));
    }
    fs::create_dir_all(out_dir)
        .map_err(|e| TrainError::Io { path: out_dir.display().to_string(), source: e })?;
    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = fs::File::create(&metrics_path)
        .map_err(|e| TrainError::Io { path: metrics_path.display().to_string(), source: e })?;
    writeln!(metrics, "step,lr,loss")
        .map_err(|e| TrainError::Io { path: metrics_path.display().to_string(), source: e })?;

    let mut params = ModelParams::<f32>::init(model_cfg, train_cfg.seed)?;
    let mut state = OptState::new(&params);
    let mut order_rng = Rng::seed_from(train_cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut crop_rng = Rng::seed_from(train_cfg.seed ^ 0x517c_c1b7_2722_0a95);

    let mut order: Vec<usize> = (0..dataset.examples.len()).collect();
    order_rng.shuffle(&mut order);
    let mut cursor = 0usize;

    let checkpoint_path = out_dir.join("checkpoint.bckp");
    let mut last_checkpoint: Option<PathBuf> = None;
    let mut losses = Vec::with_capacity(train_cfg.total_steps);

    for step in 0..train_cfg.total_steps {
        // batch selection with epoch reshuffling
        let mut batch = Vec::with_capacity(train_cfg.batch_size);
        for _ in 0..train_cfg.batch_size {
            if cursor == order.len() {
                order_rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        // optional temporal crops are drawn up front to keep the RNG stream
        // independent of execution order
        let crops: Vec<Option<usize>> = batch
            .iter()
            .map(|&i| {
                let t_total = dataset.examples[i].trajectory.t_total;
                if train_cfg.random_crop && t_total > model_cfg.t_max() {
                    Some(crop_rng.below((t_total - model_cfg.t_max() + 1) as u64) as usize)
                } else {
                    None
                }
            })
            .collect();

        let results: Vec<Result<(f64, GradSet), TrainError>> = batch
            .par_iter()
            .zip(crops.par_iter())
            .map(|(&i, crop)| {
                let example = &dataset.examples[i];
                match crop {
                    Some(offset) => {
                        let cropped = crop_example(example, model_cfg, *offset)?;
                        example_grads(&params, model_cfg, &cropped, &dataset.channel_mask)
                    }
                    None => example_grads(&params, model_cfg, example, &dataset.channel_mask),
                }
            })
            .collect();

        let mut batch_loss = 0.0f64;
        let mut avg: GradSet = GradSet::new();
        for r in results {
            let (loss, grads) = r.map_err(|e| TrainError::NumericFailure {
                step,
                detail: e.to_string(),
                last_checkpoint: last_checkpoint.clone(),
            })?;
            batch_loss += loss;
            for (name, g) in grads {
                match avg.get_mut(&name) {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&g) {
                            *a += v;
                        }
                    }
                    None => {
                        avg.insert(name, g);
                    }
                }
            }
        }
        batch_loss /= train_cfg.batch_size as f64;
        if !batch_loss.is_finite() {
            return Err(TrainError::NumericFailure {
                step,
                detail: format!("loss became {batch_loss}"),
                last_checkpoint: last_checkpoint.clone(),
            });
        }
        let inv = 1.0 / train_cfg.batch_size as f64;
        for g in avg.values_mut() {
            for v in g.iter_mut() {
                *v *= inv;
            }
        }

        clip_gradients(&mut avg, train_cfg.grad_clip);
        let lr = wsd_lr(step, train_cfg.total_steps, train_cfg);
        adamw_step(&mut params, &avg, &mut state, lr, train_cfg)?;

        writeln!(metrics, "{step},{lr},{batch_loss}")
            .map_err(|e| TrainError::Io { path: metrics_path.display().to_string(), source: e })?;
        losses.push(batch_loss);

        let last_step = step + 1 == train_cfg.total_steps;
        if last_step || (train_cfg.checkpoint_every > 0 && (step + 1) % train_cfg.checkpoint_every == 0) {
            save_checkpoint(&params, &checkpoint_path)?;
            last_checkpoint = Some(checkpoint_path.clone());
        }
    }

    let final_loss = *losses.last().expect("at least one step");
    Ok(TrainOutput { params, final_loss, losses, checkpoint_path, metrics_path })
}
