//! AdamW with decoupled weight decay and global-norm gradient clipping.
//!
//! Moments are kept in f64; parameters stay f32 and are rounded once per
//! step. Norm gains and biases are exempt from weight decay.

use super::{TrainConfig, TrainError};
use crate::model::{decay_exempt, ModelParams};
use std::collections::HashMap;

/// Gradients per parameter name, f64, shaped like the parameter.
pub type GradSet = HashMap<String, Vec<f64>>;

/// First/second moment estimates, aligned with canonical parameter order.
#[derive(Debug, Clone)]
pub struct OptState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub step: usize,
}

impl OptState {
    pub fn new(params: &ModelParams<f32>) -> OptState {
        let sizes: Vec<usize> = params.named_tensors().iter().map(|(_, t)| t.numel()).collect();
        OptState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// Scale all gradients so the global L2 norm is at most `clip`.
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut GradSet, clip: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.values() {
        for &v in g {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if clip > 0.0 && norm > clip {
        let scale = clip / norm;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// One AdamW step:
///   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2  (bias-corrected)
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// A non-finite gradient rejects the whole step.
pub fn adamw_step(
    params: &mut ModelParams<f32>,
    grads: &GradSet,
    state: &mut OptState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    for (name, g) in grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient { name: name.clone(), step: state.step });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    static ZERO: &[f64] = &[];

    for (idx, (name, tensor)) in params.named_tensors_mut().into_iter().enumerate() {
        let g = grads.get(&name).map(|v| v.as_slice()).unwrap_or(ZERO);
        if !(g.is_empty() || g.len() == tensor.numel()) {
            return Err(TrainError::BadConfig(format!(
                "gradient for {name} has {} values, parameter has {}",
                g.len(),
                tensor.numel()
            )));
        }
        let wd = if decay_exempt(&name) { 0.0 } else { cfg.weight_decay };
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let shape = tensor.shape().to_vec();
        let mut data = tensor.data().to_vec();
        for i in 0..data.len() {
            let gi = if g.is_empty() { 0.0 } else { g[i] };
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let p = data[i] as f64;
            data[i] = (p - lr * (m_hat / (v_hat.sqrt() + cfg.eps_opt) + wd * p)) as f32;
        }
        *tensor = crate::numerics::Tensor::new(shape, data).expect("shape unchanged");
    }
    Ok(())
}
