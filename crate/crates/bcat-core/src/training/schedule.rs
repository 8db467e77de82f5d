//! Warmup-stable-decay learning rate schedule: linear warmup over the first
//! `warmup_frac` of steps, constant plateau, linear decay to zero over the
//! final `decay_frac`.

use super::TrainConfig;

pub fn wsd_lr(step: usize, total: usize, cfg: &TrainConfig) -> f64 {
    assert!(step < total, "step {step} out of range 0..{total}");
    let warm = cfg.warmup_frac * total as f64;
    let decay_start = total as f64 * (1.0 - cfg.decay_frac);
    let s = step as f64;
    if s < warm {
        cfg.base_lr * s / warm
    } else if s >= decay_start {
        cfg.base_lr * (total as f64 - s) / (total as f64 - decay_start)
    } else {
        cfg.base_lr
    }
}
