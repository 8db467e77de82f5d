//! Advection-diffusion with exact solution.
//!
//! c(x, y, t) = sum_k A_k cos(kx*x + ky*y - (kx*a + ky*b)*t + phi_k)
//!              * exp(-nu*|k|^2*t)
//!
//! Each Fourier mode advects with velocity (a, b) and decays at rate
//! nu*|k|^2, so any frame is recomputable exactly from the mode list.

use super::{draw_modes, grid_rms, rescale_modes_to_rms, GenError, GenSpec, WaveMode};
use crate::dataio::Trajectory;
use crate::rng::Rng;

/// The mode list a given spec draws (deterministic per seed).
pub fn modes(spec: &GenSpec) -> Vec<WaveMode> {
    let mut rng = Rng::seed_from(spec.seed);
    let mut modes = draw_modes(&mut rng, 3, 8);
    rescale_modes_to_rms(&mut rng, &mut modes, |m| grid_rms(m, spec.resolution), 10.0);
    modes
}

/// Closed-form field value at (x, y, t).
pub fn value(modes: &[WaveMode], nu: f64, advection: (f64, f64), x: f64, y: f64, t: f64) -> f64 {
    let (a, b) = advection;
    modes
        .iter()
        .map(|m| {
            let (kx, ky) = (m.kx as f64, m.ky as f64);
            let phase = kx * x + ky * y - (kx * a + ky * b) * t + m.phase;
            m.amp * phase.cos() * (-nu * m.k_sq() * t).exp()
        })
        .sum()
}

pub fn generate(spec: &GenSpec) -> Result<Trajectory, GenError> {
    let modes = modes(spec);
    generate_from_modes(spec, &modes)
}

pub fn generate_from_modes(spec: &GenSpec, modes: &[WaveMode]) -> Result<Trajectory, GenError> {
    let r = spec.resolution;
    let dx = spec.dx();
    let mut frames = vec![0.0f32; spec.n_frames * r * r];
    for ti in 0..spec.n_frames {
        let t = ti as f64 * spec.dt;
        let frame = &mut frames[ti * r * r..(ti + 1) * r * r];
        for iy in 0..r {
            for ix in 0..r {
                frame[iy * r + ix] =
                    value(modes, spec.viscosity, spec.advection, ix as f64 * dx, iy as f64 * dx, t)
                        as f32;
            }
        }
    }
    Ok(Trajectory::new(
        frames,
        spec.n_frames,
        r,
        r,
        1,
        1,
        spec.dt,
        dx,
        vec!["c".into()],
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Family;

    fn base_spec() -> GenSpec {
        GenSpec { n_frames: 8, ..GenSpec::defaults(Family::AdvDiff, 42) }
    }

    #[test]
    fn stationary_when_no_velocity_no_viscosity() {
        let mut spec = base_spec();
        spec.viscosity = 0.0;
        spec.advection = (0.0, 0.0);
        let m = vec![WaveMode { kx: 2, ky: 1, amp: 0.8, phase: 0.3 }];
        let traj = generate_from_modes(&spec, &m).unwrap();
        for t in 1..spec.n_frames {
            assert_eq!(traj.frame(t), traj.frame(0), "frame {t} differs");
        }
    }

    #[test]
    fn pure_diffusion_decays_at_closed_form_rate() {
        // one mode k=(1,0), nu=1, a=b=0: amplitude at t=1 is exp(-1) of t=0
        let mut spec = base_spec();
        spec.viscosity = 1.0;
        spec.advection = (0.0, 0.0);
        spec.dt = 1.0;
        spec.n_frames = 2;
        let m = vec![WaveMode { kx: 1, ky: 0, amp: 1.0, phase: 0.0 }];
        let traj = generate_from_modes(&spec, &m).unwrap();
        let decay = (-1.0f64).exp();
        for i in 0..traj.frame_len() {
            let want = traj.frame(0)[i] as f64 * decay;
            assert!((traj.frame(1)[i] as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn frame_zero_matches_direct_mode_sum() {
        let spec = base_spec();
        let m = modes(&spec);
        let traj = generate_from_modes(&spec, &m).unwrap();
        let dx = spec.dx();
        for iy in 0..spec.resolution {
            for ix in 0..spec.resolution {
                let direct = value(&m, spec.viscosity, spec.advection, ix as f64 * dx, iy as f64 * dx, 0.0);
                assert!((traj.at(0, iy, ix, 0) as f64 - direct).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = base_spec();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
    }
}
