//! Linearized shallow-water plane waves.
//!
//! Linearizing about rest depth H0 = 1 with gravity g (so g*H0 is the spec
//! parameter and also the squared wave speed) gives
//!   dh/dt = -(du/dx + dv/dy),   du/dt = -g*dh/dx,   dv/dt = -g*dh/dy.
//! A plane wave h' = A cos(k.x - w*t + phi) with w = sqrt(g*H0)*|k|
//! polarizes along k:
//!   u = A*sqrt(g*H0)*(kx/|k|)*cos(k.x - w*t + phi),  v likewise with ky.
//! Superpositions of the +w branch are exact solutions; fields are exact at
//! every frame time.

use super::{draw_modes, grid_rms, rescale_modes_to_rms, GenError, GenSpec, WaveMode};
use crate::dataio::Trajectory;
use crate::rng::Rng;

/// Rest depth the linearization is taken about.
pub const REST_DEPTH: f64 = 1.0;

pub fn modes(spec: &GenSpec) -> Vec<WaveMode> {
    let mut rng = Rng::seed_from(spec.seed);
    let mut modes = draw_modes(&mut rng, 3, 8);
    // keep the depth perturbation well below the rest depth so channel RMS
    // stays in range after adding H0
    rescale_modes_to_rms(&mut rng, &mut modes, |m| grid_rms(m, spec.resolution), 5.0);
    modes
}

/// Exact (h, u, v) at (x, y, t) for a superposition of +branch waves.
pub fn fields(modes: &[WaveMode], g_h0: f64, x: f64, y: f64, t: f64) -> (f64, f64, f64) {
    let c = g_h0.sqrt();
    let mut h = REST_DEPTH;
    let mut u = 0.0;
    let mut v = 0.0;
    for m in modes {
        let (kx, ky) = (m.kx as f64, m.ky as f64);
        let k_norm = m.k_sq().sqrt();
        let omega = c * k_norm;
        let cosine = (kx * x + ky * y - omega * t + m.phase).cos();
        h += m.amp * cosine;
        u += m.amp * c * (kx / k_norm) * cosine;
        v += m.amp * c * (ky / k_norm) * cosine;
    }
    (h, u, v)
}

pub fn generate(spec: &GenSpec) -> Result<Trajectory, GenError> {
    let modes = modes(spec);
    generate_from_modes(spec, &modes)
}

pub fn generate_from_modes(spec: &GenSpec, modes: &[WaveMode]) -> Result<Trajectory, GenError> {
    let r = spec.resolution;
    let dx = spec.dx();
    let mut frames = vec![0.0f32; spec.n_frames * r * r * 3];
    for ti in 0..spec.n_frames {
        let t = ti as f64 * spec.dt;
        let frame = &mut frames[ti * r * r * 3..(ti + 1) * r * r * 3];
        for iy in 0..r {
            for ix in 0..r {
                let (h, u, v) = fields(modes, spec.g_h0, ix as f64 * dx, iy as f64 * dx, t);
                let px = (iy * r + ix) * 3;
                frame[px] = h as f32;
                frame[px + 1] = u as f32;
                frame[px + 2] = v as f32;
            }
        }
    }
    Ok(Trajectory::new(
        frames,
        spec.n_frames,
        r,
        r,
        3,
        3,
        spec.dt,
        dx,
        vec!["h".into(), "u".into(), "v".into()],
    )?)
}
