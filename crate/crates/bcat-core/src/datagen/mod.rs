//! Synthetic 2D field trajectories with known ground truth.
//!
//! Three families on the periodic square [0, 2pi)^2:
//!   - `adv_diff`: exact-solution advection-diffusion of random Fourier modes
//!   - `linear_swe`: shallow-water plane waves linearized about rest depth 1
//!   - `ins_vorticity`: pseudo-spectral incompressible Navier-Stokes in
//!     vorticity form (2/3-rule dealiasing, RK4 substeps)
//!
//! The first two are closed-form at every frame time; the solver family
//! carries spectral-divergence diagnostics so its incompressibility can be
//! asserted by tests.

pub mod advdiff;
mod dataset;
mod spectral;
pub mod swe;
pub mod vorticity;

pub use dataset::{make_dataset, Manifest, ManifestEntry};
pub use spectral::Fft2;

use crate::dataio::{DataError, Trajectory};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    BadSpec(String),

    #[error("stability bound violated: {0}")]
    Unstable(String),

    #[error(transparent)]
    Data(#[from] DataError),
}

/// PDE family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    AdvDiff,
    LinearSwe,
    InsVorticity,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::AdvDiff => "adv_diff",
            Family::LinearSwe => "linear_swe",
            Family::InsVorticity => "ins_vorticity",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        match s {
            "adv_diff" => Some(Family::AdvDiff),
            "linear_swe" => Some(Family::LinearSwe),
            "ins_vorticity" => Some(Family::InsVorticity),
            _ => None,
        }
    }

    pub fn valid_channels(&self) -> usize {
        match self {
            Family::AdvDiff => 1,
            Family::LinearSwe | Family::InsVorticity => 3,
        }
    }

    pub fn channel_names(&self) -> Vec<String> {
        match self {
            Family::AdvDiff => vec!["c".into()],
            Family::LinearSwe => vec!["h".into(), "u".into(), "v".into()],
            Family::InsVorticity => vec!["u".into(), "v".into(), "omega".into()],
        }
    }
}

/// Everything a generator needs. The spatial domain is [0, 2pi)^2 sampled on
/// an R x R periodic grid, frames stored at t = 0, dt, ..., (n_frames-1)*dt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub family: Family,
    /// Grid points per side; power of two in [16, 128].
    pub resolution: usize,
    /// Total stored frames (input window plus horizon).
    pub n_frames: usize,
    /// Seconds between stored frames.
    pub dt: f64,
    /// Viscosity (adv_diff decay rate, ins_vorticity kinematic viscosity).
    pub viscosity: f64,
    /// Advection velocity (a, b) for adv_diff.
    pub advection: (f64, f64),
    /// Gravity-depth product g*H0 for linear_swe; the rest depth is fixed
    /// at H0 = 1 so this is also the squared wave speed.
    pub g_h0: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec::defaults(Family::AdvDiff, 0)
    }
}

impl GenSpec {
    pub fn defaults(family: Family, seed: u64) -> GenSpec {
        GenSpec {
            family,
            resolution: 32,
            n_frames: 20,
            dt: 0.1,
            viscosity: match family {
                Family::AdvDiff => 0.02,
                Family::InsVorticity => 0.1,
                Family::LinearSwe => 0.0,
            },
            advection: (1.0, 0.7),
            g_h0: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let r = self.resolution;
        if !(16..=128).contains(&r) || !r.is_power_of_two() {
            return Err(GenError::BadSpec(format!(
                "resolution {r} must be a power of two in [16, 128]"
            )));
        }
        if self.n_frames < 2 {
            return Err(GenError::BadSpec(format!("n_frames {} < 2", self.n_frames)));
        }
        if self.dt <= 0.0 {
            return Err(GenError::BadSpec(format!("dt {} must be positive", self.dt)));
        }
        if self.viscosity < 0.0 {
            return Err(GenError::BadSpec(format!("viscosity {} < 0", self.viscosity)));
        }
        if self.family == Family::InsVorticity && self.viscosity <= 0.0 {
            return Err(GenError::BadSpec("ins_vorticity needs viscosity > 0".into()));
        }
        if self.family == Family::LinearSwe && self.g_h0 <= 0.0 {
            return Err(GenError::BadSpec(format!("g_h0 {} must be positive", self.g_h0)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.resolution as f64
    }
}

/// Dispatch to the family generator.
pub fn generate(spec: &GenSpec) -> Result<Trajectory, GenError> {
    spec.validate()?;
    let mut traj = match spec.family {
        Family::AdvDiff => advdiff::generate(spec)?,
        Family::LinearSwe => swe::generate(spec)?,
        Family::InsVorticity => vorticity::generate(spec)?,
    };
    traj.family = spec.family.as_str().to_string();
    traj.source_seed = spec.seed;
    Ok(traj)
}

/// One Fourier mode of a scalar field: amplitude, integer wavevector, phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveMode {
    pub kx: i32,
    pub ky: i32,
    pub amp: f64,
    pub phase: f64,
}

impl WaveMode {
    pub fn k_sq(&self) -> f64 {
        (self.kx * self.kx + self.ky * self.ky) as f64
    }
}

/// Draw up to `max_modes` nonzero wavevectors with |kx|,|ky| <= `max_k`,
/// uniform amplitudes and phases. Count is 1..=max_modes.
pub(crate) fn draw_modes(rng: &mut Rng, max_k: i32, max_modes: usize) -> Vec<WaveMode> {
    let count = 1 + rng.below(max_modes as u64) as usize;
    let mut modes = Vec::with_capacity(count);
    while modes.len() < count {
        let kx = rng.below((2 * max_k + 1) as u64) as i32 - max_k;
        let ky = rng.below((2 * max_k + 1) as u64) as i32 - max_k;
        if kx == 0 && ky == 0 {
            continue;
        }
        let amp = rng.range(0.5, 1.0);
        let phase = rng.range(0.0, 2.0 * std::f64::consts::PI);
        modes.push(WaveMode { kx, ky, amp, phase });
    }
    modes
}

/// Log-uniform RMS target in [0.1, 10]; scales mode amplitudes so the base
/// field hits it exactly on the grid.
pub(crate) fn rescale_modes_to_rms(
    rng: &mut Rng,
    modes: &mut [WaveMode],
    eval_rms: impl Fn(&[WaveMode]) -> f64,
    max_rms: f64,
) {
    let target = (rng.range((0.1f64).ln(), max_rms.ln())).exp();
    let rms = eval_rms(modes);
    if rms > 0.0 {
        let scale = target / rms;
        for m in modes.iter_mut() {
            m.amp *= scale;
        }
    }
}

/// RMS of a mode superposition sampled on the R x R grid at t = 0.
pub(crate) fn grid_rms(modes: &[WaveMode], resolution: usize) -> f64 {
    let r = resolution;
    let dx = 2.0 * std::f64::consts::PI / r as f64;
    let mut acc = 0.0f64;
    for iy in 0..r {
        for ix in 0..r {
            let (x, y) = (ix as f64 * dx, iy as f64 * dx);
            let mut v = 0.0;
            for m in modes {
                v += m.amp * (m.kx as f64 * x + m.ky as f64 * y + m.phase).cos();
            }
            acc += v * v;
        }
    }
    (acc / (r * r) as f64).sqrt()
}
