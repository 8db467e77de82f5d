//! 2D FFT helpers over square periodic grids.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Forward/inverse 2D FFT for an R x R grid, row-major.
/// The inverse is normalized (round trip is the identity up to rounding).
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            scratch: vec![Complex64::default(); n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.transform(data, false);
        let norm = 1.0 / (self.n * self.n) as f64;
        for v in data.iter_mut() {
            *v *= norm;
        }
    }

    fn transform(&mut self, data: &mut [Complex64], forward: bool) {
        let n = self.n;
        assert_eq!(data.len(), n * n, "grid size mismatch");
        let plan = if forward { &self.fwd } else { &self.inv };
        for row in data.chunks_exact_mut(n) {
            plan.process(row);
        }
        for col in 0..n {
            for row in 0..n {
                self.scratch[row] = data[row * n + col];
            }
            plan.process(&mut self.scratch);
            for row in 0..n {
                data[row * n + col] = self.scratch[row];
            }
        }
    }
}

/// Signed integer wavenumber for index `i` on an n-point grid.
#[inline]
pub fn wavenumber(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// 2/3-rule dealiasing cutoff: modes with |k| above this are zeroed.
pub fn dealias_cutoff(n: usize) -> f64 {
    n as f64 / 3.0
}

/// Zero all modes outside the 2/3 cutoff in either direction.
pub fn apply_dealias(data: &mut [Complex64], n: usize) {
    let cut = dealias_cutoff(n);
    for iy in 0..n {
        let ky = wavenumber(iy, n).abs();
        for ix in 0..n {
            let kx = wavenumber(ix, n).abs();
            if kx > cut || ky > cut {
                data[iy * n + ix] = Complex64::default();
            }
        }
    }
}
