//! Scalar element types for the tensor engine.
//!
//! The production pipeline stores everything as `f32`; the `f64`
//! instantiation exists so gradient checks can run the same graph at
//! full precision. All reductions and matmul inner products accumulate
//! in f64 regardless of the storage type.

use std::fmt::Debug;

/// Storage scalar for [`Tensor`](super::Tensor) and [`Graph`](super::Graph).
pub trait Element: Copy + PartialOrd + Debug + Send + Sync + 'static {
    const ZERO: Self;
    const ONE: Self;
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite_val(self) -> bool;
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn is_finite_val(self) -> bool {
        self.is_finite()
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline(always)]
    fn is_finite_val(self) -> bool {
        self.is_finite()
    }
}

/// Additive mask sentinel standing in for -inf: the most negative finite f32.
/// exp(sentinel + x - rowmax) underflows to exactly 0 for any finite score,
/// so masked entries contribute nothing to a softmax row.
pub const MASK_SENTINEL: f32 = f32::MIN;

/// Threshold below which an additive mask entry counts as "masked".
pub const MASK_THRESHOLD: f64 = (f32::MIN / 2.0) as f64;

/// The sentinel converted into an arbitrary element type.
pub fn mask_sentinel<E: Element>() -> E {
    E::from_f64(MASK_SENTINEL as f64)
}
