//! Array arithmetic with reverse-mode differentiation.
//!
//! Exactly the op set the model needs: batched matmul, elementwise
//! arithmetic, SiLU/GeLU, shape ops, axis reductions, masked softmax,
//! sqrt, row gather. f32 storage with f64 accumulation everywhere; the
//! whole engine also instantiates at f64 for tight gradient checks.

mod element;
mod gradcheck;
mod graph;
mod tensor;

pub use element::{mask_sentinel, Element, MASK_SENTINEL, MASK_THRESHOLD};
pub use gradcheck::{finite_difference_gradient, gradient_relative_error};
pub use graph::{Gradients, Graph, TensorId};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("invalid tensor: shape implies {expect} elements, data has {got}")]
    BadShape { expect: usize, got: usize },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("softmax row {row} has every entry masked")]
    AllMasked { row: usize },

    #[error("backward requires a scalar output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("gather index {index} out of range for table with {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("function is not deterministic: repeated evaluation gave {a} then {b}")]
    NonDeterministic { a: f64, b: f64 },
}
