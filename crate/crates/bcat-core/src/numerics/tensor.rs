//! Dense row-major tensors.

use super::element::Element;
use super::NumericsError;

/// Dense multidimensional array, row-major, immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self, NumericsError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(NumericsError::BadShape { expect, got: data.len() });
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![E::ZERO; n], requires_grad: false }
    }

    pub fn full(shape: Vec<usize>, v: E) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![v; n], requires_grad: false }
    }

    /// Rank-0 scalar.
    pub fn scalar(v: E) -> Self {
        Tensor { shape: vec![], data: vec![v], requires_grad: false }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> E) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| f(i)).collect();
        Tensor { shape, data, requires_grad: false }
    }

    pub fn from_f64_slice(shape: Vec<usize>, vals: &[f64]) -> Result<Self, NumericsError> {
        Self::new(shape, vals.iter().map(|&v| E::from_f64(v)).collect())
    }

    pub fn with_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.is_empty()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite_val())
    }

    /// Convert storage type, rounding through f64.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| F::from_f64(v.to_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }
}

/// Row-major strides for a shape (stride 1 on the last axis).
pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for d in (0..shape.len()).rev() {
        strides[d] = acc;
        acc *= shape[d];
    }
    strides
}

/// Broadcast two shapes right-aligned; None when incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return None;
        }
    }
    Some(out)
}

/// Strides into `shape`'s buffer as seen from the broadcast shape `full`
/// (zero stride on broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], full: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(shape);
    let offset = full.len() - shape.len();
    let mut out = vec![0usize; full.len()];
    for i in 0..full.len() {
        if i < offset {
            out[i] = 0;
        } else {
            out[i] = if shape[i - offset] == 1 { 0 } else { own[i - offset] };
        }
    }
    out
}

/// Sum `grad` (shaped `grad_shape`) down to `target_shape`, undoing a broadcast.
pub(crate) fn reduce_to_shape(grad: &[f64], grad_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let target_numel: usize = target_shape.iter().product();
    let mut out = vec![0.0f64; target_numel];
    let strides = broadcast_strides(target_shape, grad_shape);
    let mut idx = vec![0usize; grad_shape.len()];
    let mut off = 0usize;
    for &g in grad {
        out[off] += g;
        for d in (0..grad_shape.len()).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < grad_shape[d] {
                break;
            }
            idx[d] = 0;
            off -= strides[d] * grad_shape[d];
        }
    }
    out
}
