//! Finite-difference gradient oracle.
//!
//! Central differences per coordinate, used as the independent check for
//! everything `Graph::backward` produces. Lives in the library (not test
//! code) because the acceptance suite and downstream crates both call it.

use super::element::Element;
use super::tensor::Tensor;
use super::NumericsError;

/// Central-difference gradient of a scalar-valued `f` at `x` with step `h`.
///
/// `f` is evaluated twice at `x` first; any mismatch means it is not
/// deterministic and the check would be meaningless.
pub fn finite_difference_gradient<E, F>(
    f: &F,
    x: &Tensor<E>,
    h: f64,
) -> Result<Tensor<E>, NumericsError>
where
    E: Element,
    F: Fn(&Tensor<E>) -> Result<f64, NumericsError>,
{
    assert!(h > 0.0, "step must be positive");
    let base = f(x)?;
    let again = f(x)?;
    if base != again && !(base.is_nan() && again.is_nan()) {
        return Err(NumericsError::NonDeterministic { a: base, b: again });
    }

    let shape = x.shape().to_vec();
    let vals = x.to_f64_vec();
    let mut grad = vec![0.0f64; vals.len()];
    for i in 0..vals.len() {
        let mut plus = vals.clone();
        plus[i] += h;
        let mut minus = vals.clone();
        minus[i] -= h;
        let fp = f(&Tensor::from_f64_slice(shape.clone(), &plus)?)?;
        let fm = f(&Tensor::from_f64_slice(shape.clone(), &minus)?)?;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::from_f64_slice(shape, &grad)
}

/// Norm-level relative error between two gradients:
/// `|a - b|_2 / (|a|_2 + |b|_2 + tiny)`.
pub fn gradient_relative_error<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> f64 {
    let (av, bv) = (a.to_f64_vec(), b.to_f64_vec());
    assert_eq!(av.len(), bv.len(), "gradient length mismatch");
    let mut diff = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in av.iter().zip(&bv) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    diff.sqrt() / (na.sqrt() + nb.sqrt() + 1e-12)
}
