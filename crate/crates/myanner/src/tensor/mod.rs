//! Dense f64 tensors with tape-based reverse-mode automatic differentiation.
//!
//! The design is deliberately minimal: row-major contiguous storage, no
//! views or strides, broadcasting only where the layers need it. A [`Tape`]
//! records one training step; [`Tape::backward`] fills gradients for every
//! recorded leaf. Persistent parameters live in a [`ParamStore`] and are
//! bound onto a fresh tape each step.

mod gradcheck;
mod store;
mod tape;

pub use gradcheck::grad_check;
pub use store::{ParamId, ParamStore};
pub use tape::{Tape, Var};

use crate::{Error, Result};

/// Dense row-major array of 64-bit floats.
///
/// A scalar is represented as shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero dimension in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform values in `[lo, hi)`, drawn in row-major order.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl rand::Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar value; panics if the tensor has more than one element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Number of rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Numerically stable log-sum-exp of a non-empty slice.
pub fn log_sum_exp_slice(xs: &[f64]) -> f64 {
    debug_assert!(!xs.is_empty());
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_shape() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn lse_equal_terms() {
        let v = log_sum_exp_slice(&[0.0, 0.0, 0.0, 0.0]);
        assert!((v - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn lse_no_overflow() {
        let v = log_sum_exp_slice(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn lse_bounds() {
        // max(x) <= lse(x) <= max(x) + ln n
        let xs = [0.3, -2.0, 5.5, 1.0];
        let v = log_sum_exp_slice(&xs);
        let m = 5.5;
        assert!(v >= m);
        assert!(v <= m + (xs.len() as f64).ln());
    }
}
