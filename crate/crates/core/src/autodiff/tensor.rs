//! Dense row-major numeric arrays.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::TapeError;

/// A dense tensor with row-major storage.
///
/// Plain values only; participation in differentiation happens through the
/// [`Tape`](super::Tape), which stores one `TensorBase` per recorded node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorBase<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> TensorBase<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TapeError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(TapeError::ShapeDataMismatch { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// Entries drawn uniformly from `[lo, hi)`.
    pub fn uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64_lossy(rng.gen_range(lo..hi))).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, TapeError> {
        Self::from_vec(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Row count when viewed as a matrix. 1-D tensors count as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Width of the last axis.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<T, TapeError> {
        if self.data.len() != 1 {
            return Err(TapeError::NotScalar { shape: self.shape.clone() });
        }
        Ok(self.data[0])
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.last_dim();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Maximum absolute elementwise difference, or `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        let mut worst = T::zero();
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = (*a - *b).abs();
            if d > worst {
                worst = d;
            }
        }
        Some(worst)
    }

    /// Lossy element conversion between scalar types.
    pub fn cast<U: Scalar>(&self) -> TensorBase<U> {
        TensorBase {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}
