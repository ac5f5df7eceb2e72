//! Dense row-major tensor.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::Real;

/// Dense tensor with explicit shape, stored row-major.
///
/// Rank is arbitrary; matrix-style operations view the last axis as columns
/// and the product of the leading axes as rows (see [`Tensor::matrix_dims`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(CoreError::InvalidArgument {
                op: "Tensor::from_vec",
                detail: format!("shape {shape:?} expects {expected} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Row-major matrix from nested slices, for tests and fixtures.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { shape: vec![r, c], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// (rows, cols) of the matrix view: the last axis is columns, everything
    /// before it is flattened into rows. Scalars view as (1, 1), vectors of
    /// length n as (1, n).
    pub fn matrix_dims(&self) -> (usize, usize) {
        matrix_dims(&self.shape)
    }

    #[inline]
    pub fn at2(&self, row: usize, col: usize) -> T {
        let (_, c) = self.matrix_dims();
        self.data[row * c + col]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(CoreError::InvalidArgument {
                op: "Tensor::reshaped",
                detail: format!("cannot view {} values as {shape:?}", self.data.len()),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
        }
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        for (i, x) in self.data.iter().enumerate() {
            if !x.is_finite() {
                return Err(CoreError::NonFinite {
                    op,
                    detail: format!("element {i} of shape {:?} is {x}", self.shape),
                });
            }
        }
        Ok(())
    }
}

/// Shared (rows, cols) view used by the tape ops.
pub(crate) fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => {
            let cols = shape[shape.len() - 1];
            let rows: usize = shape[..shape.len() - 1].iter().product();
            (rows, cols)
        }
    }
}
