//! Dense row-major tensors. Only `f32` elements in v1.

use thiserror::Error;

/// Element type tag. Quantized types are out of scope for v1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
}

impl DType {
    pub const fn byte_size(self) -> usize {
        match self {
            DType::F32 => 4,
        }
    }

    /// Code used in the XGWT weight blob.
    pub const fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("shape {shape:?} has {expected} elements but data has {got}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("invalid shape {0:?}: shape must be non-empty with every dim >= 1")]
    BadShape(Vec<usize>),
}

/// A dense row-major f32 tensor.
///
/// Invariants (enforced at construction): the shape is non-empty, every dim
/// is at least 1, and `data.len()` equals the product of the dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::BadShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        Self::from_vec(shape, vec![0.0; n])
    }

    pub fn scalar(v: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
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

    pub fn byte_len(&self) -> usize {
        self.data.len() * DType::F32.byte_size()
    }

    pub fn dtype(&self) -> DType {
        DType::F32
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::from_vec(shape, self.data.clone())
    }

    /// True iff the two tensors have identical shape and bit-identical data.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_invariants() {
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
        assert_eq!(
            Tensor::from_vec(vec![2, 3], vec![0.0; 5]).unwrap_err(),
            TensorError::LengthMismatch {
                shape: vec![2, 3],
                expected: 6,
                got: 5
            }
        );
        assert!(matches!(
            Tensor::from_vec(vec![], vec![]),
            Err(TensorError::BadShape(_))
        ));
        assert!(matches!(
            Tensor::from_vec(vec![2, 0], vec![]),
            Err(TensorError::BadShape(_))
        ));
    }

    #[test]
    fn strides_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[5]), vec![1]);
    }

    #[test]
    fn bit_eq_distinguishes_negative_zero() {
        let a = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![-0.0]).unwrap();
        assert_eq!(a, b); // PartialEq on f32 treats 0.0 == -0.0
        assert!(!a.bit_eq(&b));
    }
}
