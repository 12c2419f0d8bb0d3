//! The GEMM view of convolution filters: `[Cout, Cin, kh, kw]` weights seen
//! as a `Cout x (Cin*kh*kw)` matrix, row `i` being filter `i` flattened
//! channel-major. Matrix-level pruning and reuse then apply to conv layers.

use xgir_core::tensor::Tensor;

use crate::PruneError;

/// Flatten a conv weight to its GEMM view. Bijective with the tensor (the
/// flattening is the row-major layout itself).
pub fn conv_to_gemm(weight: &Tensor) -> Result<Tensor, PruneError> {
    let s = weight.shape();
    if s.len() != 4 {
        return Err(PruneError::NotConvWeight(s.to_vec()));
    }
    Ok(weight
        .reshaped(vec![s[0], s[1] * s[2] * s[3]])
        .expect("element count unchanged"))
}

/// Rebuild the 4-D conv weight from its GEMM view.
pub fn gemm_to_conv(
    matrix: &Tensor,
    cin: usize,
    kernel: (usize, usize),
) -> Result<Tensor, PruneError> {
    let s = matrix.shape();
    if s.len() != 2 {
        return Err(PruneError::NotMatrix(s.to_vec()));
    }
    if s[1] != cin * kernel.0 * kernel.1 {
        return Err(PruneError::NotMatrix(s.to_vec()));
    }
    Ok(matrix
        .reshaped(vec![s[0], cin, kernel.0, kernel.1])
        .expect("element count unchanged"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_arithmetic() {
        let w = Tensor::zeros(vec![2, 1, 3, 3]).unwrap();
        let m = conv_to_gemm(&w).unwrap();
        assert_eq!(m.shape(), &[2, 9]);
    }

    #[test]
    fn round_trip_is_identity() {
        let data: Vec<f32> = (0..2 * 3 * 3 * 3).map(|i| i as f32 * 0.25).collect();
        let w = Tensor::from_vec(vec![2, 3, 3, 3], data).unwrap();
        let m = conv_to_gemm(&w).unwrap();
        let back = gemm_to_conv(&m, 3, (3, 3)).unwrap();
        assert!(back.bit_eq(&w));
        // Row i is filter i, channel-major: element (f=1, c=2, ky=1, kx=0)
        // sits at row 1, column 2*9 + 1*3 + 0.
        assert_eq!(m.data()[1 * 27 + 21], w.data()[27 + 21]);
    }
}
