//! Exact storage-size accounting for a pruned conv layer under three
//! encodings: dense, CSR over the GEMM view, and FKW.
//!
//! Index overhead means the index arrays used for weight-data access, per
//! encoding:
//!
//! * CSR: u32 column indices (one per stored nonzero) plus the u32 row
//!   pointer array (`rows + 1` entries).
//! * FKW: one (u32 channel, u16 pattern) record per kernel, the u16 filter
//!   permutation and per-filter counts, and the u16 pattern table. The fixed
//!   format header is not an index array and is counted separately.

use serde::Serialize;

use xgir_core::tensor::Tensor;

use crate::fkw::FkwWeights;
use crate::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CsrSizes {
    pub value_bytes: u64,
    pub index_bytes: u64,
    pub total_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FkwSizes {
    pub value_bytes: u64,
    pub index_bytes: u64,
    pub header_bytes: u64,
    pub total_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FormatComparison {
    pub dense_bytes: u64,
    pub csr: CsrSizes,
    pub fkw: FkwSizes,
}

/// Fixed FKW header: magic, version, entries, dims, pattern count.
/// 4 + 2 + 2 + 4 + 4 + 2 + 2 + 2 plus the u32 record count.
const FKW_HEADER_BYTES: u64 = 26;

pub fn fkw_sizes(fkw: &FkwWeights) -> FkwSizes {
    let records = fkw.records.len() as u64;
    let cout = fkw.cout as u64;
    let value_bytes = 4 * fkw.entries as u64 * records;
    let index_bytes = 6 * records          // (u32 channel, u16 pattern id)
        + 2 * cout                         // filter permutation
        + 2 * cout                         // per-filter kernel counts
        + 2 * fkw.patterns.len() as u64;
    FkwSizes {
        value_bytes,
        index_bytes,
        header_bytes: FKW_HEADER_BYTES,
        total_bytes: value_bytes + index_bytes + FKW_HEADER_BYTES,
    }
}

/// CSR over the `Cout x (Cin*kh*kw)` GEMM view of the pruned layer, u32
/// indices, f32 values.
pub fn csr_sizes(pruned: &Tensor) -> Result<CsrSizes, BackendError> {
    let s = pruned.shape();
    if s.len() != 4 {
        return Err(BackendError::Shape(format!("expected 4-D weight, got {s:?}")));
    }
    let rows = s[0] as u64;
    let nnz = pruned.count_nonzero() as u64;
    let value_bytes = 4 * nnz;
    let index_bytes = 4 * nnz + 4 * (rows + 1);
    Ok(CsrSizes {
        value_bytes,
        index_bytes,
        total_bytes: value_bytes + index_bytes,
    })
}

/// Size table for one pattern-pruned layer.
pub fn compare_formats(pruned: &Tensor, fkw: &FkwWeights) -> Result<FormatComparison, BackendError> {
    Ok(FormatComparison {
        dense_bytes: pruned.byte_len() as u64,
        csr: csr_sizes(pruned)?,
        fkw: fkw_sizes(fkw),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reorder::reorder_filters;
    use crate::fkw::build_fkw;
    use xgen_prune::{apply_pattern_pruning, assign_patterns, derive_pattern_library};

    #[test]
    fn dense_layer_byte_arithmetic() {
        // 3x3 x 64 x 64 f32 layer: 64*64*9*4 = 147456 bytes.
        let w = Tensor::zeros(vec![64, 64, 3, 3]).unwrap();
        assert_eq!(w.byte_len(), 147456);
    }

    #[test]
    fn fkw_payload_is_four_ninths_of_dense() {
        let n = 12 * 12 * 9;
        let data: Vec<f32> = (0..n).map(|i| (i as f32 * 0.37).sin() + 1.5).collect();
        let w = Tensor::from_vec(vec![12, 12, 3, 3], data).unwrap();
        let lib = derive_pattern_library(&[&w], 8, 4).unwrap();
        let a = assign_patterns(&w, &lib).unwrap();
        let pruned = apply_pattern_pruning(&w, &lib, &a).unwrap().pruned;
        let fkw = build_fkw(&pruned, &lib, &a, &reorder_filters(&a)).unwrap();
        let cmp = compare_formats(&pruned, &fkw).unwrap();
        assert_eq!(cmp.fkw.value_bytes * 9, cmp.dense_bytes * 4);
        // Per-kernel index cost: 6 bytes vs CSR's 16 (4 x u32 columns).
        assert_eq!(cmp.csr.index_bytes, 16 * 144 + 4 * 13);
        assert!(cmp.fkw.total_bytes < cmp.csr.total_bytes);
    }
}
