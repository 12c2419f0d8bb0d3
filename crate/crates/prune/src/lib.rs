//! Compiler-friendly sparsity generation.
//!
//! Three schemes over conv kernels and weight matrices:
//!
//! * pattern pruning: each kernel keeps a fixed-size non-zero mask chosen
//!   from a small library (4 of 9 for 3x3 kernels by default);
//! * connectivity pruning: whole kernels removed, cutting input-to-output
//!   channel connections;
//! * block pruning: a weight matrix is partitioned into blocks and whole
//!   rows/columns are pruned independently within each block.
//!
//! Selection is by weight magnitude throughout (no training loop lives in
//! this workspace); the report's output-distortion proxy stands in for task
//! accuracy.

pub mod block;
pub mod gemm;
pub mod pattern;
pub mod report;

pub use block::{block_prune, BlockPruneMode, BlockSparseMatrix};
pub use gemm::{conv_to_gemm, gemm_to_conv};
pub use pattern::{
    apply_pattern_pruning, assign_patterns, connectivity_prune, derive_pattern_library,
    KernelPattern, KernelSlot, PatternAssignment, PatternLibrary, PatternPruneOutcome,
};
pub use report::{pruning_report, PruningReport};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PruneError {
    #[error("expected 4-D conv weight, got shape {0:?}")]
    NotConvWeight(Vec<usize>),
    #[error("expected rank-2 matrix, got shape {0:?}")]
    NotMatrix(Vec<usize>),
    #[error("kernel sizes differ: {0:?} vs {1:?}")]
    MixedKernelSizes((usize, usize), (usize, usize)),
    #[error("kernel {0:?} has more than 32 positions; pattern masks do not scale there, use block pruning")]
    KernelTooLarge((usize, usize)),
    #[error("{entries} entries exceed the {positions} kernel positions")]
    TooManyEntries { entries: usize, positions: usize },
    #[error("empty pattern library")]
    EmptyLibrary,
    #[error("library kernel size {lib:?} does not match weight kernel {weight:?}")]
    KernelSizeMismatch { lib: (usize, usize), weight: (usize, usize) },
    #[error("library size must be at least 1")]
    ZeroLibrary,
    #[error("rate {0} out of range [0, 1)")]
    BadRate(f64),
    #[error("assignment shape ({0} filters x {1} channels) does not match weight {2:?}")]
    AssignmentMismatch(usize, usize, Vec<usize>),
    #[error("connectivity rate {rate} infeasible: {constraint} non-emptiness leaves {removable} removable kernels, {target} requested")]
    InfeasibleRate { rate: f64, target: usize, removable: usize, constraint: &'static str },
    #[error("block {block:?} larger than matrix {dims:?}")]
    BlockTooLarge { block: (usize, usize), dims: (usize, usize) },
    #[error("graphs have different weight sets: `{0}` missing")]
    WeightSetMismatch(String),
    #[error("execution failed: {0}")]
    Exec(String),
}

/// Baseline non-structured magnitude mask: `true` marks kept positions, the
/// `floor(rate * n)` smallest-magnitude weights (ties by index) are dropped.
/// Provided only as a comparison baseline; the execution backends do not
/// accept it.
pub fn magnitude_prune_mask(data: &[f32], rate: f64) -> Result<Vec<bool>, PruneError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(PruneError::BadRate(rate));
    }
    let drop = (rate * data.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| {
        data[a]
            .abs()
            .total_cmp(&data[b].abs())
            .then(a.cmp(&b))
    });
    let mut keep = vec![true; data.len()];
    for &i in order.iter().take(drop) {
        keep[i] = false;
    }
    Ok(keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magnitude_mask_drops_smallest() {
        let keep = magnitude_prune_mask(&[0.5, -0.1, 0.9, 0.2], 0.5).unwrap();
        assert_eq!(keep, vec![true, false, true, false]);
    }

    #[test]
    fn magnitude_mask_nests_with_rate() {
        let data: Vec<f32> = (0..40).map(|i| ((i * 37 % 19) as f32) - 9.0).collect();
        let mut prev = magnitude_prune_mask(&data, 0.0).unwrap();
        for r in [0.1, 0.3, 0.5, 0.8] {
            let next = magnitude_prune_mask(&data, r).unwrap();
            for (p, n) in prev.iter().zip(&next) {
                assert!(*p || !*n, "kept set must shrink as rate grows");
            }
            prev = next;
        }
    }
}
