//! Block-based pruning over weight matrices: partition into blocks, prune
//! whole rows/columns independently within each block by L2 magnitude.

use serde::{Deserialize, Serialize};

use xgir_core::tensor::Tensor;

use crate::PruneError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockPruneMode {
    Cols,
    Rows,
    RowsAndCols,
}

/// One block's extent and pruned granules (block-local indices, sorted).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSparsity {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    pub pruned_rows: Vec<usize>,
    pub pruned_cols: Vec<usize>,
}

impl BlockSparsity {
    fn pruned_elems(&self) -> usize {
        self.rows * self.cols
            - (self.rows - self.pruned_rows.len()) * (self.cols - self.pruned_cols.len())
    }
}

/// A matrix with per-block row/column sparsity. Values are stored dense with
/// zeros at pruned positions; compact storage is the execution backend's
/// concern.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseMatrix {
    pub dims: (usize, usize),
    pub block: (usize, usize),
    pub mode: BlockPruneMode,
    /// Row-major over the block grid; edge blocks may be ragged.
    pub blocks: Vec<BlockSparsity>,
    pub values: Tensor,
}

impl BlockSparseMatrix {
    /// Exact pruned-element fraction.
    pub fn pruned_fraction(&self) -> f64 {
        let pruned: usize = self.blocks.iter().map(|b| b.pruned_elems()).sum();
        pruned as f64 / (self.dims.0 * self.dims.1) as f64
    }

    /// Weight reduction factor, total/retained.
    pub fn achieved_rate(&self) -> f64 {
        let total = self.dims.0 * self.dims.1;
        let pruned: usize = self.blocks.iter().map(|b| b.pruned_elems()).sum();
        total as f64 / (total - pruned) as f64
    }

    /// Is position `(r, c)` inside a pruned row or column of its block?
    pub fn is_pruned(&self, r: usize, c: usize) -> bool {
        let grid_cols = self.dims.1.div_ceil(self.block.1);
        let b = &self.blocks[(r / self.block.0) * grid_cols + c / self.block.1];
        b.pruned_rows.binary_search(&(r - b.row0)).is_ok()
            || b.pruned_cols.binary_search(&(c - b.col0)).is_ok()
    }

    /// Structural consistency: an element is zero if its block-local row or
    /// column is pruned, and pruning never altered surviving values.
    pub fn zeros_justified(&self, original: &Tensor) -> bool {
        let (rows, cols) = self.dims;
        for r in 0..rows {
            for c in 0..cols {
                let now = self.values.data()[r * cols + c];
                let was = original.data()[r * cols + c];
                if self.is_pruned(r, c) {
                    if now != 0.0 {
                        return false;
                    }
                } else if now != was {
                    return false;
                }
            }
        }
        true
    }
}

/// Prune within each `(br, bc)` block until its pruned fraction reaches
/// `rate` as closely as whole granules allow (smallest count whose fraction
/// is at least the target).
///
/// Column granules are taken ascending by L2 (ties by index), then rows the
/// same way when the mode includes rows; in `RowsAndCols` columns carry half
/// the target and rows complete it. Granule norms are computed once over the
/// full block, not recomputed as granules fall.
pub fn block_prune(
    matrix: &Tensor,
    block: (usize, usize),
    rate: f64,
    mode: BlockPruneMode,
) -> Result<BlockSparseMatrix, PruneError> {
    let s = matrix.shape();
    if s.len() != 2 {
        return Err(PruneError::NotMatrix(s.to_vec()));
    }
    let (rows, cols) = (s[0], s[1]);
    let (br, bc) = block;
    if br == 0 || bc == 0 || br > rows || bc > cols {
        return Err(PruneError::BlockTooLarge { block, dims: (rows, cols) });
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(PruneError::BadRate(rate));
    }

    let mut values = matrix.clone();
    let mut blocks = Vec::new();
    for row0 in (0..rows).step_by(br) {
        for col0 in (0..cols).step_by(bc) {
            let b_rows = br.min(rows - row0);
            let b_cols = bc.min(cols - col0);
            let at = |r: usize, c: usize| matrix.data()[(row0 + r) * cols + col0 + c];

            let col_order = granules_by_l2(b_cols, |c| {
                (0..b_rows).map(|r| at(r, c) * at(r, c)).sum::<f32>()
            });
            let row_order = granules_by_l2(b_rows, |r| {
                (0..b_cols).map(|c| at(r, c) * at(r, c)).sum::<f32>()
            });

            let (mut pruned_cols, mut pruned_rows) = (Vec::new(), Vec::new());
            let frac = |pr: usize, pc: usize| {
                1.0 - ((b_rows - pr) * (b_cols - pc)) as f64 / (b_rows * b_cols) as f64
            };
            match mode {
                BlockPruneMode::Cols => {
                    while frac(0, pruned_cols.len()) < rate {
                        pruned_cols.push(col_order[pruned_cols.len()]);
                    }
                }
                BlockPruneMode::Rows => {
                    while frac(pruned_rows.len(), 0) < rate {
                        pruned_rows.push(row_order[pruned_rows.len()]);
                    }
                }
                BlockPruneMode::RowsAndCols => {
                    while frac(0, pruned_cols.len()) < rate / 2.0 {
                        pruned_cols.push(col_order[pruned_cols.len()]);
                    }
                    while frac(pruned_rows.len(), pruned_cols.len()) < rate {
                        pruned_rows.push(row_order[pruned_rows.len()]);
                    }
                }
            }
            pruned_cols.sort_unstable();
            pruned_rows.sort_unstable();

            for &c in &pruned_cols {
                for r in 0..b_rows {
                    values.data_mut()[(row0 + r) * cols + col0 + c] = 0.0;
                }
            }
            for &r in &pruned_rows {
                for c in 0..b_cols {
                    values.data_mut()[(row0 + r) * cols + col0 + c] = 0.0;
                }
            }
            blocks.push(BlockSparsity {
                row0,
                col0,
                rows: b_rows,
                cols: b_cols,
                pruned_rows,
                pruned_cols,
            });
        }
    }
    Ok(BlockSparseMatrix { dims: (rows, cols), block, mode, blocks, values })
}

/// Granule indices ascending by L2, ties by index.
fn granules_by_l2(n: usize, l2: impl Fn(usize) -> f32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| l2(a).total_cmp(&l2(b)).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f32) -> Tensor {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Tensor::from_vec(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn whole_matrix_block_is_structured_column_pruning() {
        // Columns 0 and 2 are the small ones and must go at rate 0.5.
        let m = matrix(4, 4, |_, c| match c {
            0 => 0.1,
            2 => 0.2,
            _ => 1.0,
        });
        let bsm = block_prune(&m, (4, 4), 0.5, BlockPruneMode::Cols).unwrap();
        assert_eq!(bsm.blocks.len(), 1);
        assert_eq!(bsm.blocks[0].pruned_cols, vec![0, 2]);
        assert_eq!(bsm.pruned_fraction(), 0.5);
        assert!(bsm.zeros_justified(&m));
    }

    #[test]
    fn two_by_two_blocks_each_lose_smaller_column() {
        let m = matrix(4, 4, |r, c| if c % 2 == 0 { 0.1 } else { 1.0 } * (r + 1) as f32);
        let bsm = block_prune(&m, (2, 2), 0.5, BlockPruneMode::Cols).unwrap();
        assert_eq!(bsm.blocks.len(), 4);
        for b in &bsm.blocks {
            assert_eq!(b.pruned_cols, vec![0], "block at ({},{})", b.row0, b.col0);
        }
        assert_eq!(bsm.values.count_nonzero(), 8);
        assert_eq!(bsm.pruned_fraction(), 0.5);
    }

    #[test]
    fn zero_rate_prunes_nothing() {
        let m = matrix(3, 5, |r, c| (r * 5 + c) as f32 + 1.0);
        let bsm = block_prune(&m, (2, 2), 0.0, BlockPruneMode::RowsAndCols).unwrap();
        assert_eq!(bsm.pruned_fraction(), 0.0);
        assert!(bsm.values.bit_eq(&m));
    }

    #[test]
    fn overshoot_is_within_one_granule() {
        // 4x6 whole block, cols mode: granule is 1/6 of the elements.
        let m = matrix(4, 6, |r, c| ((r * 6 + c) as f32).sin() + 1.5);
        for rate in [0.1, 0.3, 0.5, 0.77] {
            let bsm = block_prune(&m, (4, 6), rate, BlockPruneMode::Cols).unwrap();
            let f = bsm.pruned_fraction();
            assert!(f >= rate, "rate {rate}: fraction {f}");
            assert!(f - rate < 1.0 / 6.0, "rate {rate}: fraction {f} overshoots");
        }
    }

    #[test]
    fn six_x_on_divisible_matrix_is_exact() {
        // 12x108-like GEMM view: 5/6 pruned fraction lands exactly when the
        // column count divides 6.
        let m = matrix(12, 36, |r, c| ((r * 36 + c) as f32 * 0.37).cos() + 1.1);
        let bsm = block_prune(&m, (12, 36), 5.0 / 6.0, BlockPruneMode::Cols).unwrap();
        assert_eq!(bsm.values.count_nonzero(), 12 * 6);
        assert_eq!(bsm.achieved_rate(), 6.0);
    }

    #[test]
    fn rows_and_cols_splits_target() {
        let m = matrix(12, 3, |r, c| ((r * 3 + c) as f32 * 0.61).sin() + 1.2);
        let bsm = block_prune(&m, (12, 3), 5.0 / 6.0, BlockPruneMode::RowsAndCols).unwrap();
        // Cols stage: smallest j with j/3 >= 5/12 is 2; rows then complete
        // to exactly 30/36.
        assert_eq!(bsm.blocks[0].pruned_cols.len(), 2);
        assert_eq!(bsm.blocks[0].pruned_rows.len(), 6);
        assert_eq!(bsm.achieved_rate(), 6.0);
        assert!(bsm.zeros_justified(&m));
    }

    #[test]
    fn ragged_edge_blocks() {
        let m = matrix(5, 7, |r, c| (r + c) as f32 + 0.5);
        let bsm = block_prune(&m, (2, 3), 0.4, BlockPruneMode::Cols).unwrap();
        assert_eq!(bsm.blocks.len(), 9); // 3x3 grid with ragged edges
        let edge = bsm.blocks.iter().find(|b| b.row0 == 4 && b.col0 == 6).unwrap();
        assert_eq!((edge.rows, edge.cols), (1, 1));
        assert!(bsm.pruned_fraction() >= 0.4);
        assert!(bsm.zeros_justified(&m));
    }

    #[test]
    fn per_block_choice_matches_brute_force() {
        let m = matrix(4, 4, |r, c| ((r * 31 + c * 17) % 13) as f32 - 4.0);
        let bsm = block_prune(&m, (2, 2), 0.5, BlockPruneMode::Cols).unwrap();
        for b in &bsm.blocks {
            // Brute force: the single smaller-L2 column of each 2x2 block.
            let l2 = |c: usize| {
                (0..2)
                    .map(|r| {
                        let v = m.data()[(b.row0 + r) * 4 + b.col0 + c];
                        v * v
                    })
                    .sum::<f32>()
            };
            let expect = if l2(0) <= l2(1) { 0 } else { 1 };
            assert_eq!(b.pruned_cols, vec![expect]);
        }
    }
}
