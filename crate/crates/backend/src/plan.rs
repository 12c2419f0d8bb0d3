//! Execution planning for FKW convolution: static per-pattern offset lists
//! (no runtime indirection) and output tiling.

use serde::Serialize;

use crate::fkw::FkwWeights;
use crate::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Tile {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecPlan {
    pub input_shape: Vec<usize>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub out_hw: (usize, usize),
    pub tile: (usize, usize),
    /// Row-major tiling of the output plane; edge tiles may be ragged.
    pub tiles: Vec<Tile>,
    /// `(dy, dx)` offsets per pattern table index, ascending position order.
    pub offsets_per_pattern: Vec<Vec<(usize, usize)>>,
    /// Stored-filter group run lengths (filters with identical pattern-id
    /// sequences), inherited from the reorder.
    pub group_sizes: Vec<usize>,
}

/// Build the execution plan for an FKW layer over a given input.
pub fn plan_execution(
    fkw: &FkwWeights,
    input_shape: &[usize],
    stride: (usize, usize),
    pad: (usize, usize),
    tile: (usize, usize),
) -> Result<ExecPlan, BackendError> {
    if input_shape.len() != 4 {
        return Err(BackendError::Shape(format!("expected NCHW input, got {input_shape:?}")));
    }
    let (cin, h, w) = (input_shape[1], input_shape[2], input_shape[3]);
    if cin != fkw.cin {
        return Err(BackendError::Shape(format!(
            "input has {cin} channels, FKW layer expects {}",
            fkw.cin
        )));
    }
    let (kh, kw) = fkw.kernel;
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    if sh == 0 || sw == 0 || h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(BackendError::Shape(format!(
            "kernel {kh}x{kw} stride {stride:?} pad {pad:?} invalid for input {input_shape:?}"
        )));
    }
    let hout = (h + 2 * ph - kh) / sh + 1;
    let wout = (w + 2 * pw - kw) / sw + 1;
    let (th, tw) = tile;
    if th == 0 || tw == 0 || th > hout || tw > wout {
        return Err(BackendError::BadTile { tile, out: (hout, wout) });
    }

    let mut tiles = Vec::new();
    for y0 in (0..hout).step_by(th) {
        for x0 in (0..wout).step_by(tw) {
            tiles.push(Tile {
                y0,
                x0,
                h: th.min(hout - y0),
                w: tw.min(wout - x0),
            });
        }
    }

    let offsets_per_pattern = (0..fkw.patterns.len())
        .map(|p| fkw.pattern_offsets(p as u16))
        .collect();

    // Group runs: maximal runs of stored filters with identical pattern-id
    // sequences, recomputed from the records.
    let mut sequences = Vec::with_capacity(fkw.cout);
    let mut rec = 0usize;
    for &count in &fkw.per_filter_counts {
        let seq: Vec<u16> = fkw.records[rec..rec + count as usize]
            .iter()
            .map(|r| r.pattern)
            .collect();
        sequences.push(seq);
        rec += count as usize;
    }
    let mut group_sizes = Vec::new();
    let mut run = 0usize;
    for i in 0..sequences.len() {
        if i > 0 && sequences[i] != sequences[i - 1] {
            group_sizes.push(run);
            run = 0;
        }
        run += 1;
    }
    if run > 0 {
        group_sizes.push(run);
    }

    Ok(ExecPlan {
        input_shape: input_shape.to_vec(),
        stride,
        pad,
        out_hw: (hout, wout),
        tile,
        tiles,
        offsets_per_pattern,
        group_sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fkw::KernelRecord;

    fn tiny_fkw(patterns: Vec<u16>) -> FkwWeights {
        FkwWeights {
            cout: 1,
            cin: 1,
            kernel: (3, 3),
            entries: 4,
            patterns,
            stored_to_original: vec![0],
            per_filter_counts: vec![1],
            records: vec![KernelRecord { channel: 0, pattern: 0 }],
            weights: vec![1.0; 4],
        }
    }

    #[test]
    fn mask_to_offsets() {
        // Mask over positions {(0,0),(0,1),(1,1),(2,2)}.
        let mask = 1 | 1 << 1 | 1 << 4 | 1 << 8;
        let fkw = tiny_fkw(vec![mask]);
        let plan = plan_execution(&fkw, &[1, 1, 6, 6], (1, 1), (0, 0), (4, 4)).unwrap();
        assert_eq!(
            plan.offsets_per_pattern[0],
            vec![(0, 0), (0, 1), (1, 1), (2, 2)]
        );
    }

    #[test]
    fn full_output_is_one_tile() {
        let fkw = tiny_fkw(vec![0b1111]);
        let plan = plan_execution(&fkw, &[1, 1, 6, 6], (1, 1), (0, 0), (4, 4)).unwrap();
        assert_eq!(plan.out_hw, (4, 4));
        assert_eq!(plan.tiles.len(), 1);
    }

    #[test]
    fn ragged_tiles_cover_output() {
        let fkw = tiny_fkw(vec![0b1111]);
        let plan = plan_execution(&fkw, &[1, 1, 8, 8], (1, 1), (1, 1), (3, 3)).unwrap();
        assert_eq!(plan.out_hw, (8, 8));
        let covered: usize = plan.tiles.iter().map(|t| t.h * t.w).sum();
        assert_eq!(covered, 64);
        assert_eq!(plan.tiles.len(), 9);
    }

    #[test]
    fn oversized_tile_rejected() {
        let fkw = tiny_fkw(vec![0b1111]);
        assert!(matches!(
            plan_execution(&fkw, &[1, 1, 6, 6], (1, 1), (0, 0), (5, 4)),
            Err(BackendError::BadTile { .. })
        ));
    }
}
