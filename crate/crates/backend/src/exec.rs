//! FKW convolution execution with a load-trace simulator.
//!
//! All data access is driven by the static per-pattern offset lists, so the
//! trace contains no data-dependent index loads. The simulator counts what a
//! pattern-oblivious gather would perform (`naive_loads`: pattern entries
//! per output element per kernel) against a load-once-per-(tile, channel)
//! model (`optimized_loads`: each input element counted once per tile and
//! channel that needs it).

use serde::Serialize;

use xgir_core::par;
use xgir_core::tensor::Tensor;

use crate::fkw::FkwWeights;
use crate::plan::ExecPlan;
use crate::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LoadStats {
    pub naive_loads: u64,
    pub optimized_loads: u64,
    /// Data-dependent index loads. Pattern-mode execution is fully static,
    /// so this is always 0 here; the field exists so reports can prove it.
    pub indirect_accesses: u64,
}

impl LoadStats {
    pub fn merge(&mut self, other: &LoadStats) {
        self.naive_loads += other.naive_loads;
        self.optimized_loads += other.optimized_loads;
        self.indirect_accesses += other.indirect_accesses;
    }
}

/// Execute the convolution directly from FKW storage.
///
/// Output channels follow the original filter order (the permutation is
/// storage-internal). Per-output accumulation order is fixed: records in
/// stored order, offsets ascending, so repeated runs are bitwise identical;
/// against the dense reference on decoded weights the result agrees within
/// 1e-6 relative error (same terms, different association).
pub fn exec_conv_fkw(
    fkw: &FkwWeights,
    input: &Tensor,
    plan: &ExecPlan,
) -> Result<(Tensor, LoadStats), BackendError> {
    if input.shape() != plan.input_shape.as_slice() {
        return Err(BackendError::Shape(format!(
            "input {:?} does not match plan {:?}",
            input.shape(),
            plan.input_shape
        )));
    }
    let (n, cin, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (hout, wout) = plan.out_hw;
    let (sh, sw) = plan.stride;
    let (ph, pw) = plan.pad;
    let src = input.data();

    // Record ranges per stored filter.
    let mut ranges = Vec::with_capacity(fkw.cout);
    let mut rec = 0usize;
    for &count in &fkw.per_filter_counts {
        ranges.push(rec..rec + count as usize);
        rec += count as usize;
    }

    // One output plane per (batch, stored filter); planes are disjoint, so
    // filter groups can run concurrently without affecting results.
    let planes: Vec<Vec<f32>> = par::map_indexed(n * fkw.cout, |plane| {
        let (ni, stored) = (plane / fkw.cout, plane % fkw.cout);
        let mut out = vec![0.0f32; hout * wout];
        for tile in &plan.tiles {
            for r in ranges[stored].clone() {
                let record = fkw.records[r];
                let ci = record.channel as usize;
                let offsets = &plan.offsets_per_pattern[record.pattern as usize];
                let wbase = r * fkw.entries;
                for oy in tile.y0..tile.y0 + tile.h {
                    for ox in tile.x0..tile.x0 + tile.w {
                        let mut acc = out[oy * wout + ox];
                        for (e, &(dy, dx)) in offsets.iter().enumerate() {
                            let iy = oy * sh + dy;
                            let ix = ox * sw + dx;
                            if iy < ph || iy >= h + ph || ix < pw || ix >= w + pw {
                                continue;
                            }
                            let x = src[((ni * cin + ci) * h + (iy - ph)) * w + (ix - pw)];
                            acc += x * fkw.weights[wbase + e];
                        }
                        out[oy * wout + ox] = acc;
                    }
                }
            }
        }
        out
    });

    let mut out = vec![0.0f32; n * fkw.cout * hout * wout];
    for (plane, data) in planes.into_iter().enumerate() {
        let (ni, stored) = (plane / fkw.cout, plane % fkw.cout);
        let orig = fkw.stored_to_original[stored] as usize;
        let base = (ni * fkw.cout + orig) * hout * wout;
        out[base..base + hout * wout].copy_from_slice(&data);
    }

    let stats = trace_loads(fkw, plan);
    let tensor = Tensor::from_vec(vec![n, fkw.cout, hout, wout], out)
        .map_err(|e| BackendError::Shape(e.to_string()))?;
    Ok((tensor, stats))
}

/// Pure load-count simulation; independent of the input data.
pub fn trace_loads(fkw: &FkwWeights, plan: &ExecPlan) -> LoadStats {
    let n = plan.input_shape[0];
    let (h, w) = (plan.input_shape[2], plan.input_shape[3]);
    let (hout, wout) = plan.out_hw;
    let (sh, sw) = plan.stride;
    let (ph, pw) = plan.pad;

    let naive = fkw.records.len() as u64
        * fkw.entries as u64
        * (n * hout * wout) as u64;

    // Distinct input elements needed per (tile, channel), unioned over every
    // pattern any filter applies to that channel.
    let mut patterns_per_channel: Vec<Vec<u16>> = vec![Vec::new(); fkw.cin];
    for r in &fkw.records {
        let list = &mut patterns_per_channel[r.channel as usize];
        if !list.contains(&r.pattern) {
            list.push(r.pattern);
        }
    }
    let mut optimized = 0u64;
    let mut needed = vec![false; h * w];
    for tile in &plan.tiles {
        for pats in patterns_per_channel.iter().filter(|p| !p.is_empty()) {
            needed.fill(false);
            for &p in pats {
                for &(dy, dx) in &plan.offsets_per_pattern[p as usize] {
                    for oy in tile.y0..tile.y0 + tile.h {
                        let iy = oy * sh + dy;
                        if iy < ph || iy >= h + ph {
                            continue;
                        }
                        for ox in tile.x0..tile.x0 + tile.w {
                            let ix = ox * sw + dx;
                            if ix < pw || ix >= w + pw {
                                continue;
                            }
                            needed[(iy - ph) * w + (ix - pw)] = true;
                        }
                    }
                }
            }
            optimized += needed.iter().filter(|b| **b).count() as u64;
        }
    }
    optimized *= n as u64;

    LoadStats {
        naive_loads: naive,
        optimized_loads: optimized,
        indirect_accesses: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fkw::KernelRecord;
    use crate::plan::plan_execution;

    fn single_kernel_fkw(mask: u16, weights: Vec<f32>) -> FkwWeights {
        FkwWeights {
            cout: 1,
            cin: 1,
            kernel: (3, 3),
            entries: weights.len(),
            patterns: vec![mask],
            stored_to_original: vec![0],
            per_filter_counts: vec![1],
            records: vec![KernelRecord { channel: 0, pattern: 0 }],
            weights,
        }
    }

    #[test]
    fn naive_64_optimized_at_most_36() {
        // Single 4-entry kernel, 6x6 input, 4x4 output, full-output tile.
        let fkw = single_kernel_fkw(0b0100_0110_1 as u16, vec![1.0, 1.0, 1.0, 1.0]);
        let plan = plan_execution(&fkw, &[1, 1, 6, 6], (1, 1), (0, 0), (4, 4)).unwrap();
        let input = Tensor::from_vec(vec![1, 1, 6, 6], vec![1.0; 36]).unwrap();
        let (_, stats) = exec_conv_fkw(&fkw, &input, &plan).unwrap();
        assert_eq!(stats.naive_loads, 64);
        assert!(stats.optimized_loads <= 36);
        assert!(stats.optimized_loads < stats.naive_loads);
        assert_eq!(stats.indirect_accesses, 0);
    }

    #[test]
    fn stats_do_not_depend_on_data() {
        let fkw = single_kernel_fkw(0b1111, vec![0.5, -0.25, 2.0, 1.0]);
        let plan = plan_execution(&fkw, &[1, 1, 6, 6], (1, 1), (0, 0), (2, 2)).unwrap();
        let zeros = Tensor::zeros(vec![1, 1, 6, 6]).unwrap();
        let ones = Tensor::from_vec(vec![1, 1, 6, 6], vec![1.0; 36]).unwrap();
        let (out0, s0) = exec_conv_fkw(&fkw, &zeros, &plan).unwrap();
        let (_, s1) = exec_conv_fkw(&fkw, &ones, &plan).unwrap();
        assert!(out0.data().iter().all(|&v| v == 0.0));
        assert_eq!(s0, s1);
    }
}
