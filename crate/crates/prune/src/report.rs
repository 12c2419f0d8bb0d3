//! Pruning outcome accounting: rate, removed-weight energy, and an output
//! distortion proxy measured on calibration inputs.

use std::collections::BTreeMap;

use serde::Serialize;

use xgir_core::exec::execute_reference;
use xgir_core::graph::Graph;
use xgir_core::tensor::Tensor;

use crate::PruneError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruningReport {
    /// Weight reduction factor: nonzeros before / nonzeros after.
    pub rate: f64,
    /// L2 norm of the zeroed weights over the L2 norm of all weights.
    pub removed_l2_fraction: f64,
    /// Mean over calibration inputs and outputs of the relative L2 between
    /// the pruned and the dense model's final outputs. A distortion proxy
    /// for accuracy; no training happens here.
    pub distortion: f64,
    pub calibration_inputs: usize,
}

/// Compare a pruned model against its dense original.
///
/// The graphs must share structure and weight ids; only weight values may
/// differ (zeroed positions).
pub fn pruning_report(
    dense: &Graph,
    pruned: &Graph,
    calibration: &[BTreeMap<String, Tensor>],
) -> Result<PruningReport, PruneError> {
    let mut nnz_before = 0usize;
    let mut nnz_after = 0usize;
    let mut removed_energy = 0f64;
    let mut total_energy = 0f64;
    for (id, before) in &dense.weights {
        let after = pruned
            .weights
            .get(id)
            .ok_or_else(|| PruneError::WeightSetMismatch(id.clone()))?;
        nnz_before += before.count_nonzero();
        nnz_after += after.count_nonzero();
        for (b, a) in before.data().iter().zip(after.data()) {
            total_energy += (*b as f64) * (*b as f64);
            if *a == 0.0 && *b != 0.0 {
                removed_energy += (*b as f64) * (*b as f64);
            }
        }
    }

    let mut distortion_sum = 0f64;
    let mut distortion_count = 0usize;
    for feed in calibration {
        let dense_vals =
            execute_reference(dense, feed).map_err(|e| PruneError::Exec(e.to_string()))?;
        let pruned_vals =
            execute_reference(pruned, feed).map_err(|e| PruneError::Exec(e.to_string()))?;
        for out in &dense.outputs {
            let d = &dense_vals[out];
            let p = &pruned_vals[out];
            let mut num = 0f64;
            let mut den = 0f64;
            for (a, b) in p.data().iter().zip(d.data()) {
                num += ((*a - *b) as f64).powi(2);
                den += (*b as f64).powi(2);
            }
            distortion_sum += num.sqrt() / den.sqrt().max(f64::MIN_POSITIVE);
            distortion_count += 1;
        }
    }

    Ok(PruningReport {
        rate: nnz_before as f64 / (nnz_after as f64).max(f64::MIN_POSITIVE),
        removed_l2_fraction: (removed_energy.sqrt()) / total_energy.sqrt().max(f64::MIN_POSITIVE),
        distortion: if distortion_count == 0 {
            0.0
        } else {
            distortion_sum / distortion_count as f64
        },
        calibration_inputs: calibration.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{block_prune, BlockPruneMode};
    use crate::gemm::{conv_to_gemm, gemm_to_conv};
    use xgir_core::zoo;

    #[test]
    fn identical_models_rate_one_distortion_zero() {
        let g = zoo::toy_cnn6(1);
        let cal = zoo::random_inputs(&g, 1, 3);
        let report = pruning_report(&g, &g, &cal).unwrap();
        assert_eq!(report.rate, 1.0);
        assert_eq!(report.removed_l2_fraction, 0.0);
        assert_eq!(report.distortion, 0.0);
    }

    #[test]
    fn distortion_monotone_for_nested_filter_masks() {
        // Row-mode pruning of a conv GEMM view removes whole filters; the
        // removed sets nest as the rate grows and the affected output
        // channels are disjoint, so distortion cannot decrease.
        let g = zoo::toy_cnn6(2);
        let cal = zoo::random_inputs(&g, 2, 2);
        let mut last = 0.0f64;
        for rate in [0.0, 0.25, 0.5, 0.7] {
            let mut pruned = g.clone();
            let w = &g.weights["conv4.w"];
            let view = conv_to_gemm(w).unwrap();
            let bsm = block_prune(&view, (16, 144), rate, BlockPruneMode::Rows).unwrap();
            let back = gemm_to_conv(&bsm.values, 16, (3, 3)).unwrap();
            pruned.weights.insert("conv4.w".into(), back);
            let report = pruning_report(&g, &pruned, &cal).unwrap();
            assert!(
                report.distortion >= last,
                "rate {rate}: distortion {} < previous {last}",
                report.distortion
            );
            last = report.distortion;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn rate_matches_brute_force_count() {
        let g = zoo::toy_cnn6(3);
        let mut pruned = g.clone();
        let w = &g.weights["conv2.w"];
        let view = conv_to_gemm(w).unwrap();
        let bsm = block_prune(&view, (12, 108), 5.0 / 6.0, BlockPruneMode::Cols).unwrap();
        pruned
            .weights
            .insert("conv2.w".into(), gemm_to_conv(&bsm.values, 12, (3, 3)).unwrap());
        let report = pruning_report(&g, &pruned, &[]).unwrap();

        let before: usize = g.weights.values().map(|t| t.count_nonzero()).sum();
        let after: usize = pruned.weights.values().map(|t| t.count_nonzero()).sum();
        assert_eq!(report.rate, before as f64 / after as f64);
    }
}
