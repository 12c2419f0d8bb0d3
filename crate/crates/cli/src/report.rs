//! The versioned machine-readable pipeline report. No timestamps: a report
//! is a pure function of the configuration, so reruns are byte-identical.

use std::collections::BTreeMap;

use serde::Serialize;

use xgen_backend::{FormatComparison, LoadStats, ReuseStats};
use xgen_opt::rewrite::RewriteLog;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub version: u32,
    pub model: ModelSummary,
    pub stages: Stages,
    pub engine: EngineReport,
    pub equivalence: Equivalence,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub source: String,
    pub nodes: usize,
    pub weights: usize,
    pub weight_bytes: u64,
    pub flops_dense: u64,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct Stages {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prepare: Option<PrepareStage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune: Option<PruneStage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<RewriteLog>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion: Option<FusionStage>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepareStage {
    pub substituted_nodes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PruneStage {
    /// Weight reduction factor over all weights, nonzeros before/after.
    pub rate: f64,
    pub removed_l2_fraction: f64,
    /// Mean relative L2 of final outputs against the dense model over the
    /// calibration inputs.
    pub distortion: f64,
    pub per_layer: BTreeMap<String, LayerPruneOutcome>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerPruneOutcome {
    pub scheme: String,
    pub reduction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FusionStage {
    pub layers_before: usize,
    pub layers_after: usize,
    pub groups: usize,
    pub multi_node_groups: usize,
    pub predicted_bytes_eliminated: u64,
    pub profile_threshold_bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EngineReport {
    Dense {
        bytes_eliminated_per_input: u64,
    },
    Fkw {
        per_layer: BTreeMap<String, LoadStats>,
        total: LoadStats,
        formats: BTreeMap<String, FormatComparison>,
    },
    Reuse {
        per_layer: BTreeMap<String, ReuseStats>,
        total: ReuseStats,
        savings_ratio: f64,
        /// Max abs / max rel deviation vs dense execution of the same graph.
        max_abs_error: f32,
        max_rel_error: f32,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct Equivalence {
    /// Max relative error of engine outputs against the unoptimized model's
    /// reference outputs over the calibration set.
    pub max_rel_error: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f32>,
    pub passed: bool,
    pub flops_before: u64,
    pub flops_after: u64,
    /// Sparsity-aware FLOPs of the optimized graph (zero weights skipped).
    pub flops_after_effective: u64,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// Human-readable summary for standard output.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        use std::fmt::Write;
        let _ = writeln!(
            out,
            "model {}: {} nodes, {} weights, dense FLOPs {}",
            self.model.source, self.model.nodes, self.model.weights, self.model.flops_dense
        );
        if let Some(p) = &self.stages.prepare {
            let _ = writeln!(out, "prepare: {} node(s) substituted", p.substituted_nodes);
        }
        if let Some(p) = &self.stages.prune {
            let _ = writeln!(
                out,
                "prune: rate {:.3}x, removed-L2 {:.4}, distortion {:.6}",
                p.rate, p.removed_l2_fraction, p.distortion
            );
        }
        if let Some(r) = &self.stages.rewrite {
            let _ = writeln!(
                out,
                "rewrite: {} step(s), FLOPs {} -> {}",
                r.steps.len(),
                r.flops_before,
                r.flops_after
            );
        }
        if let Some(f) = &self.stages.fusion {
            let _ = writeln!(
                out,
                "fusion: {} -> {} layers ({} groups), predicted bytes eliminated {}",
                f.layers_before, f.layers_after, f.groups, f.predicted_bytes_eliminated
            );
        }
        match &self.engine {
            EngineReport::Dense { bytes_eliminated_per_input } => {
                let _ = writeln!(
                    out,
                    "engine dense: {bytes_eliminated_per_input} intermediate bytes eliminated per input"
                );
            }
            EngineReport::Fkw { total, per_layer, .. } => {
                let _ = writeln!(
                    out,
                    "engine fkw: {} layers, loads {} -> {} (indirect {})",
                    per_layer.len(),
                    total.naive_loads,
                    total.optimized_loads,
                    total.indirect_accesses
                );
            }
            EngineReport::Reuse { total, savings_ratio, max_abs_error, .. } => {
                let _ = writeln!(
                    out,
                    "engine reuse: dot products {} of {} (savings {:.3}), max abs dev {max_abs_error:e}",
                    total.dot_products_computed, total.dot_products_baseline, savings_ratio
                );
            }
        }
        let gate = match self.equivalence.tolerance {
            Some(t) => format!(" (tolerance {t:e})"),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "equivalence vs dense reference: max rel error {:e}{gate} -> {}",
            self.equivalence.max_rel_error,
            if self.equivalence.passed { "ok" } else { "EXCEEDED" }
        );
        out
    }
}
