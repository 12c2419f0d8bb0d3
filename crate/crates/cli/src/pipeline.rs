//! The staged pipeline: prepare, prune, rewrite, fusion, backend build, and
//! an engine run over the calibration inputs with an end-to-end equivalence
//! check against the dense reference.

use std::collections::BTreeMap;

use xgen_backend::engine::{FkwEngine, PatternLayer, ReuseEngine};
use xgen_backend::{compare_formats, LoadStats, ReuseStats};
use xgen_opt::fusion::{apply_fusion, execute_with_fusion, plan_fusion_with};
use xgen_opt::rewrite::{apply_rewrites, builtin_rules};
use xgen_prune::{
    apply_pattern_pruning, assign_patterns, block_prune, connectivity_prune, conv_to_gemm,
    derive_pattern_library, gemm_to_conv, pruning_report,
};
use xgen_search::{prepare_model, prunable_layers};
use xgir_core::exec::{execute_reference, graph_outputs};
use xgir_core::flops::count_flops;
use xgir_core::graph::Graph;
use xgir_core::io::{write_xgwt, BlobEntry, DTYPE_TAGGED_FKW};
use xgir_core::max_rel_error;
use xgir_core::ops::Op;

use crate::config::{EngineKind, LayerPruneConfig, PassName, PipelineConfig};
use crate::error::CliError;
use crate::report::{
    Equivalence, EngineReport, FusionStage, LayerPruneOutcome, ModelSummary, PrepareStage,
    PruneStage, Report, Stages,
};

/// Outcome of one pipeline run: the report plus whether the equivalence
/// gate (when configured) held.
pub struct PipelineOutcome {
    pub report: Report,
    pub gate_violation: Option<(f32, f32)>,
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome, CliError> {
    config.validate()?;
    let original = crate::config::load_model_arg(&config.model, config.weights.as_deref())?;
    crate::config::ensure_valid(&original)?;
    let calibration = config.calibration_inputs(&original)?;
    let flops_dense = count_flops(&original)?.total;

    let mut graph = original.clone();
    let mut stages = Stages::default();
    let mut pattern_layers: BTreeMap<String, PatternLayer> = BTreeMap::new();

    if config.passes.contains(&PassName::Prepare) {
        let before = graph.nodes.len();
        graph = prepare_model(&graph)?;
        // A softmax expansion adds four nodes per substituted one.
        let substituted = graph.nodes.len().saturating_sub(before) / 4;
        stages.prepare = Some(PrepareStage { substituted_nodes: substituted });
    }

    if config.passes.contains(&PassName::Prune) {
        let plan = config.prune.as_ref().expect("validated");
        let mut per_layer = BTreeMap::new();
        let dense_before = graph.clone();
        for layer in prunable_layers(&graph)? {
            let layer_config = plan.for_layer(&layer.node_id);
            let weight = graph.weights[&layer.weight_id].clone();
            let (new_weight, outcome) = match &layer_config {
                LayerPruneConfig::Dense => (weight, None),
                LayerPruneConfig::Pattern { entries, k, rate } => {
                    if !layer.is_conv {
                        return Err(CliError::Validation(format!(
                            "pattern scheme on non-conv layer `{}`",
                            layer.node_id
                        )));
                    }
                    let library = derive_pattern_library(&[&weight], *k, *entries)?;
                    let mut assignment = assign_patterns(&weight, &library)?;
                    if *rate > 0.0 {
                        assignment = connectivity_prune(&weight, &assignment, *rate)?;
                    }
                    let outcome = apply_pattern_pruning(&weight, &library, &assignment)?;
                    pattern_layers.insert(
                        layer.weight_id.clone(),
                        PatternLayer { library, assignment },
                    );
                    let reduction = outcome.reduction();
                    (
                        outcome.pruned,
                        Some(LayerPruneOutcome {
                            scheme: format!("pattern({entries},{k})r{rate}"),
                            reduction,
                        }),
                    )
                }
                LayerPruneConfig::Block { block, mode, rate } => {
                    let (view, conv_dims) = if layer.is_conv {
                        (
                            conv_to_gemm(&weight)?,
                            Some((
                                layer.weight_shape[1],
                                (layer.weight_shape[2], layer.weight_shape[3]),
                            )),
                        )
                    } else {
                        (weight.clone(), None)
                    };
                    let bsm = block_prune(&view, (block[0], block[1]), *rate, *mode)?;
                    let reduction = bsm.achieved_rate();
                    let pruned = match conv_dims {
                        Some((cin, kernel)) => gemm_to_conv(&bsm.values, cin, kernel)?,
                        None => bsm.values,
                    };
                    (
                        pruned,
                        Some(LayerPruneOutcome {
                            scheme: format!("block({}x{},{:?})r{rate}", block[0], block[1], mode),
                            reduction,
                        }),
                    )
                }
            };
            graph.weights.insert(layer.weight_id.clone(), new_weight);
            if let Some(o) = outcome {
                per_layer.insert(layer.node_id.clone(), o);
            }
        }
        let summary = pruning_report(&dense_before, &graph, &calibration)?;
        stages.prune = Some(PruneStage {
            rate: summary.rate,
            removed_l2_fraction: summary.removed_l2_fraction,
            distortion: summary.distortion,
            per_layer,
        });
    }

    if config.passes.contains(&PassName::Rewrite) {
        let rules = builtin_rules()?;
        let (rewritten, log) = apply_rewrites(&graph, rules, 3 * graph.nodes.len() + 16)?;
        graph = rewritten;
        stages.rewrite = Some(log);
    }

    if config.passes.contains(&PassName::Fusion) {
        let layers_before = graph.nodes.len();
        let plan = plan_fusion_with(&graph, config.fusion_threshold)?;
        graph = apply_fusion(&graph, &plan)?;
        stages.fusion = Some(FusionStage {
            layers_before,
            layers_after: graph.nodes.len(),
            groups: plan.groups.len(),
            multi_node_groups: plan.groups.iter().filter(|g| g.nodes.len() > 1).count(),
            predicted_bytes_eliminated: plan
                .groups
                .iter()
                .map(|g| g.predicted_bytes_eliminated)
                .sum(),
            profile_threshold_bytes: plan.profile_threshold_bytes,
        });
    }

    // Engine run over the calibration inputs, collecting outputs for the
    // equivalence check.
    let mut outputs_per_feed: Vec<Vec<xgir_core::Tensor>> = Vec::new();
    let engine_report = match config.engine {
        EngineKind::Dense => {
            let mut eliminated_total = 0u64;
            for feed in &calibration {
                let (values, eliminated) = execute_with_fusion(&graph, feed)?;
                eliminated_total += eliminated;
                outputs_per_feed
                    .push(graph_outputs(&graph, &values)?.into_iter().cloned().collect());
            }
            EngineReport::Dense {
                bytes_eliminated_per_input: eliminated_total / calibration.len() as u64,
            }
        }
        EngineKind::Fkw => {
            let engine = FkwEngine::build(&graph, &pattern_layers, (config.tile[0], config.tile[1]))?;
            if engine.layer_ids().is_empty() && !pattern_layers.is_empty() {
                return Err(CliError::Validation(
                    "fkw engine built no layers despite pattern pruning".into(),
                ));
            }
            let mut per_layer: BTreeMap<String, LoadStats> = BTreeMap::new();
            for feed in &calibration {
                let (values, stats) = engine.execute(&graph, feed)?;
                for (k, v) in stats {
                    per_layer.insert(k, v); // load stats are data-independent
                }
                outputs_per_feed
                    .push(graph_outputs(&graph, &values)?.into_iter().cloned().collect());
            }
            let mut total = LoadStats::default();
            for s in per_layer.values() {
                total.merge(s);
            }
            let mut formats = BTreeMap::new();
            for id in engine.layer_ids() {
                let (fkw, _) = engine.layer(id).expect("listed");
                let weight_id = conv_weight_id(&graph, id).ok_or_else(|| {
                    CliError::Validation(format!("fkw layer `{id}` has no weight"))
                })?;
                formats.insert(
                    id.clone(),
                    compare_formats(&graph.weights[&weight_id], fkw)?,
                );
            }
            if let Some(path) = &config.emit_fkw {
                let entries: Vec<BlobEntry> = engine
                    .layer_ids()
                    .into_iter()
                    .map(|id| {
                        let (fkw, _) = engine.layer(id).expect("listed");
                        let bytes = fkw.to_bytes();
                        BlobEntry {
                            name: id.clone(),
                            dtype: DTYPE_TAGGED_FKW,
                            dims: vec![bytes.len()],
                            bytes,
                        }
                    })
                    .collect();
                std::fs::write(path, write_xgwt(&entries)?)?;
            }
            EngineReport::Fkw { per_layer, total, formats }
        }
        EngineKind::Reuse => {
            let engine = ReuseEngine::new(config.reuse_config()?);
            let mut per_layer: BTreeMap<String, ReuseStats> = BTreeMap::new();
            let mut max_abs = 0f32;
            let mut max_rel = 0f32;
            for feed in &calibration {
                let (values, stats) = engine.execute(&graph, feed)?;
                for (k, v) in stats {
                    per_layer.entry(k).or_default().merge(&v);
                }
                let dense_values = execute_reference(&graph, feed)?;
                for o in &graph.outputs {
                    let (a, r) = xgen_backend::reuse_error(&dense_values[o], &values[o]);
                    max_abs = max_abs.max(a);
                    max_rel = max_rel.max(r);
                }
                outputs_per_feed
                    .push(graph_outputs(&graph, &values)?.into_iter().cloned().collect());
            }
            let mut total = ReuseStats::default();
            for s in per_layer.values() {
                total.merge(s);
            }
            EngineReport::Reuse {
                savings_ratio: total.savings_ratio(),
                per_layer,
                total,
                max_abs_error: max_abs,
                max_rel_error: max_rel,
            }
        }
    };

    // End-to-end equivalence versus the unoptimized model.
    let mut worst = 0f32;
    for (feed, outs) in calibration.iter().zip(&outputs_per_feed) {
        let reference = execute_reference(&original, feed)?;
        for (o, got) in original.outputs.iter().zip(outs) {
            worst = worst.max(max_rel_error(got, &reference[o]));
        }
    }
    let passed = config.tolerance.map_or(true, |t| worst <= t);
    let equivalence = Equivalence {
        max_rel_error: worst,
        tolerance: config.tolerance,
        passed,
        flops_before: flops_dense,
        flops_after: count_flops(&graph)?.total,
        flops_after_effective: xgen_search::effective_flops(&graph)?,
    };

    let report = Report {
        version: crate::report::REPORT_VERSION,
        model: ModelSummary {
            source: config.model.clone(),
            nodes: original.nodes.len(),
            weights: original.weights.len(),
            weight_bytes: original.weights.values().map(|t| t.byte_len() as u64).sum(),
            flops_dense,
        },
        stages,
        engine: engine_report,
        equivalence,
    };
    let gate_violation = match (config.tolerance, passed) {
        (Some(t), false) => Some((worst, t)),
        _ => None,
    };
    Ok(PipelineOutcome { report, gate_violation })
}

/// Weight value id of a conv node, searching fused members too.
fn conv_weight_id(g: &Graph, node_id: &str) -> Option<String> {
    for node in &g.nodes {
        if node.id == node_id {
            return node.inputs.get(1).cloned();
        }
        if let Op::Fused { members } = &node.op {
            for m in members {
                if m.id == node_id {
                    return m.inputs.get(1).cloned();
                }
            }
        }
    }
    None
}
