//! Candidate evaluation with the compiler in the loop: apply the genes'
//! pruning, run rewrite and fusion, build backend plans, and score the
//! result by the cost model plus a calibration distortion proxy.

use std::collections::BTreeMap;

use xgen_backend::engine::{FkwEngine, PatternLayer};
use xgen_opt::fusion::{apply_fusion, plan_fusion};
use xgen_opt::rewrite::{apply_rewrites, builtin_rules};
use xgen_prune::{
    apply_pattern_pruning, assign_patterns, block_prune, connectivity_prune, conv_to_gemm,
    derive_pattern_library, gemm_to_conv,
};
use xgir_core::exec::execute_reference;
use xgir_core::graph::Graph;
use xgir_core::tensor::Tensor;

use crate::cost::effective_flops;
use crate::space::{Candidate, Gene, PrunableLayer, Scheme, SearchSpace};
use crate::SearchError;

/// The compiled form of a candidate: the optimized graph plus backend state.
pub struct CompiledCandidate {
    pub graph: Graph,
    pub pattern_layers: BTreeMap<String, PatternLayer>,
    pub cost: f64,
    pub flops: u64,
    pub optimized_loads: u64,
}

/// Apply one gene to one layer's weight, returning the pruned weight and the
/// pattern state when the scheme is pattern-based.
fn apply_gene(
    layer: &PrunableLayer,
    weight: &Tensor,
    gene: &Gene,
) -> Result<(Tensor, Option<PatternLayer>), SearchError> {
    let infeasible = |detail: String| SearchError::InfeasibleGene {
        layer: layer.node_id.clone(),
        detail,
    };
    match &gene.scheme {
        Scheme::Dense => Ok((weight.clone(), None)),
        Scheme::Pattern { entries, k } => {
            if !layer.is_conv {
                return Err(infeasible("pattern scheme on a non-conv layer".into()));
            }
            let (kh, kw) = (layer.weight_shape[2], layer.weight_shape[3]);
            if kh * kw > 16 {
                return Err(infeasible(format!(
                    "pattern scheme on a {kh}x{kw} kernel; use block pruning"
                )));
            }
            if *entries > kh * kw {
                return Err(infeasible(format!("{entries} entries on a {kh}x{kw} kernel")));
            }
            let library = derive_pattern_library(&[weight], *k, *entries)?;
            let mut assignment = assign_patterns(weight, &library)?;
            if gene.rate > 0.0 {
                assignment = connectivity_prune(weight, &assignment, gene.rate)?;
            }
            let outcome = apply_pattern_pruning(weight, &library, &assignment)?;
            Ok((outcome.pruned, Some(PatternLayer { library, assignment })))
        }
        Scheme::Block { br, bc, mode } => {
            let (view, cin_kernel) = if layer.is_conv {
                (
                    conv_to_gemm(weight)?,
                    Some((layer.weight_shape[1], (layer.weight_shape[2], layer.weight_shape[3]))),
                )
            } else {
                (weight.clone(), None)
            };
            let bsm = block_prune(&view, (*br, *bc), gene.rate, *mode)?;
            let pruned = match cin_kernel {
                Some((cin, kernel)) => gemm_to_conv(&bsm.values, cin, kernel)?,
                None => bsm.values,
            };
            Ok((pruned, None))
        }
    }
}

/// Prune per genes and run the optimization pipeline (rewrite, fusion,
/// backend build). Deterministic.
pub fn compile_candidate(
    space: &SearchSpace,
    model: &Graph,
    candidate: &Candidate,
) -> Result<CompiledCandidate, SearchError> {
    let layers = space.validate_against(model)?;
    if candidate.genes.len() != space.layers.len() {
        return Err(SearchError::SpaceMismatch(format!(
            "genome has {} genes for {} layers",
            candidate.genes.len(),
            space.layers.len()
        )));
    }

    let mut pruned = model.clone();
    let mut pattern_layers = BTreeMap::new();
    for ((layer, domain), &gene_idx) in layers.iter().zip(&space.layers).zip(&candidate.genes) {
        let gene = domain.choices.get(gene_idx).ok_or_else(|| {
            SearchError::SpaceMismatch(format!(
                "gene index {gene_idx} out of domain for layer `{}`",
                domain.layer
            ))
        })?;
        let weight = &model.weights[&layer.weight_id];
        let (new_weight, pattern) = apply_gene(layer, weight, gene)?;
        pruned.weights.insert(layer.weight_id.clone(), new_weight);
        if let Some(p) = pattern {
            pattern_layers.insert(layer.weight_id.clone(), p);
        }
    }

    let rules = builtin_rules()?;
    let max_steps = 3 * pruned.nodes.len() + 16;
    let (rewritten, _) = apply_rewrites(&pruned, rules, max_steps)?;
    let plan = plan_fusion(&rewritten)?;
    let fused = apply_fusion(&rewritten, &plan)?;

    let engine = FkwEngine::build(&fused, &pattern_layers, (4, 4))?;
    let mut optimized_loads = 0u64;
    for id in engine.layer_ids() {
        let (fkw, plan) = engine.layer(id).expect("listed layer");
        optimized_loads += xgen_backend::exec::trace_loads(fkw, plan).optimized_loads;
    }

    let flops = effective_flops(&fused)?;
    let cost = space.flop_weight * flops as f64 + space.load_weight * optimized_loads as f64;
    Ok(CompiledCandidate {
        graph: fused,
        pattern_layers,
        cost,
        flops,
        optimized_loads,
    })
}

/// Mean relative L2 of the candidate's outputs against baseline outputs over
/// the calibration set.
pub fn distortion_against(
    candidate_graph: &Graph,
    baseline_outputs: &[Vec<Tensor>],
    calibration: &[BTreeMap<String, Tensor>],
) -> Result<f64, SearchError> {
    let mut sum = 0f64;
    let mut count = 0usize;
    for (feed, base) in calibration.iter().zip(baseline_outputs) {
        let values = execute_reference(candidate_graph, feed)?;
        for (o, b) in candidate_graph.outputs.iter().zip(base) {
            let got = &values[o];
            let mut num = 0f64;
            let mut den = 0f64;
            for (a, e) in got.data().iter().zip(b.data()) {
                num += ((*a - *e) as f64).powi(2);
                den += (*e as f64).powi(2);
            }
            sum += num.sqrt() / den.sqrt().max(f64::MIN_POSITIVE);
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Evaluate a candidate: `(cost, distortion)` against the all-dense baseline
/// run through the same pipeline.
pub fn evaluate_candidate(
    space: &SearchSpace,
    model: &Graph,
    candidate: &Candidate,
    calibration: &[BTreeMap<String, Tensor>],
) -> Result<(f64, f64), SearchError> {
    let baseline = compile_candidate(space, model, &Candidate::all_dense(space))?;
    let baseline_outputs = baseline_outputs(&baseline.graph, calibration)?;
    let compiled = compile_candidate(space, model, candidate)?;
    let distortion = distortion_against(&compiled.graph, &baseline_outputs, calibration)?;
    Ok((compiled.cost, distortion))
}

/// Outputs of a graph on every calibration feed, in output order.
pub fn baseline_outputs(
    g: &Graph,
    calibration: &[BTreeMap<String, Tensor>],
) -> Result<Vec<Vec<Tensor>>, SearchError> {
    calibration
        .iter()
        .map(|feed| {
            let values = execute_reference(g, feed)?;
            Ok(g.outputs.iter().map(|o| values[o].clone()).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use xgir_core::zoo;

    #[test]
    fn all_dense_costs_baseline_and_zero_distortion() {
        let g = zoo::toy_cnn6(6);
        let space = SearchSpace::default_for_model(&g, 1e12).unwrap();
        let cal = zoo::random_inputs(&g, 6, 2);
        let dense = Candidate::all_dense(&space);
        let (cost, distortion) = evaluate_candidate(&space, &g, &dense, &cal).unwrap();
        assert_eq!(distortion, 0.0);
        let compiled = compile_candidate(&space, &g, &dense).unwrap();
        assert_eq!(cost, compiled.cost);
        assert!(compiled.flops > 0);
    }

    #[test]
    fn raising_one_layer_rate_never_raises_cost() {
        let g = zoo::toy_cnn6(6);
        let space = SearchSpace::default_for_model(&g, 1e12).unwrap();
        // Layer 1 (conv2) choices: dense, pattern r0, pattern r0.5, block
        // r0.5, block r5/6. Cost along increasing block rate:
        let mut genes = Candidate::all_dense(&space).genes;
        let block_half = space.layers[1]
            .choices
            .iter()
            .position(|c| matches!(c.scheme, Scheme::Block { .. }) && c.rate == 0.5)
            .unwrap();
        let block_deep = space.layers[1]
            .choices
            .iter()
            .position(|c| matches!(c.scheme, Scheme::Block { .. }) && c.rate > 0.8)
            .unwrap();
        let dense_cost = compile_candidate(&space, &g, &Candidate { genes: genes.clone() })
            .unwrap()
            .cost;
        genes[1] = block_half;
        let half_cost = compile_candidate(&space, &g, &Candidate { genes: genes.clone() })
            .unwrap()
            .cost;
        genes[1] = block_deep;
        let deep_cost = compile_candidate(&space, &g, &Candidate { genes }).unwrap().cost;
        assert!(half_cost <= dense_cost);
        assert!(deep_cost <= half_cost);
    }

    #[test]
    fn cost_equals_independent_recomputation() {
        let g = zoo::toy_cnn6(7);
        let space = SearchSpace::default_for_model(&g, 1e12).unwrap();
        let mut genes = Candidate::all_dense(&space).genes;
        // Pattern-prune conv3 so FKW loads contribute.
        genes[2] = space.layers[2]
            .choices
            .iter()
            .position(|c| matches!(c.scheme, Scheme::Pattern { .. }))
            .unwrap();
        let compiled = compile_candidate(&space, &g, &Candidate { genes }).unwrap();
        let expect = space.flop_weight * compiled.flops as f64
            + space.load_weight * compiled.optimized_loads as f64;
        assert_eq!(compiled.cost, expect);
        assert!(compiled.optimized_loads > 0);
    }

    #[test]
    fn infeasible_gene_is_reported() {
        let g = zoo::toy_cnn6(6);
        let mut space = SearchSpace::default_for_model(&g, 1e12).unwrap();
        // Force a pattern gene onto the 1x1 stem.
        space.layers[0].choices.push(Gene {
            scheme: Scheme::Pattern { entries: 4, k: 8 },
            rate: 0.0,
        });
        let idx = space.layers[0].choices.len() - 1;
        let mut genes = Candidate::all_dense(&space).genes;
        genes[0] = idx;
        match compile_candidate(&space, &g, &Candidate { genes }) {
            Err(SearchError::InfeasibleGene { .. }) => {}
            Err(other) => panic!("wrong error: {other}"),
            Ok(_) => panic!("infeasible gene accepted"),
        }
    }
}
