//! Model preparation: replace operations the backends handle poorly with
//! equivalent compositions of friendlier ones. Each table entry is verified
//! semantically equivalent by randomized testing when the table is built.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xgir_core::exec::execute_reference;
use xgir_core::graph::{Graph, OperatorNode};
use xgir_core::max_rel_error;
use xgir_core::ops::Op;
use xgir_core::tensor::Tensor;
use xgir_core::topo;

use crate::SearchError;

/// One substitution: which operator kind it replaces and how to expand a
/// matching node into an equivalent subgraph. The expansion's exit node
/// takes over the original node's id.
pub struct Substitution {
    pub name: &'static str,
    pub matches: fn(&Op) -> bool,
    /// Build replacement nodes for `node` whose input shapes are `ins`.
    /// Non-exit nodes get ids derived from `fresh`.
    pub expand: fn(node: &OperatorNode, ins: &[Vec<usize>], fresh: &mut dyn FnMut(&str) -> String) -> Vec<OperatorNode>,
}

fn softmax_expand(
    node: &OperatorNode,
    ins: &[Vec<usize>],
    fresh: &mut dyn FnMut(&str) -> String,
) -> Vec<OperatorNode> {
    let Op::Softmax { axis } = node.op else {
        unreachable!("matches() gates on Softmax")
    };
    let shape = &ins[0];
    let x = node.inputs[0].clone();
    let e = fresh("exp");
    let s = fresh("sum");
    let r = fresh("keep");
    let b = fresh("bcast");
    let mut reduced_keepdim = shape.clone();
    reduced_keepdim[axis] = 1;
    vec![
        OperatorNode::new(e.clone(), Op::Exp, vec![x]),
        OperatorNode::new(s.clone(), Op::ReduceSum { axis }, vec![e.clone()]),
        OperatorNode::new(r.clone(), Op::Reshape { shape: reduced_keepdim }, vec![s]),
        OperatorNode::new(b.clone(), Op::Broadcast { shape: shape.clone() }, vec![r]),
        OperatorNode::new(node.id.clone(), Op::Div, vec![e, b]),
    ]
}

fn builtin_table_unchecked() -> Vec<Substitution> {
    vec![Substitution {
        name: "softmax_to_exp_sum_div",
        matches: |op| matches!(op, Op::Softmax { .. }),
        expand: softmax_expand,
    }]
}

/// The builtin substitution table, self-tested on first use (randomized
/// equivalence on 100 bindings per entry, 1e-5 relative tolerance).
pub fn builtin_substitutions() -> Result<&'static [Substitution], SearchError> {
    static CACHE: OnceLock<Result<Vec<Substitution>, (&'static str, String)>> = OnceLock::new();
    let cached = CACHE.get_or_init(|| {
        let table = builtin_table_unchecked();
        for sub in &table {
            if let Err(detail) = self_test(sub) {
                return Err((sub.name, detail));
            }
        }
        Ok(table)
    });
    match cached {
        Ok(table) => Ok(table),
        Err((name, detail)) => Err(SearchError::SubstitutionSelfTest {
            name,
            detail: detail.clone(),
        }),
    }
}

fn self_test(sub: &Substitution) -> Result<(), String> {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.gen_range(1..=4usize);
        let n = rng.gen_range(2..=5usize);
        let axis = rng.gen_range(0..2usize);
        let node = OperatorNode::new("probe", Op::Softmax { axis }, vec!["x".into()]);
        if !(sub.matches)(&node.op) {
            continue;
        }
        let g = Graph::builder()
            .input("x", vec![m, n])
            .node("probe", Op::Softmax { axis }, &["x"])
            .outputs(&["probe"])
            .build();
        let expanded = prepare_model_with(&g, std::slice::from_ref(sub))
            .map_err(|e| format!("expansion failed: {e}"))?;
        let data: Vec<f32> = (0..m * n).map(|_| rng.gen_range(-3.0f32..=3.0)).collect();
        let feed = BTreeMap::from([(
            "x".to_string(),
            Tensor::from_vec(vec![m, n], data).expect("valid"),
        )]);
        let want = execute_reference(&g, &feed).map_err(|e| e.to_string())?;
        let got = execute_reference(&expanded, &feed).map_err(|e| e.to_string())?;
        let err = max_rel_error(&got["probe"], &want["probe"]);
        if !(err < 1e-5) {
            return Err(format!("binding {seed}: rel error {err}"));
        }
    }
    Ok(())
}

/// Replace every table-matched operation with its expansion. Idempotent:
/// expansions contain no matched operators.
pub fn prepare_model(g: &Graph) -> Result<Graph, SearchError> {
    prepare_model_with(g, builtin_substitutions()?)
}

pub fn prepare_model_with(g: &Graph, table: &[Substitution]) -> Result<Graph, SearchError> {
    let mut out = g.clone();
    let order = topo::topo_order(&out)?;
    for id in &order {
        let Some(node) = out.node(id).cloned() else { continue };
        let Some(sub) = table.iter().find(|s| (s.matches)(&node.op)) else {
            continue;
        };
        let shapes = out.infer_shapes()?;
        let ins: Vec<Vec<usize>> = node.inputs.iter().map(|i| shapes[i].clone()).collect();
        let mut counter = 0usize;
        let mut fresh = |hint: &str| {
            counter += 1;
            out_fresh(&out, &format!("{id}.{hint}{counter}"))
        };
        let replacement = (sub.expand)(&node, &ins, &mut fresh);
        let pos = out.nodes.iter().position(|n| n.id == *id).expect("node exists");
        out.nodes.remove(pos);
        for (k, new_node) in replacement.into_iter().enumerate() {
            out.nodes.insert(pos + k, new_node);
        }
    }
    Ok(out)
}

fn out_fresh(g: &Graph, base: &str) -> String {
    g.fresh_id(base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use xgir_core::validate::validate_graph;
    use xgir_core::zoo;

    #[test]
    fn empty_table_is_identity() {
        let g = zoo::toy_transformer2(1);
        assert_eq!(prepare_model_with(&g, &[]).unwrap(), g);
    }

    #[test]
    fn softmax_expansion_preserves_outputs() {
        let g = zoo::toy_transformer2(1);
        let prepared = prepare_model(&g).unwrap();
        assert!(validate_graph(&prepared).is_ok());
        assert!(prepared
            .nodes
            .iter()
            .all(|n| !matches!(n.op, Op::Softmax { .. })));
        for feed in zoo::random_inputs(&g, 1, 3) {
            let want = execute_reference(&g, &feed).unwrap();
            let got = execute_reference(&prepared, &feed).unwrap();
            for o in &g.outputs {
                let err = max_rel_error(&got[o], &want[o]);
                assert!(err < 1e-5, "output {o}: {err}");
            }
        }
    }

    #[test]
    fn substitution_is_idempotent() {
        let g = zoo::toy_transformer2(2);
        let once = prepare_model(&g).unwrap();
        let twice = prepare_model(&once).unwrap();
        assert_eq!(once, twice);
    }
}
