//! The compiler cost model: sparsity-aware FLOPs plus weighted load counts.
//!
//! Effective FLOPs follow the `xgir_core::flops` convention except that
//! convolution and matmul layers whose weight is a graph constant count only
//! nonzero weights: each surviving conv weight participates in
//! `N * Hout * Wout` multiply-accumulates, each surviving matmul weight in
//! `m`. Dense weights reproduce `count_flops` exactly.

use std::collections::BTreeMap;

use xgir_core::flops::op_flops;
use xgir_core::graph::{Graph, GraphError};
use xgir_core::ops::{fused_external_inputs, Op};

/// Sparsity-aware total FLOPs of a graph.
pub fn effective_flops(g: &Graph) -> Result<u64, GraphError> {
    let shapes = g.infer_shapes()?;
    let mut total = 0u64;
    for node in &g.nodes {
        total += node_effective_flops(g, node, &|v| shapes.get(v).cloned())?;
    }
    Ok(total)
}

fn node_effective_flops(
    g: &Graph,
    node: &xgir_core::graph::OperatorNode,
    shape_of: &dyn Fn(&str) -> Option<Vec<usize>>,
) -> Result<u64, GraphError> {
    let ins: Vec<Vec<usize>> = node
        .inputs
        .iter()
        .map(|i| shape_of(i).ok_or_else(|| GraphError::UnknownValue(i.clone())))
        .collect::<Result<_, _>>()?;
    let views: Vec<&[usize]> = ins.iter().map(|s| s.as_slice()).collect();
    let out = node.op.infer_shape(&views).map_err(|detail| GraphError::Shape {
        node: node.id.clone(),
        detail,
    })?;

    Ok(match &node.op {
        Op::Conv2D { .. } => match g.weights.get(&node.inputs[1]) {
            Some(w) => 2 * w.count_nonzero() as u64 * (out[0] * out[2] * out[3]) as u64,
            None => op_flops(&node.op, &views, &out),
        },
        Op::MatMul => match g.weights.get(&node.inputs[1]) {
            Some(w) => 2 * w.count_nonzero() as u64 * out[0] as u64,
            None => op_flops(&node.op, &views, &out),
        },
        Op::Fused { members } => {
            let externals = fused_external_inputs(members);
            let mut env: BTreeMap<String, Vec<usize>> = externals
                .iter()
                .zip(&ins)
                .map(|(id, s)| (id.clone(), s.clone()))
                .collect();
            let mut sum = 0u64;
            for m in members {
                let lookup = |v: &str| env.get(v).cloned().or_else(|| shape_of(v));
                sum += node_effective_flops(g, m, &lookup)?;
                let m_ins: Vec<Vec<usize>> = m
                    .inputs
                    .iter()
                    .map(|i| lookup(i).ok_or_else(|| GraphError::UnknownValue(i.clone())))
                    .collect::<Result<_, _>>()?;
                let m_views: Vec<&[usize]> = m_ins.iter().map(|s| s.as_slice()).collect();
                let m_out = m.op.infer_shape(&m_views).map_err(|detail| GraphError::Shape {
                    node: m.id.clone(),
                    detail,
                })?;
                env.insert(m.id.clone(), m_out);
            }
            sum
        }
        _ => op_flops(&node.op, &views, &out),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use xgir_core::flops::count_flops;
    use xgir_core::zoo;

    #[test]
    fn dense_model_matches_count_flops() {
        for seed in 0..10u64 {
            let g = zoo::random_model(seed);
            assert_eq!(
                effective_flops(&g).unwrap(),
                count_flops(&g).unwrap().total,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn zeroing_weights_reduces_flops() {
        let g = zoo::toy_cnn6(4);
        let dense = effective_flops(&g).unwrap();
        let mut pruned = g.clone();
        let mut w = pruned.weights["conv2.w"].clone();
        for v in w.data_mut().iter_mut().take(500) {
            *v = 0.0;
        }
        pruned.weights.insert("conv2.w".into(), w);
        let sparse = effective_flops(&pruned).unwrap();
        assert!(sparse < dense);
        // Exactly: 500 zeroed weights x 64 output positions x 2.
        assert_eq!(dense - sparse, 500 * 64 * 2);
    }
}
