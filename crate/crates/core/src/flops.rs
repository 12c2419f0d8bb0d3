//! FLOP and intermediate-byte accounting under a fixed convention.
//!
//! The convention (applied uniformly so pass profitability is comparable):
//!
//! * unary/binary elementwise: 1 per output element
//! * reduction over an axis of length `n`: `n` per output element
//! * `Conv2D` / `MatMul`: 2 per multiply-accumulate
//! * `Softmax`: 4 per element (max, exp, sum, divide)
//! * pooling: `kh*kw` per output element
//! * `Transpose` / `Concat` / `Gather` / `Broadcast`: 1 per output element
//!   (data movement; nonzero so removing them is visible to pass costing)
//! * `Reshape`: 0 (row-major metadata change)
//! * `Fused`: sum over members
//!
//! `intermediate_bytes` counts every non-output tensor produced by a node
//! once, at 4 bytes per element.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::graph::{Graph, GraphError, NodeId};
use crate::ops::{fused_external_inputs, Op};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub per_node: BTreeMap<NodeId, u64>,
    pub total: u64,
    pub intermediate_bytes: u64,
}

/// FLOPs of one operator given its input shapes and output shape.
pub fn op_flops(op: &Op, ins: &[&[usize]], out: &[usize]) -> u64 {
    let out_elems: u64 = out.iter().product::<usize>() as u64;
    match op {
        Op::Conv2D { .. } => {
            // 2 * Cout*Cin*kh*kw * N*Hout*Wout
            let w = ins[1];
            let macs = (w.iter().product::<usize>() * out[0] * out[2] * out[3]) as u64;
            2 * macs
        }
        Op::MatMul => {
            let (a, b) = (ins[0], ins[1]);
            2 * (a[0] * a[1] * b[1]) as u64
        }
        Op::Add
        | Op::Sub
        | Op::Mul
        | Op::Div
        | Op::Sqrt
        | Op::Square
        | Op::Recip
        | Op::Abs
        | Op::Exp
        | Op::Relu
        | Op::Sigmoid
        | Op::Tanh => out_elems,
        Op::Softmax { .. } => 4 * out_elems,
        Op::ReduceSum { axis } | Op::ReduceProd { axis } => ins[0][*axis] as u64 * out_elems,
        Op::MaxPool { kernel, .. } | Op::AvgPool { kernel, .. } => {
            (kernel.0 * kernel.1) as u64 * out_elems
        }
        Op::Reshape { .. } => 0,
        Op::Transpose { .. } | Op::Concat { .. } | Op::Gather { .. } | Op::Broadcast { .. } => {
            out_elems
        }
        Op::Fused { members } => {
            // Members resolve shapes through a local environment.
            let externals = fused_external_inputs(members);
            let mut env: BTreeMap<&str, Vec<usize>> = externals
                .iter()
                .zip(ins)
                .map(|(id, s)| (id.as_str(), s.to_vec()))
                .collect();
            let mut total = 0u64;
            for m in members {
                let shapes: Vec<Vec<usize>> = m
                    .inputs
                    .iter()
                    .map(|i| env.get(i.as_str()).cloned().unwrap_or_default())
                    .collect();
                let views: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
                let mout = m.op.infer_shape(&views).unwrap_or_default();
                total += op_flops(&m.op, &views, &mout);
                env.insert(m.id.as_str(), mout);
            }
            total
        }
    }
}

/// Per-node FLOPs and total intermediate bytes for a valid graph.
pub fn count_flops(g: &Graph) -> Result<FlopReport, GraphError> {
    let shapes = g.infer_shapes()?;
    let mut per_node = BTreeMap::new();
    let mut total = 0u64;
    let mut intermediate_bytes = 0u64;
    for node in &g.nodes {
        let ins: Vec<&[usize]> = node
            .inputs
            .iter()
            .map(|i| shapes[i].as_slice())
            .collect();
        let out = &shapes[&node.id];
        let flops = op_flops(&node.op, &ins, out);
        total += flops;
        per_node.insert(node.id.clone(), flops);
        if !g.is_graph_output(&node.id) {
            intermediate_bytes += 4 * out.iter().product::<usize>() as u64;
        }
    }
    Ok(FlopReport {
        per_node,
        total,
        intermediate_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn elementwise_mul_six_flops() {
        let g = Graph::builder()
            .input("a", vec![2, 3])
            .input("b", vec![2, 3])
            .node("m", Op::Mul, &["a", "b"])
            .outputs(&["m"])
            .build();
        let report = count_flops(&g).unwrap();
        assert_eq!(report.per_node["m"], 6);
        assert_eq!(report.total, 6);
        assert_eq!(report.intermediate_bytes, 0); // the only product is an output
    }

    #[test]
    fn reduce_sum_inner_axis() {
        // ReduceSum over the inner axis of 2x3: 3 per output element, 2 output
        // elements -> 6 flops, output bytes 8 (counted as intermediate here).
        let g = Graph::builder()
            .input("a", vec![2, 3])
            .node("s", Op::ReduceSum { axis: 1 }, &["a"])
            .node("r", Op::Relu, &["s"])
            .outputs(&["r"])
            .build();
        let report = count_flops(&g).unwrap();
        assert_eq!(report.per_node["s"], 6);
        assert_eq!(report.intermediate_bytes, 8);
    }

    #[test]
    fn conv_macs_counted_twice() {
        // Cout=4, Cin=3, 3x3 kernel, 8x8 output: 4*3*9*64*2 = 13824.
        let g = Graph::builder()
            .input("x", vec![1, 3, 8, 8])
            .weight("w", Tensor::zeros(vec![4, 3, 3, 3]).unwrap())
            .node("c", Op::Conv2D { stride: (1, 1), pad: (1, 1) }, &["x", "w"])
            .outputs(&["c"])
            .build();
        let report = count_flops(&g).unwrap();
        assert_eq!(report.per_node["c"], 13824);
    }

    #[test]
    fn total_is_sum_and_removal_decreases() {
        let g = Graph::builder()
            .input("a", vec![2, 3])
            .node("x", Op::Exp, &["a"])
            .node("y", Op::Abs, &["x"])
            .node("z", Op::Relu, &["y"])
            .outputs(&["z"])
            .build();
        let report = count_flops(&g).unwrap();
        assert_eq!(report.total, report.per_node.values().sum::<u64>());

        let mut smaller = g.clone();
        smaller.nodes.retain(|n| n.id != "z");
        smaller.outputs = vec!["y".into()];
        let restricted = count_flops(&smaller).unwrap();
        assert!(restricted.total < report.total);
    }
}
