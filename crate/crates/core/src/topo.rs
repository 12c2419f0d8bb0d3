//! Deterministic topological ordering.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use crate::graph::{Graph, GraphError, NodeId};

/// Topological order of the graph's nodes: every node appears after all of
/// its producers, ties broken by ascending node id.
///
/// Input ids that do not resolve to a node (graph inputs, weights, or
/// dangling references) impose no ordering constraint here; dangling values
/// are a validation concern.
pub fn topo_order(g: &Graph) -> Result<Vec<NodeId>, GraphError> {
    let index: HashMap<&str, usize> = g
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut indegree = vec![0usize; g.nodes.len()];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); g.nodes.len()];
    for (i, node) in g.nodes.iter().enumerate() {
        for input in &node.inputs {
            if let Some(&p) = index.get(input.as_str()) {
                indegree[i] += 1;
                dependents[p].push(i);
            }
        }
    }

    let mut ready: BinaryHeap<Reverse<(&str, usize)>> = g
        .nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| indegree[*i] == 0)
        .map(|(i, n)| Reverse((n.id.as_str(), i)))
        .collect();

    let mut order = Vec::with_capacity(g.nodes.len());
    while let Some(Reverse((_, i))) = ready.pop() {
        order.push(g.nodes[i].id.clone());
        for &d in &dependents[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                ready.push(Reverse((g.nodes[d].id.as_str(), d)));
            }
        }
    }

    if order.len() != g.nodes.len() {
        let stuck = g
            .nodes
            .iter()
            .enumerate()
            .find(|(i, _)| indegree[*i] > 0)
            .map(|(_, n)| n.id.clone())
            .unwrap_or_default();
        return Err(GraphError::Cycle(stuck));
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Op;

    #[test]
    fn chain_in_order() {
        let g = Graph::builder()
            .input("x", vec![2])
            .node("a", Op::Relu, &["x"])
            .node("b", Op::Relu, &["a"])
            .node("c", Op::Relu, &["b"])
            .outputs(&["c"])
            .build();
        assert_eq!(topo_order(&g).unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn diamond_ties_broken_by_id() {
        // a -> {c, b} -> d; b and c both depend only on a, so ascending id
        // puts b before c regardless of insertion order.
        let g = Graph::builder()
            .input("x", vec![2])
            .node("a", Op::Relu, &["x"])
            .node("c", Op::Abs, &["a"])
            .node("b", Op::Exp, &["a"])
            .node("d", Op::Add, &["b", "c"])
            .outputs(&["d"])
            .build();
        assert_eq!(topo_order(&g).unwrap(), vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn cycle_detected() {
        let mut g = Graph::builder()
            .input("x", vec![2])
            .node("a", Op::Add, &["x", "b"])
            .outputs(&["b"])
            .build();
        g.nodes.push(crate::graph::OperatorNode::new(
            "b",
            Op::Relu,
            vec!["a".into()],
        ));
        assert!(matches!(topo_order(&g), Err(GraphError::Cycle(_))));
    }
}
