//! Whole-graph validation. Violations are report entries, not failures, so a
//! single pass can list everything wrong with a graph.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::graph::{Graph, GraphError, NodeId, ValueId};
use crate::ops::Arity;
use crate::topo;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Two values (node outputs, inputs, weights) share an id.
    DuplicateId { id: String },
    /// A node consumes a value that nothing defines.
    DanglingValue { node: NodeId, value: ValueId },
    /// The node set contains a dependency cycle.
    Cycle { node: NodeId },
    /// Operator attributes violate their schema.
    AttrSchema { node: NodeId, detail: String },
    /// Input shapes are inconsistent with the operator.
    ShapeMismatch { node: NodeId, detail: String },
    /// Wrong number of inputs for the operator.
    BadArity { node: NodeId, expected: Arity, got: usize },
    /// A declared graph output does not exist.
    UnknownOutput { value: ValueId },
    /// A declared graph input has an invalid shape.
    BadInputShape { name: String, shape: Vec<usize> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { id } => write!(f, "duplicate id `{id}`"),
            Violation::DanglingValue { node, value } => {
                write!(f, "node `{node}` consumes undefined value `{value}`")
            }
            Violation::Cycle { node } => write!(f, "cycle involving node `{node}`"),
            Violation::AttrSchema { node, detail } => {
                write!(f, "node `{node}` attribute schema: {detail}")
            }
            Violation::ShapeMismatch { node, detail } => {
                write!(f, "node `{node}` shape mismatch: {detail}")
            }
            Violation::BadArity { node, expected, got } => {
                write!(f, "node `{node}` expects {expected:?} inputs, got {got}")
            }
            Violation::UnknownOutput { value } => write!(f, "unknown graph output `{value}`"),
            Violation::BadInputShape { name, shape } => {
                write!(f, "graph input `{name}` has invalid shape {shape:?}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(f, "ok")
        } else {
            for v in &self.violations {
                writeln!(f, "{v}")?;
            }
            Ok(())
        }
    }
}

/// Check every graph invariant and report all violations found.
///
/// The report is empty iff the graph is valid: unique ids, no dangling
/// values, acyclic, attribute schemas satisfied, shapes consistent, and all
/// declared outputs defined.
pub fn validate_graph(g: &Graph) -> ValidationReport {
    let mut out = Vec::new();

    // Id uniqueness across inputs, weights, and node outputs.
    let mut seen: HashSet<&str> = HashSet::new();
    for inp in &g.inputs {
        if !seen.insert(inp.name.as_str()) {
            out.push(Violation::DuplicateId { id: inp.name.clone() });
        }
        if inp.shape.is_empty() || inp.shape.iter().any(|&d| d == 0) {
            out.push(Violation::BadInputShape {
                name: inp.name.clone(),
                shape: inp.shape.clone(),
            });
        }
    }
    for id in g.weights.keys() {
        if !seen.insert(id.as_str()) {
            out.push(Violation::DuplicateId { id: id.clone() });
        }
    }
    for node in &g.nodes {
        if !seen.insert(node.id.as_str()) {
            out.push(Violation::DuplicateId { id: node.id.clone() });
        }
    }

    // Dangling inputs, arity, attribute schemas.
    for node in &g.nodes {
        for input in &node.inputs {
            if !g.has_value(input) {
                out.push(Violation::DanglingValue {
                    node: node.id.clone(),
                    value: input.clone(),
                });
            }
        }
        let expected = node.op.arity();
        if !expected.accepts(node.inputs.len()) {
            out.push(Violation::BadArity {
                node: node.id.clone(),
                expected,
                got: node.inputs.len(),
            });
        }
        if let Err(detail) = node.op.check_attrs() {
            out.push(Violation::AttrSchema {
                node: node.id.clone(),
                detail,
            });
        }
    }

    // Cycles, then shapes (only meaningful on an acyclic graph with no
    // earlier structural problems on the path being inferred).
    match topo::topo_order(g) {
        Err(GraphError::Cycle(node)) => out.push(Violation::Cycle { node }),
        Err(_) => {}
        Ok(order) => {
            let mut shapes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for inp in &g.inputs {
                shapes.insert(inp.name.as_str(), inp.shape.clone());
            }
            for (id, w) in &g.weights {
                shapes.insert(id.as_str(), w.shape().to_vec());
            }
            for id in &order {
                let node = g.node(id).expect("topo order returns existing nodes");
                let ins: Option<Vec<&[usize]>> = node
                    .inputs
                    .iter()
                    .map(|i| shapes.get(i.as_str()).map(|s| s.as_slice()))
                    .collect();
                let Some(ins) = ins else { continue }; // dangling already reported
                if !node.op.arity().accepts(ins.len()) || node.op.check_attrs().is_err() {
                    continue; // arity/attr problem already reported
                }
                match node.op.infer_shape(&ins) {
                    Ok(shape) => {
                        shapes.insert(node.id.as_str(), shape);
                    }
                    Err(detail) => out.push(Violation::ShapeMismatch {
                        node: node.id.clone(),
                        detail,
                    }),
                }
            }
        }
    }

    for o in &g.outputs {
        if !g.has_value(o) {
            out.push(Violation::UnknownOutput { value: o.clone() });
        }
    }

    ValidationReport { violations: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::OperatorNode;
    use crate::ops::Op;

    #[test]
    fn mutual_cycle_reported() {
        let mut g = Graph::builder().input("x", vec![2]).outputs(&["a"]).build();
        g.nodes.push(OperatorNode::new("a", Op::Relu, vec!["b".into()]));
        g.nodes.push(OperatorNode::new("b", Op::Relu, vec!["a".into()]));
        let report = validate_graph(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Cycle { .. })));
    }

    #[test]
    fn shape_violation_reported() {
        let g = Graph::builder()
            .input("a", vec![2, 3])
            .input("b", vec![4, 3])
            .node("add", Op::Add, &["a", "b"])
            .outputs(&["add"])
            .build();
        let report = validate_graph(&g);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            &report.violations[0],
            Violation::ShapeMismatch { node, .. } if node == "add"
        ));
    }

    #[test]
    fn valid_graph_empty_report() {
        let g = Graph::builder()
            .input("x", vec![1, 2, 4, 4])
            .weight("w", crate::tensor::Tensor::zeros(vec![3, 2, 3, 3]).unwrap())
            .node("c", Op::Conv2D { stride: (1, 1), pad: (1, 1) }, &["x", "w"])
            .node("r", Op::Relu, &["c"])
            .outputs(&["r"])
            .build();
        assert!(validate_graph(&g).is_ok());
    }

    #[test]
    fn dangling_and_unknown_output() {
        let g = Graph::builder()
            .input("x", vec![2])
            .node("n", Op::Add, &["x", "ghost"])
            .outputs(&["gone"])
            .build();
        let report = validate_graph(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DanglingValue { value, .. } if value == "ghost")));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::UnknownOutput { value } if value == "gone")));
    }
}
