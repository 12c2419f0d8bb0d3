//! The tensor-operator DAG that every pass transforms.

use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use crate::ops::Op;
use crate::tensor::Tensor;
use crate::topo;

/// Identifier of a value (graph input, weight, or node output).
pub type ValueId = String;
/// Identifier of a node. A node's output value id equals its node id.
pub type NodeId = String;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown value `{0}`")]
    UnknownValue(ValueId),
    #[error("cycle detected involving node `{0}`")]
    Cycle(NodeId),
    #[error("node `{node}`: {detail}")]
    Shape { node: NodeId, detail: String },
    #[error("node `{node}`: bad attributes: {detail}")]
    Attrs { node: NodeId, detail: String },
    #[error("graph output `{0}` does not exist")]
    UnknownOutput(ValueId),
}

/// A named graph input with its declared shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub name: String,
    pub shape: Vec<usize>,
}

/// One operator application. The node's single output value carries the
/// node's own id.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorNode {
    pub id: NodeId,
    pub op: Op,
    pub inputs: Vec<ValueId>,
}

impl OperatorNode {
    pub fn new(id: impl Into<NodeId>, op: Op, inputs: Vec<ValueId>) -> Self {
        OperatorNode {
            id: id.into(),
            op,
            inputs,
        }
    }
}

/// A tensor-operator DAG: named inputs, weight constants, operator nodes, and
/// designated output values.
///
/// `Graph` values may hold structurally invalid data; [`crate::validate`]
/// reports violations rather than panicking, and the executor re-checks what
/// it relies on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Graph {
    pub inputs: Vec<GraphInput>,
    pub outputs: Vec<ValueId>,
    pub nodes: Vec<OperatorNode>,
    pub weights: BTreeMap<ValueId, Tensor>,
}

impl Graph {
    pub fn builder() -> GraphBuilder {
        GraphBuilder::default()
    }

    pub fn node(&self, id: &str) -> Option<&OperatorNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn input(&self, name: &str) -> Option<&GraphInput> {
        self.inputs.iter().find(|i| i.name == name)
    }

    /// The node producing `value`, if any (inputs and weights have none).
    pub fn producer(&self, value: &str) -> Option<&OperatorNode> {
        self.node(value)
    }

    /// Nodes consuming `value`, in node-list order. A node consuming the
    /// value twice appears twice.
    pub fn consumers(&self, value: &str) -> Vec<&OperatorNode> {
        self.nodes
            .iter()
            .flat_map(|n| n.inputs.iter().filter(|i| *i == value).map(move |_| n))
            .collect()
    }

    pub fn is_graph_output(&self, value: &str) -> bool {
        self.outputs.iter().any(|o| o == value)
    }

    /// True iff `value` exists as an input, weight, or node output.
    pub fn has_value(&self, value: &str) -> bool {
        self.weights.contains_key(value)
            || self.input(value).is_some()
            || self.node(value).is_some()
    }

    /// Infer the shape of every value in the graph.
    ///
    /// Fails on the first unresolved value, attribute, or shape
    /// inconsistency; use [`crate::validate::validate_graph`] to collect all
    /// violations instead.
    pub fn infer_shapes(&self) -> Result<BTreeMap<ValueId, Vec<usize>>, GraphError> {
        let mut shapes: BTreeMap<ValueId, Vec<usize>> = BTreeMap::new();
        for inp in &self.inputs {
            shapes.insert(inp.name.clone(), inp.shape.clone());
        }
        for (id, w) in &self.weights {
            shapes.insert(id.clone(), w.shape().to_vec());
        }
        let order = topo::topo_order(self)?;
        let by_id: HashMap<&str, &OperatorNode> =
            self.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
        for id in &order {
            let node = by_id[id.as_str()];
            node.op.check_attrs().map_err(|detail| GraphError::Attrs {
                node: node.id.clone(),
                detail,
            })?;
            let ins: Vec<&[usize]> = node
                .inputs
                .iter()
                .map(|i| {
                    shapes
                        .get(i)
                        .map(|s| s.as_slice())
                        .ok_or_else(|| GraphError::UnknownValue(i.clone()))
                })
                .collect::<Result<_, _>>()?;
            let out = node.op.infer_shape(&ins).map_err(|detail| GraphError::Shape {
                node: node.id.clone(),
                detail,
            })?;
            shapes.insert(node.id.clone(), out);
        }
        for o in &self.outputs {
            if !shapes.contains_key(o) {
                return Err(GraphError::UnknownOutput(o.clone()));
            }
        }
        Ok(shapes)
    }

    /// Generate a value id not yet used in the graph, derived from `base`.
    pub fn fresh_id(&self, base: &str) -> ValueId {
        if !self.has_value(base) {
            return base.to_string();
        }
        for k in 1u64.. {
            let candidate = format!("{base}.{k}");
            if !self.has_value(&candidate) {
                return candidate;
            }
        }
        unreachable!()
    }
}

/// Convenience builder; checks id uniqueness eagerly and leaves full
/// validation to [`crate::validate`].
#[derive(Default)]
pub struct GraphBuilder {
    graph: Graph,
    ids: HashSet<String>,
}

impl GraphBuilder {
    pub fn input(mut self, name: &str, shape: Vec<usize>) -> Self {
        assert!(self.ids.insert(name.to_string()), "duplicate id `{name}`");
        self.graph.inputs.push(GraphInput {
            name: name.to_string(),
            shape,
        });
        self
    }

    pub fn weight(mut self, id: &str, tensor: Tensor) -> Self {
        assert!(self.ids.insert(id.to_string()), "duplicate id `{id}`");
        self.graph.weights.insert(id.to_string(), tensor);
        self
    }

    pub fn node(mut self, id: &str, op: Op, inputs: &[&str]) -> Self {
        assert!(self.ids.insert(id.to_string()), "duplicate id `{id}`");
        self.graph.nodes.push(OperatorNode::new(
            id,
            op,
            inputs.iter().map(|s| s.to_string()).collect(),
        ));
        self
    }

    pub fn outputs(mut self, outputs: &[&str]) -> Self {
        self.graph.outputs = outputs.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn build(self) -> Graph {
        self.graph
    }
}
