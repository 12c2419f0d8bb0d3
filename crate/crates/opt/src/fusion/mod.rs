//! Operator fusion: seed-and-grow planning over the profitability table,
//! graph transformation into fused-group nodes, and fused execution that
//! avoids materializing intermediate results.
//!
//! Groups are chains: each member's output is consumed only by the next
//! member, so every group is connected and single-entry/single-exit. Seeds
//! are ManyToMany nodes in topological order, then everything left; a chain
//! grows upstream and downstream across edges the table marks Fuse, and
//! across Profile edges when the intermediate that fusion would eliminate is
//! at least the byte threshold.

mod mapping;

pub use mapping::{classify_mapping_type, fused_mapping_type, fusion_profitability, MappingType, Profitability};

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use xgir_core::exec::{self, ExecError};
use xgir_core::graph::{Graph, GraphError, NodeId, OperatorNode, ValueId};
use xgir_core::ops::{fused_external_inputs, Op};
use xgir_core::tensor::Tensor;
use xgir_core::topo;

/// Default byte threshold above which a Profile-verdict edge is fused.
pub const DEFAULT_PROFILE_THRESHOLD: u64 = 4096;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("inconsistent plan: {0}")]
    InconsistentPlan(String),
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FusionGroup {
    /// Member node ids in chain order; the last member is the exit.
    pub nodes: Vec<NodeId>,
    pub mapping: MappingType,
    /// Intermediate bytes fused execution will not materialize.
    pub predicted_bytes_eliminated: u64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FusionPlan {
    pub groups: Vec<FusionGroup>,
    /// Nodes excluded from planning (already-fused groups).
    pub residual: Vec<NodeId>,
    pub profile_threshold_bytes: u64,
}

impl FusionPlan {
    /// Number of layers the plan leaves after fusion.
    pub fn fused_layer_count(&self) -> usize {
        self.groups.len() + self.residual.len()
    }
}

/// Plan fusion with the default Profile threshold.
pub fn plan_fusion(g: &Graph) -> Result<FusionPlan, FusionError> {
    plan_fusion_with(g, DEFAULT_PROFILE_THRESHOLD)
}

pub fn plan_fusion_with(g: &Graph, profile_threshold: u64) -> Result<FusionPlan, FusionError> {
    let shapes = g.infer_shapes()?;
    let order = topo::topo_order(g)?;
    let by_id: HashMap<&str, &OperatorNode> =
        g.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    // Consumer node ids per value, one entry per consuming edge.
    let mut consumer_edges: HashMap<&str, Vec<&str>> = HashMap::new();
    for n in &g.nodes {
        for i in &n.inputs {
            consumer_edges.entry(i.as_str()).or_default().push(n.id.as_str());
        }
    }
    let bytes_of = |id: &str| -> u64 { 4 * shapes[id].iter().product::<usize>() as u64 };
    // The value of `tail` flows to exactly one node, which is unassigned and
    // plannable: the only legal way to extend a chain across that edge.
    let sole_consumer = |tail: &str, assigned: &HashSet<String>| -> Option<&OperatorNode> {
        if g.is_graph_output(tail) {
            return None;
        }
        let edges = consumer_edges.get(tail)?;
        let first = *edges.first()?;
        if !edges.iter().all(|&c| c == first) {
            return None;
        }
        let node = by_id[first];
        if assigned.contains(first) || matches!(node.op, Op::Fused { .. }) {
            return None;
        }
        Some(node)
    };

    let mut assigned: HashSet<String> = HashSet::new();
    let mut groups = Vec::new();
    let mut residual = Vec::new();

    let mm_seeds = order
        .iter()
        .filter(|id| classify_mapping_type(&by_id[id.as_str()].op) == MappingType::ManyToMany);
    let seeds: Vec<&NodeId> = mm_seeds.chain(order.iter()).collect();

    for seed in seeds {
        if assigned.contains(seed.as_str()) {
            continue;
        }
        let seed_node = by_id[seed.as_str()];
        if matches!(seed_node.op, Op::Fused { .. }) {
            residual.push(seed.clone());
            assigned.insert(seed.clone());
            continue;
        }

        let mut chain: Vec<&OperatorNode> = vec![seed_node];
        let mut mapping = classify_mapping_type(&seed_node.op);

        // Grow upstream while the head has exactly one distinct producer
        // whose value flows only into the head.
        loop {
            let head = chain[0];
            let producers: HashSet<&str> = head
                .inputs
                .iter()
                .filter_map(|i| by_id.get(i.as_str()).map(|n| n.id.as_str()))
                .collect();
            if producers.len() != 1 {
                break;
            }
            let p = by_id[*producers.iter().next().unwrap()];
            if assigned.contains(p.id.as_str())
                || matches!(p.op, Op::Fused { .. })
                || sole_consumer(&p.id, &assigned).map(|n| n.id.as_str()) != Some(head.id.as_str())
            {
                break;
            }
            let ptype = classify_mapping_type(&p.op);
            let ok = match fusion_profitability(ptype, mapping) {
                Profitability::Fuse => true,
                Profitability::Profile => bytes_of(&p.id) >= profile_threshold,
                Profitability::Reject => false,
            };
            if !ok {
                break;
            }
            mapping = fused_mapping_type(ptype, mapping).expect("not rejected");
            chain.insert(0, p);
        }

        // Grow downstream along sole-consumer edges.
        loop {
            let tail = chain[chain.len() - 1];
            let Some(next) = sole_consumer(&tail.id, &assigned) else { break };
            if chain.iter().any(|m| m.id == next.id) {
                break;
            }
            let ntype = classify_mapping_type(&next.op);
            let ok = match fusion_profitability(mapping, ntype) {
                Profitability::Fuse => true,
                Profitability::Profile => bytes_of(&tail.id) >= profile_threshold,
                Profitability::Reject => false,
            };
            if !ok {
                break;
            }
            mapping = fused_mapping_type(mapping, ntype).expect("not rejected");
            chain.push(next);
        }

        let predicted = chain
            .windows(2)
            .filter(|w| w[1].op.is_elementwise())
            .map(|w| bytes_of(&w[0].id))
            .sum();
        for m in &chain {
            assigned.insert(m.id.clone());
        }
        groups.push(FusionGroup {
            nodes: chain.iter().map(|m| m.id.clone()).collect(),
            mapping,
            predicted_bytes_eliminated: predicted,
        });
    }

    Ok(FusionPlan {
        groups,
        residual,
        profile_threshold_bytes: profile_threshold,
    })
}

/// Replace each multi-node group with one fused node capturing the member
/// subgraph. The fused node takes over the exit member's id, so consumers
/// and graph outputs are untouched. Single-node groups are left as they are.
pub fn apply_fusion(g: &Graph, plan: &FusionPlan) -> Result<Graph, FusionError> {
    let mut seen: HashSet<&str> = HashSet::new();
    for group in &plan.groups {
        if group.nodes.is_empty() {
            return Err(FusionError::InconsistentPlan("empty group".into()));
        }
        for id in &group.nodes {
            if g.node(id).is_none() {
                return Err(FusionError::InconsistentPlan(format!("unknown node `{id}`")));
            }
            if !seen.insert(id) {
                return Err(FusionError::InconsistentPlan(format!(
                    "node `{id}` appears in more than one group"
                )));
            }
        }
        for w in group.nodes.windows(2) {
            let (prev, next) = (&w[0], &w[1]);
            let consumers = g.consumers(prev);
            if g.is_graph_output(prev)
                || consumers.is_empty()
                || !consumers.iter().all(|c| c.id == *next)
            {
                return Err(FusionError::InconsistentPlan(format!(
                    "value `{prev}` is not consumed solely by `{next}`"
                )));
            }
        }
    }

    let mut out = g.clone();
    for group in &plan.groups {
        if group.nodes.len() < 2 {
            continue;
        }
        let members: Vec<OperatorNode> = group
            .nodes
            .iter()
            .map(|id| out.node(id).expect("checked above").clone())
            .collect();
        let exit_id = members.last().unwrap().id.clone();
        let inputs = fused_external_inputs(&members);
        let fused = OperatorNode::new(exit_id, Op::Fused { members }, inputs);

        let member_set: HashSet<&String> = group.nodes.iter().collect();
        let first_pos = out
            .nodes
            .iter()
            .position(|n| member_set.contains(&n.id))
            .expect("members exist");
        out.nodes.retain(|n| !member_set.contains(&n.id));
        out.nodes.insert(first_pos.min(out.nodes.len()), fused);
    }
    Ok(out)
}

/// Execute one fused node.
///
/// Purely elementwise chains run as a single per-element loop over the
/// composed function; anything else runs staged, with elementwise members
/// applied in place on the running buffer. Either way the arithmetic per
/// element is the scalar sequence the staged reference performs, so results
/// are bitwise identical to [`xgir_core::exec::eval_node`]. Returns the
/// output and the bytes of intermediates that were never materialized.
pub fn execute_fused(node: &OperatorNode, args: &[&Tensor]) -> Result<(Tensor, u64), ExecError> {
    let Op::Fused { members } = &node.op else {
        return Err(ExecError::BadNode {
            node: node.id.clone(),
            detail: "execute_fused needs a fused node".into(),
        });
    };
    let external: HashMap<&str, &Tensor> = node
        .inputs
        .iter()
        .map(|i| i.as_str())
        .zip(args.iter().copied())
        .collect();
    let resolve = |m: &OperatorNode, prev: Option<(&str, &Tensor)>| -> Result<Vec<Tensor>, ExecError> {
        m.inputs
            .iter()
            .map(|i| {
                if let Some((pid, pt)) = prev {
                    if i == pid {
                        return Ok(pt.clone());
                    }
                }
                external
                    .get(i.as_str())
                    .map(|t| (*t).clone())
                    .ok_or_else(|| ExecError::BadNode {
                        node: node.id.clone(),
                        detail: format!("fused member `{}` input `{i}` unresolved", m.id),
                    })
            })
            .collect()
    };

    if members.len() > 1 && members.iter().all(|m| m.op.is_elementwise()) {
        return composed_elementwise(node, members, &external);
    }

    let first = &members[0];
    let resolved = resolve(first, None)?;
    let views: Vec<&Tensor> = resolved.iter().collect();
    let mut cur = exec::eval_node(first, &views)?;
    let mut prev_id = first.id.as_str();
    let mut eliminated = 0u64;

    for m in &members[1..] {
        if m.op.is_elementwise() {
            eliminated += cur.byte_len() as u64;
            apply_elementwise_in_place(node, m, prev_id, &mut cur, &external)?;
        } else {
            let resolved = resolve(m, Some((prev_id, &cur)))?;
            let views: Vec<&Tensor> = resolved.iter().collect();
            cur = exec::eval_node(m, &views)?;
        }
        prev_id = m.id.as_str();
    }
    Ok((cur, eliminated))
}

fn composed_elementwise(
    node: &OperatorNode,
    members: &[OperatorNode],
    external: &HashMap<&str, &Tensor>,
) -> Result<(Tensor, u64), ExecError> {
    // All values in an elementwise chain share one shape.
    let shape = {
        let first_ext = members[0].inputs.first().ok_or_else(|| ExecError::BadNode {
            node: node.id.clone(),
            detail: "elementwise member with no inputs".into(),
        })?;
        external
            .get(first_ext.as_str())
            .ok_or_else(|| ExecError::BadNode {
                node: node.id.clone(),
                detail: format!("fused input `{first_ext}` unresolved"),
            })?
            .shape()
            .to_vec()
    };
    let numel: usize = shape.iter().product();
    for (_, t) in external.iter() {
        if t.shape() != shape.as_slice() {
            return Err(ExecError::BadNode {
                node: node.id.clone(),
                detail: "elementwise group inputs must share one shape".into(),
            });
        }
    }

    let mut out = vec![0.0f32; numel];
    for (e, slot) in out.iter_mut().enumerate() {
        let mut cur = 0.0f32;
        let mut prev: Option<&str> = None;
        for m in members {
            let fetch = |i: &String| -> f32 {
                if prev == Some(i.as_str()) {
                    cur
                } else {
                    external[i.as_str()].data()[e]
                }
            };
            cur = if m.op.is_unary_elementwise() {
                let v = fetch(&m.inputs[0]);
                exec::unary_scalar(&m.op, v)
                    .expect("unary")
                    .map_err(|detail| ExecError::Domain {
                        node: m.id.clone(),
                        detail: detail.into(),
                    })?
            } else {
                let a = fetch(&m.inputs[0]);
                let b = fetch(&m.inputs[1]);
                exec::binary_scalar(&m.op, a, b).expect("binary")
            };
            prev = Some(m.id.as_str());
        }
        *slot = cur;
    }
    let eliminated = (members.len() as u64 - 1) * 4 * numel as u64;
    Ok((
        Tensor::from_vec(shape, out).expect("same shape"),
        eliminated,
    ))
}

fn apply_elementwise_in_place(
    node: &OperatorNode,
    m: &OperatorNode,
    prev_id: &str,
    cur: &mut Tensor,
    external: &HashMap<&str, &Tensor>,
) -> Result<(), ExecError> {
    let operand = |i: &String| -> Result<Option<&[f32]>, ExecError> {
        if i == prev_id {
            Ok(None) // the running buffer
        } else {
            let t = external.get(i.as_str()).ok_or_else(|| ExecError::BadNode {
                node: node.id.clone(),
                detail: format!("fused member `{}` input `{i}` unresolved", m.id),
            })?;
            if t.shape() != cur.shape() {
                return Err(ExecError::BadNode {
                    node: m.id.clone(),
                    detail: "elementwise member shape mismatch".into(),
                });
            }
            Ok(Some(t.data()))
        }
    };
    if m.op.is_unary_elementwise() {
        if operand(&m.inputs[0])?.is_some() {
            return Err(ExecError::BadNode {
                node: m.id.clone(),
                detail: "chain member does not consume its predecessor".into(),
            });
        }
        for v in cur.data_mut() {
            *v = exec::unary_scalar(&m.op, *v)
                .expect("unary")
                .map_err(|detail| ExecError::Domain {
                    node: m.id.clone(),
                    detail: detail.into(),
                })?;
        }
    } else {
        let a_ext = operand(&m.inputs[0])?.map(|d| d.to_vec());
        let b_ext = operand(&m.inputs[1])?.map(|d| d.to_vec());
        let data = cur.data_mut();
        for (e, v) in data.iter_mut().enumerate() {
            let a = a_ext.as_ref().map_or(*v, |d| d[e]);
            let b = b_ext.as_ref().map_or(*v, |d| d[e]);
            *v = exec::binary_scalar(&m.op, a, b).expect("binary");
        }
    }
    Ok(())
}

/// Execute a graph, running fused nodes through [`execute_fused`]. Returns
/// the value map and the total bytes of intermediates eliminated.
pub fn execute_with_fusion(
    g: &Graph,
    inputs: &BTreeMap<String, Tensor>,
) -> Result<(BTreeMap<ValueId, Tensor>, u64), ExecError> {
    let mut eliminated = 0u64;
    let values = exec::execute_with(g, inputs, &mut |node, args| {
        if matches!(node.op, Op::Fused { .. }) {
            Some(execute_fused(node, args).map(|(t, bytes)| {
                eliminated += bytes;
                t
            }))
        } else {
            None
        }
    })?;
    Ok((values, eliminated))
}
