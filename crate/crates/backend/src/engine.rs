//! Graph-level execution engines: walk the graph like the reference
//! executor but dispatch convolution/matmul nodes to a backend, descending
//! into fused groups member by member.

use std::collections::{BTreeMap, HashMap};

use xgir_core::exec::{self, ExecError};
use xgir_core::graph::{Graph, NodeId, OperatorNode};
use xgir_core::ops::Op;
use xgir_core::tensor::Tensor;

use xgen_prune::{PatternAssignment, PatternLibrary};

use crate::exec::{exec_conv_fkw, LoadStats};
use crate::fkw::{build_fkw, FkwWeights};
use crate::plan::{plan_execution, ExecPlan};
use crate::reorder::reorder_filters;
use crate::reuse::{exec_matmul_reuse, ReuseConfig, ReuseScope, ReuseStats};
use crate::BackendError;

/// A conv node eligible for a sparse backend: its location (top level or
/// inside a fused group), input shape, and attributes.
#[derive(Debug, Clone)]
pub struct ConvSite {
    pub node_id: NodeId,
    pub weight_id: String,
    pub input_shape: Vec<usize>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

/// Every Conv2D application in the graph (including fused members) whose
/// weight input is a graph weight, with resolved input shapes.
pub fn conv_sites(g: &Graph) -> Result<Vec<ConvSite>, BackendError> {
    let shapes = g.infer_shapes().map_err(ExecError::from)?;
    let mut sites = Vec::new();
    let mut record = |node: &OperatorNode, input_shape: Vec<usize>| {
        if let Op::Conv2D { stride, pad } = node.op {
            if g.weights.contains_key(&node.inputs[1]) {
                sites.push(ConvSite {
                    node_id: node.id.clone(),
                    weight_id: node.inputs[1].clone(),
                    input_shape,
                    stride,
                    pad,
                });
            }
        }
    };
    for node in &g.nodes {
        match &node.op {
            Op::Fused { members } => {
                let mut env: HashMap<&str, Vec<usize>> = HashMap::new();
                for i in &node.inputs {
                    env.insert(i.as_str(), shapes[i].clone());
                }
                for m in members {
                    let ins: Vec<Vec<usize>> = m
                        .inputs
                        .iter()
                        .map(|i| {
                            env.get(i.as_str())
                                .cloned()
                                .or_else(|| shapes.get(i).cloned())
                                .ok_or_else(|| {
                                    BackendError::Shape(format!(
                                        "fused member `{}` input `{i}` unresolved",
                                        m.id
                                    ))
                                })
                        })
                        .collect::<Result<_, _>>()?;
                    record(m, ins[0].clone());
                    let views: Vec<&[usize]> = ins.iter().map(|s| s.as_slice()).collect();
                    let out = m
                        .op
                        .infer_shape(&views)
                        .map_err(|e| BackendError::Shape(format!("member `{}`: {e}", m.id)))?;
                    env.insert(m.id.as_str(), out);
                }
            }
            _ => {
                if !node.inputs.is_empty() {
                    if let Some(s) = shapes.get(&node.inputs[0]) {
                        record(node, s.clone());
                    }
                }
            }
        }
    }
    Ok(sites)
}

/// Pattern-pruning state of a layer, as produced by the pruning stage.
#[derive(Debug, Clone)]
pub struct PatternLayer {
    pub library: PatternLibrary,
    pub assignment: PatternAssignment,
}

/// FKW execution engine: pattern-pruned conv layers run from FKW storage
/// with load tracing, everything else runs dense.
pub struct FkwEngine {
    /// Keyed by conv node id.
    layers: BTreeMap<NodeId, (FkwWeights, ExecPlan)>,
}

impl FkwEngine {
    /// Compile FKW weights and plans for every conv site whose weight id has
    /// pattern state. `tile` applies to all layers (clamped to each output).
    pub fn build(
        g: &Graph,
        pattern_layers: &BTreeMap<String, PatternLayer>,
        tile: (usize, usize),
    ) -> Result<Self, BackendError> {
        let mut layers = BTreeMap::new();
        for site in conv_sites(g)? {
            let Some(state) = pattern_layers.get(&site.weight_id) else {
                continue;
            };
            let weight = &g.weights[&site.weight_id];
            let reorder = reorder_filters(&state.assignment);
            let fkw = build_fkw(weight, &state.library, &state.assignment, &reorder)?;
            let out_h = (site.input_shape[2] + 2 * site.pad.0 - fkw.kernel.0) / site.stride.0 + 1;
            let out_w = (site.input_shape[3] + 2 * site.pad.1 - fkw.kernel.1) / site.stride.1 + 1;
            let plan = plan_execution(
                &fkw,
                &site.input_shape,
                site.stride,
                site.pad,
                (tile.0.min(out_h).max(1), tile.1.min(out_w).max(1)),
            )?;
            layers.insert(site.node_id.clone(), (fkw, plan));
        }
        Ok(FkwEngine { layers })
    }

    pub fn layer_ids(&self) -> Vec<&NodeId> {
        self.layers.keys().collect()
    }

    pub fn layer(&self, id: &str) -> Option<&(FkwWeights, ExecPlan)> {
        self.layers.get(id)
    }

    /// Execute the graph; FKW layers produce per-node load stats.
    pub fn execute(
        &self,
        g: &Graph,
        inputs: &BTreeMap<String, Tensor>,
    ) -> Result<(BTreeMap<String, Tensor>, BTreeMap<NodeId, LoadStats>), ExecError> {
        let mut stats = BTreeMap::new();
        let values = exec::execute_with(g, inputs, &mut |node, args| {
            dispatch_node(node, args, &mut |m, margs| {
                let (fkw, plan) = self.layers.get(&m.id)?;
                Some(
                    exec_conv_fkw(fkw, margs[0], plan)
                        .map(|(t, s)| {
                            stats.insert(m.id.clone(), s);
                            t
                        })
                        .map_err(|e| ExecError::BadNode {
                            node: m.id.clone(),
                            detail: e.to_string(),
                        }),
                )
            })
        })?;
        Ok((values, stats))
    }
}

/// Deep-reuse engine: conv layers run as reuse matmuls over their im2row
/// view, matmul nodes run reuse directly when the vector length divides the
/// shared dimension; everything else runs dense.
pub struct ReuseEngine {
    pub config: ReuseConfig,
}

impl ReuseEngine {
    pub fn new(config: ReuseConfig) -> Self {
        ReuseEngine { config }
    }

    pub fn execute(
        &self,
        g: &Graph,
        inputs: &BTreeMap<String, Tensor>,
    ) -> Result<(BTreeMap<String, Tensor>, BTreeMap<NodeId, ReuseStats>), ExecError> {
        let mut stats = BTreeMap::new();
        let values = exec::execute_with(g, inputs, &mut |node, args| {
            dispatch_node(node, args, &mut |m, margs| {
                self.eval_reusable(m, margs).map(|res| {
                    res.map(|(t, s)| {
                        stats.insert(m.id.clone(), s);
                        t
                    })
                    .map_err(|e| ExecError::BadNode { node: m.id.clone(), detail: e.to_string() })
                })
            })
        })?;
        Ok((values, stats))
    }

    fn eval_reusable(
        &self,
        node: &OperatorNode,
        args: &[&Tensor],
    ) -> Option<Result<(Tensor, ReuseStats), BackendError>> {
        let l = self.config.vector_len;
        match &node.op {
            Op::MatMul if args[0].shape()[1] % l == 0 => {
                Some(exec_matmul_reuse(args[0], args[1], &self.config))
            }
            Op::Conv2D { stride, pad } => {
                let w = args[1];
                let d = w.shape()[1] * w.shape()[2] * w.shape()[3];
                if d % l != 0 {
                    return None;
                }
                Some(self.conv_via_reuse(args[0], w, *stride, *pad))
            }
            _ => None,
        }
    }

    fn conv_via_reuse(
        &self,
        x: &Tensor,
        w: &Tensor,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<(Tensor, ReuseStats), BackendError> {
        let (cout, cin, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let n = x.shape()[0];
        let rows_mat = exec::im2row(x, (kh, kw), stride, pad)?;
        let d = cin * kh * kw;
        // GEMM view transposed to D x Cout so activation rows multiply it.
        let mut wt = vec![0.0f32; d * cout];
        for co in 0..cout {
            for i in 0..d {
                wt[i * cout + co] = w.data()[co * d + i];
            }
        }
        let wt = Tensor::from_vec(vec![d, cout], wt).expect("shape valid");

        let total_rows = rows_mat.shape()[0];
        let per_item = total_rows / n;
        let (hout, wout) = (
            (x.shape()[2] + 2 * pad.0 - kh) / stride.0 + 1,
            (x.shape()[3] + 2 * pad.1 - kw) / stride.1 + 1,
        );

        let mut out = vec![0.0f32; n * cout * hout * wout];
        let mut stats = ReuseStats::default();
        let item_ranges: Vec<(usize, usize)> = match self.config.scope {
            ReuseScope::PerInput => (0..n).map(|i| (i * per_item, per_item)).collect(),
            ReuseScope::PerBatch => vec![(0, total_rows)],
        };
        for (start, len) in item_ranges {
            let slice = Tensor::from_vec(
                vec![len, d],
                rows_mat.data()[start * d..(start + len) * d].to_vec(),
            )
            .expect("shape valid");
            let (prod, s) = exec_matmul_reuse(&slice, &wt, &self.config)?;
            stats.merge(&s);
            for r in 0..len {
                let patch = start + r;
                let (ni, rem) = (patch / per_item, patch % per_item);
                let (oy, ox) = (rem / wout, rem % wout);
                for co in 0..cout {
                    out[((ni * cout + co) * hout + oy) * wout + ox] = prod.data()[r * cout + co];
                }
            }
        }
        let t = Tensor::from_vec(vec![n, cout, hout, wout], out)
            .map_err(|e| BackendError::Shape(e.to_string()))?;
        Ok((t, stats))
    }
}

/// Run a node through `member_hook`, descending into fused groups: members
/// are evaluated staged, each first offered to the hook, then to the dense
/// semantics.
fn dispatch_node(
    node: &OperatorNode,
    args: &[&Tensor],
    member_hook: &mut dyn FnMut(&OperatorNode, &[&Tensor]) -> Option<Result<Tensor, ExecError>>,
) -> Option<Result<Tensor, ExecError>> {
    match &node.op {
        Op::Fused { members } => {
            let external: HashMap<&str, &Tensor> = node
                .inputs
                .iter()
                .map(|i| i.as_str())
                .zip(args.iter().copied())
                .collect();
            let mut env: HashMap<String, Tensor> = HashMap::new();
            let mut last = None;
            for m in members {
                let resolved: Result<Vec<Tensor>, ExecError> = m
                    .inputs
                    .iter()
                    .map(|i| {
                        env.get(i.as_str())
                            .or_else(|| external.get(i.as_str()).copied())
                            .cloned()
                            .ok_or_else(|| ExecError::BadNode {
                                node: node.id.clone(),
                                detail: format!("fused member `{}` input `{i}` unresolved", m.id),
                            })
                    })
                    .collect();
                let resolved = match resolved {
                    Ok(r) => r,
                    Err(e) => return Some(Err(e)),
                };
                let views: Vec<&Tensor> = resolved.iter().collect();
                let out = match member_hook(m, &views).unwrap_or_else(|| exec::eval_node(m, &views)) {
                    Ok(t) => t,
                    Err(e) => return Some(Err(e)),
                };
                env.insert(m.id.clone(), out.clone());
                last = Some(out);
            }
            last.map(Ok)
        }
        _ => member_hook(node, args),
    }
}
