//! Dense reference execution with fixed accumulation order.
//!
//! Every accumulating operator sums in ascending index order (channels, then
//! kernel rows, then kernel columns for convolution; ascending `k` for
//! matmul; ascending axis index for reductions), one accumulator per output
//! element. Parallelism only ever splits work across disjoint output
//! regions, so outputs are bitwise identical at any thread count.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::graph::{Graph, NodeId, OperatorNode, ValueId};
use crate::ops::Op;
use crate::par;
use crate::tensor::{strides, Tensor};
use crate::topo;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("node `{node}`: domain error: {detail}")]
    Domain { node: NodeId, detail: String },
    #[error("node `{node}`: {detail}")]
    BadNode { node: NodeId, detail: String },
    #[error("missing input tensor `{0}`")]
    MissingInput(String),
    #[error("input `{name}`: expected shape {expected:?}, got {got:?}")]
    InputShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

/// Evaluation override used by backend engines: return `Some(result)` to
/// take over a node, `None` to fall through to the dense semantics.
/// `args` are the node's input tensors in positional order.
pub type NodeHook<'a> =
    dyn FnMut(&OperatorNode, &[&Tensor]) -> Option<Result<Tensor, ExecError>> + 'a;

/// Evaluate the graph on the given inputs with straightforward dense
/// semantics, returning every value (inputs, weights, node outputs) by id.
pub fn execute_reference(
    g: &Graph,
    inputs: &BTreeMap<String, Tensor>,
) -> Result<BTreeMap<ValueId, Tensor>, ExecError> {
    execute_with(g, inputs, &mut |_, _| None)
}

/// Like [`execute_reference`] but consulting `hook` for each node first.
pub fn execute_with(
    g: &Graph,
    inputs: &BTreeMap<String, Tensor>,
    hook: &mut NodeHook,
) -> Result<BTreeMap<ValueId, Tensor>, ExecError> {
    let mut values: BTreeMap<ValueId, Tensor> = BTreeMap::new();
    for decl in &g.inputs {
        let t = inputs
            .get(&decl.name)
            .ok_or_else(|| ExecError::MissingInput(decl.name.clone()))?;
        if t.shape() != decl.shape.as_slice() {
            return Err(ExecError::InputShape {
                name: decl.name.clone(),
                expected: decl.shape.clone(),
                got: t.shape().to_vec(),
            });
        }
        values.insert(decl.name.clone(), t.clone());
    }
    for (id, w) in &g.weights {
        values.insert(id.clone(), w.clone());
    }

    let order = topo::topo_order(g)?;
    let by_id: HashMap<&str, &OperatorNode> =
        g.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    for id in &order {
        let node = by_id[id.as_str()];
        let args: Vec<&Tensor> = node
            .inputs
            .iter()
            .map(|i| {
                values
                    .get(i)
                    .ok_or_else(|| ExecError::BadNode {
                        node: node.id.clone(),
                        detail: format!("unresolved input `{i}`"),
                    })
            })
            .collect::<Result<_, _>>()?;
        let out = match hook(node, &args) {
            Some(res) => res?,
            None => eval_node(node, &args)?,
        };
        values.insert(node.id.clone(), out);
    }
    Ok(values)
}

/// Dense semantics for a single node. Public so fused execution and backend
/// engines can reuse it member by member.
pub fn eval_node(node: &OperatorNode, args: &[&Tensor]) -> Result<Tensor, ExecError> {
    let id = &node.id;
    if !node.op.arity().accepts(args.len()) {
        return Err(ExecError::BadNode {
            node: id.clone(),
            detail: format!("{} got {} inputs", node.op.kind_name(), args.len()),
        });
    }
    match &node.op {
        Op::Conv2D { stride, pad } => conv2d(id, args[0], args[1], *stride, *pad),
        Op::MatMul => matmul(id, args[0], args[1]),
        op @ (Op::Add | Op::Sub | Op::Mul | Op::Div) => {
            binary(id, args[0], args[1], |a, b| binary_scalar(op, a, b).expect("binary op"))
        }
        op @ (Op::Sqrt
        | Op::Square
        | Op::Recip
        | Op::Abs
        | Op::Exp
        | Op::Relu
        | Op::Sigmoid
        | Op::Tanh) => {
            if matches!(op, Op::Sqrt) && args[0].data().iter().any(|&v| v < 0.0) {
                return Err(ExecError::Domain {
                    node: id.clone(),
                    detail: "Sqrt of negative value".into(),
                });
            }
            Ok(unary(args[0], |v| {
                unary_scalar(op, v).expect("unary op").unwrap_or(f32::NAN)
            }))
        }
        Op::Softmax { axis } => softmax(id, args[0], *axis),
        Op::ReduceSum { axis } => reduce(id, args[0], *axis, 0.0, |acc, v| acc + v),
        Op::ReduceProd { axis } => reduce(id, args[0], *axis, 1.0, |acc, v| acc * v),
        Op::MaxPool { kernel, stride } => pool(id, args[0], *kernel, *stride, PoolKind::Max),
        Op::AvgPool { kernel, stride } => pool(id, args[0], *kernel, *stride, PoolKind::Avg),
        Op::Reshape { shape } => args[0].reshaped(shape.clone()).map_err(|e| ExecError::BadNode {
            node: id.clone(),
            detail: e.to_string(),
        }),
        Op::Transpose { perm } => transpose(id, args[0], perm),
        Op::Concat { axis } => concat(id, args, *axis),
        Op::Gather { axis, indices } => gather(id, args[0], *axis, indices),
        Op::Broadcast { shape } => broadcast(id, args[0], shape),
        Op::Fused { members } => eval_fused(node, members, args),
    }
}

fn shape_err(node: &str, e: impl ToString) -> ExecError {
    ExecError::BadNode {
        node: node.to_string(),
        detail: e.to_string(),
    }
}

/// Scalar form of a unary elementwise operator, or `None` if `op` is not
/// one. The array path and fused per-element loops both go through this, so
/// they agree bitwise.
pub fn unary_scalar(op: &Op, v: f32) -> Option<Result<f32, &'static str>> {
    Some(match op {
        Op::Sqrt => {
            if v < 0.0 {
                Err("Sqrt of negative value")
            } else {
                Ok(v.sqrt())
            }
        }
        Op::Square => Ok(v * v),
        Op::Recip => Ok(1.0 / v),
        Op::Abs => Ok(v.abs()),
        Op::Exp => Ok(v.exp()),
        Op::Relu => Ok(v.max(0.0)),
        Op::Sigmoid => Ok(1.0 / (1.0 + (-v).exp())),
        Op::Tanh => Ok(v.tanh()),
        _ => return None,
    })
}

/// Scalar form of a binary elementwise operator, or `None` if `op` is not one.
pub fn binary_scalar(op: &Op, a: f32, b: f32) -> Option<f32> {
    Some(match op {
        Op::Add => a + b,
        Op::Sub => a - b,
        Op::Mul => a * b,
        Op::Div => a / b,
        _ => return None,
    })
}

fn infer(node: &str, op: &Op, args: &[&Tensor]) -> Result<Vec<usize>, ExecError> {
    let shapes: Vec<&[usize]> = args.iter().map(|t| t.shape()).collect();
    op.infer_shape(&shapes).map_err(|e| shape_err(node, e))
}

fn unary(x: &Tensor, f: impl Fn(f32) -> f32 + Sync) -> Tensor {
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    par::for_each_chunk_mut(&mut out, CHUNK, |ci, c| {
        let base = ci * CHUNK;
        for (j, v) in c.iter_mut().enumerate() {
            *v = f(src[base + j]);
        }
    });
    Tensor::from_vec(x.shape().to_vec(), out).expect("same shape")
}

const CHUNK: usize = 4096;

fn binary(
    node: &str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f32, f32) -> f32 + Sync,
) -> Result<Tensor, ExecError> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            node,
            format!("elementwise shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let (da, db) = (a.data(), b.data());
    let mut out = vec![0.0f32; da.len()];
    par::for_each_chunk_mut(&mut out, CHUNK, |ci, c| {
        let base = ci * CHUNK;
        for (j, v) in c.iter_mut().enumerate() {
            *v = f(da[base + j], db[base + j]);
        }
    });
    Ok(Tensor::from_vec(a.shape().to_vec(), out).expect("same shape"))
}

fn conv2d(
    node: &str,
    x: &Tensor,
    w: &Tensor,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor, ExecError> {
    let op = Op::Conv2D { stride, pad };
    let out_shape = infer(node, &op, &[x, w])?;
    let (n, cout, hout, wout) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
    let (cin, h, wid) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw) = (w.shape()[2], w.shape()[3]);
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let xd = x.data();
    let wd = w.data();

    let mut out = vec![0.0f32; n * cout * hout * wout];
    // One output plane (n, cout) per chunk; disjoint writes, fixed inner order.
    par::for_each_chunk_mut(&mut out, hout * wout, |plane, c| {
        let (ni, co) = (plane / cout, plane % cout);
        for oy in 0..hout {
            for ox in 0..wout {
                let mut acc = 0.0f32;
                for ci in 0..cin {
                    for ky in 0..kh {
                        let iy = oy * sh + ky;
                        if iy < ph || iy >= h + ph {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = ox * sw + kx;
                            if ix < pw || ix >= wid + pw {
                                continue;
                            }
                            let xv = xd[((ni * cin + ci) * h + (iy - ph)) * wid + (ix - pw)];
                            let wv = wd[((co * cin + ci) * kh + ky) * kw + kx];
                            acc += xv * wv;
                        }
                    }
                }
                c[oy * wout + ox] = acc;
            }
        }
    });
    Ok(Tensor::from_vec(out_shape, out).expect("shape matches"))
}

fn matmul(node: &str, a: &Tensor, b: &Tensor) -> Result<Tensor, ExecError> {
    let out_shape = infer(node, &Op::MatMul, &[a, b])?;
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let (da, db) = (a.data(), b.data());
    let mut out = vec![0.0f32; m * n];
    par::for_each_chunk_mut(&mut out, n, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for l in 0..k {
                acc += da[i * k + l] * db[l * n + j];
            }
            *v = acc;
        }
    });
    Ok(Tensor::from_vec(out_shape, out).expect("shape matches"))
}

fn softmax(node: &str, x: &Tensor, axis: usize) -> Result<Tensor, ExecError> {
    infer(node, &Op::Softmax { axis }, &[x])?;
    let shape = x.shape();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * axis_len + a) * inner + i;
            let mut m = f32::NEG_INFINITY;
            for a in 0..axis_len {
                m = m.max(src[at(a)]);
            }
            let mut sum = 0.0f32;
            for a in 0..axis_len {
                let e = (src[at(a)] - m).exp();
                out[at(a)] = e;
                sum += e;
            }
            for a in 0..axis_len {
                out[at(a)] /= sum;
            }
        }
    }
    Ok(Tensor::from_vec(shape.to_vec(), out).expect("same shape"))
}

fn reduce(
    node: &str,
    x: &Tensor,
    axis: usize,
    init: f32,
    f: impl Fn(f32, f32) -> f32,
) -> Result<Tensor, ExecError> {
    let out_shape = infer(node, &Op::ReduceSum { axis }, &[x])?;
    let shape = x.shape();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = x.data();
    let mut out = vec![init; outer * inner];
    for o in 0..outer {
        for a in 0..axis_len {
            for i in 0..inner {
                let v = src[(o * axis_len + a) * inner + i];
                let slot = &mut out[o * inner + i];
                *slot = f(*slot, v);
            }
        }
    }
    Ok(Tensor::from_vec(out_shape, out).expect("shape matches"))
}

enum PoolKind {
    Max,
    Avg,
}

fn pool(
    node: &str,
    x: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    kind: PoolKind,
) -> Result<Tensor, ExecError> {
    let op = match kind {
        PoolKind::Max => Op::MaxPool { kernel, stride },
        PoolKind::Avg => Op::AvgPool { kernel, stride },
    };
    let out_shape = infer(node, &op, &[x])?;
    let (n, c, hout, wout) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let src = x.data();
    let mut out = vec![0.0f32; n * c * hout * wout];
    for plane in 0..n * c {
        for oy in 0..hout {
            for ox in 0..wout {
                let mut acc = match kind {
                    PoolKind::Max => f32::NEG_INFINITY,
                    PoolKind::Avg => 0.0,
                };
                for ky in 0..kh {
                    for kx in 0..kw {
                        let v = src[(plane * h + oy * sh + ky) * w + ox * sw + kx];
                        acc = match kind {
                            PoolKind::Max => acc.max(v),
                            PoolKind::Avg => acc + v,
                        };
                    }
                }
                if let PoolKind::Avg = kind {
                    acc /= (kh * kw) as f32;
                }
                out[(plane * hout + oy) * wout + ox] = acc;
            }
        }
    }
    Ok(Tensor::from_vec(out_shape, out).expect("shape matches"))
}

fn transpose(node: &str, x: &Tensor, perm: &[usize]) -> Result<Tensor, ExecError> {
    let op = Op::Transpose { perm: perm.to_vec() };
    let out_shape = infer(node, &op, &[x])?;
    let in_strides = strides(x.shape());
    let out_strides = strides(&out_shape);
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    for (flat, v) in out.iter_mut().enumerate() {
        let mut src_idx = 0;
        let mut rem = flat;
        for (d, &os) in out_strides.iter().enumerate() {
            let coord = rem / os;
            rem %= os;
            src_idx += coord * in_strides[perm[d]];
        }
        *v = src[src_idx];
    }
    Ok(Tensor::from_vec(out_shape, out).expect("shape matches"))
}

fn concat(node: &str, args: &[&Tensor], axis: usize) -> Result<Tensor, ExecError> {
    let op = Op::Concat { axis };
    let out_shape = infer(node, &op, args)?;
    let inner: usize = out_shape[axis + 1..].iter().product();
    let outer: usize = out_shape[..axis].iter().product();
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for t in args {
            let block = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
        }
    }
    Ok(Tensor::from_vec(out_shape, out).expect("shape matches"))
}

fn gather(node: &str, x: &Tensor, axis: usize, indices: &[usize]) -> Result<Tensor, ExecError> {
    let op = Op::Gather { axis, indices: indices.to_vec() };
    let out_shape = infer(node, &op, &[x])?;
    let shape = x.shape();
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let axis_len = shape[axis];
    let src = x.data();
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for &idx in indices {
            let start = (o * axis_len + idx) * inner;
            out.extend_from_slice(&src[start..start + inner]);
        }
    }
    Ok(Tensor::from_vec(out_shape, out).expect("shape matches"))
}

fn broadcast(node: &str, x: &Tensor, target: &[usize]) -> Result<Tensor, ExecError> {
    let op = Op::Broadcast { shape: target.to_vec() };
    let out_shape = infer(node, &op, &[x])?;
    let in_shape = x.shape();
    let offset = target.len() - in_shape.len();
    let in_strides = strides(in_shape);
    let out_strides = strides(&out_shape);
    let src = x.data();
    let mut out = vec![0.0f32; out_shape.iter().product()];
    for (flat, v) in out.iter_mut().enumerate() {
        let mut src_idx = 0;
        let mut rem = flat;
        for (d, &os) in out_strides.iter().enumerate() {
            let coord = rem / os;
            rem %= os;
            if d >= offset {
                let in_d = d - offset;
                if in_shape[in_d] != 1 {
                    src_idx += coord * in_strides[in_d];
                }
            }
        }
        *v = src[src_idx];
    }
    Ok(Tensor::from_vec(out_shape, out).expect("shape matches"))
}

/// Staged evaluation of a fused group: members run one by one over a local
/// environment. Bitwise identical to evaluating the members as free nodes.
fn eval_fused(
    node: &OperatorNode,
    members: &[OperatorNode],
    args: &[&Tensor],
) -> Result<Tensor, ExecError> {
    let mut env: HashMap<&str, Tensor> = HashMap::new();
    let external: HashMap<&str, &Tensor> = node
        .inputs
        .iter()
        .map(|i| i.as_str())
        .zip(args.iter().copied())
        .collect();
    let mut last = None;
    for m in members {
        let mut resolved: Vec<Tensor> = Vec::with_capacity(m.inputs.len());
        for i in &m.inputs {
            let t = env
                .get(i.as_str())
                .or_else(|| external.get(i.as_str()).copied())
                .ok_or_else(|| ExecError::BadNode {
                    node: node.id.clone(),
                    detail: format!("fused member `{}` input `{i}` unresolved", m.id),
                })?;
            resolved.push(t.clone());
        }
        let views: Vec<&Tensor> = resolved.iter().collect();
        let out = eval_node(m, &views)?;
        env.insert(m.id.as_str(), out.clone());
        last = Some(out);
    }
    last.ok_or_else(|| ExecError::BadNode {
        node: node.id.clone(),
        detail: "empty fused group".into(),
    })
}

/// Unroll convolution input patches into rows: one row per output position
/// `(n, oy, ox)`, laid out channel-major `(ci, ky, kx)` to match the GEMM
/// view of the filters. Padding positions contribute zeros.
pub fn im2row(
    x: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor, ExecError> {
    if x.rank() != 4 {
        return Err(shape_err("im2row", format!("need 4-D input, got {:?}", x.shape())));
    }
    let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    if h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(shape_err("im2row", "kernel larger than padded input"));
    }
    let hout = (h + 2 * ph - kh) / sh + 1;
    let wout = (w + 2 * pw - kw) / sw + 1;
    let rows = n * hout * wout;
    let d = cin * kh * kw;
    let src = x.data();
    let mut out = vec![0.0f32; rows * d];
    for ni in 0..n {
        for oy in 0..hout {
            for ox in 0..wout {
                let row = (ni * hout + oy) * wout + ox;
                for ci in 0..cin {
                    for ky in 0..kh {
                        let iy = oy * sh + ky;
                        if iy < ph || iy >= h + ph {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = ox * sw + kx;
                            if ix < pw || ix >= w + pw {
                                continue;
                            }
                            out[row * d + (ci * kh + ky) * kw + kx] =
                                src[((ni * cin + ci) * h + (iy - ph)) * w + (ix - pw)];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![rows, d], out).map_err(|e| shape_err("im2row", e))
}

/// Graph outputs extracted from an executed value map, in declaration order.
pub fn graph_outputs<'a>(
    g: &Graph,
    values: &'a BTreeMap<ValueId, Tensor>,
) -> Result<Vec<&'a Tensor>, ExecError> {
    g.outputs
        .iter()
        .map(|o| {
            values
                .get(o)
                .ok_or_else(|| ExecError::MissingInput(o.clone()))
        })
        .collect()
}
