//! The v1 operator set and per-operator shape inference.
//!
//! Layout conventions: 4-D activations are NCHW, weights for `Conv2D` are
//! `[Cout, Cin, kh, kw]`, everything is row-major. `MatMul` is rank-2 only.
//! Binary elementwise ops require exactly equal shapes; broadcasting is
//! explicit via the `Broadcast` operator.

use crate::graph::OperatorNode;

/// Tensor operators supported by the IR, with their attributes inline.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// 2-D convolution over NCHW input with `[Cout, Cin, kh, kw]` weights and
    /// zero padding. Inputs: `[x, w]`.
    Conv2D {
        stride: (usize, usize),
        pad: (usize, usize),
    },
    /// Rank-2 matrix product `[m, k] x [k, n] -> [m, n]`.
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Square,
    Recip,
    Abs,
    Exp,
    Relu,
    Sigmoid,
    Tanh,
    Softmax {
        axis: usize,
    },
    /// Sum along `axis`; the axis is removed (a rank-1 input reduces to `[1]`).
    ReduceSum {
        axis: usize,
    },
    ReduceProd {
        axis: usize,
    },
    MaxPool {
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    AvgPool {
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    Reshape {
        shape: Vec<usize>,
    },
    Transpose {
        perm: Vec<usize>,
    },
    Concat {
        axis: usize,
    },
    /// Select `indices` along `axis` (static index list; rank preserved).
    Gather {
        axis: usize,
        indices: Vec<usize>,
    },
    /// Expand the input to `shape` with numpy-style right-aligned rules.
    Broadcast {
        shape: Vec<usize>,
    },
    /// A fused group produced by the fusion pass. `members` is the captured
    /// subgraph in execution order; the last member is the group's exit and
    /// shares the fused node's id.
    Fused {
        members: Vec<OperatorNode>,
    },
}

/// Input arity an operator accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exact(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn accepts(self, n: usize) -> bool {
        match self {
            Arity::Exact(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

impl Op {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Op::Conv2D { .. } => "Conv2D",
            Op::MatMul => "MatMul",
            Op::Add => "Add",
            Op::Sub => "Sub",
            Op::Mul => "Mul",
            Op::Div => "Div",
            Op::Sqrt => "Sqrt",
            Op::Square => "Square",
            Op::Recip => "Recip",
            Op::Abs => "Abs",
            Op::Exp => "Exp",
            Op::Relu => "ReLU",
            Op::Sigmoid => "Sigmoid",
            Op::Tanh => "Tanh",
            Op::Softmax { .. } => "Softmax",
            Op::ReduceSum { .. } => "ReduceSum",
            Op::ReduceProd { .. } => "ReduceProd",
            Op::MaxPool { .. } => "MaxPool",
            Op::AvgPool { .. } => "AvgPool",
            Op::Reshape { .. } => "Reshape",
            Op::Transpose { .. } => "Transpose",
            Op::Concat { .. } => "Concat",
            Op::Gather { .. } => "Gather",
            Op::Broadcast { .. } => "Broadcast",
            Op::Fused { .. } => "Fused",
        }
    }

    pub fn arity(&self) -> Arity {
        match self {
            Op::Conv2D { .. } | Op::MatMul => Arity::Exact(2),
            Op::Add | Op::Sub | Op::Mul | Op::Div => Arity::Exact(2),
            Op::Sqrt
            | Op::Square
            | Op::Recip
            | Op::Abs
            | Op::Exp
            | Op::Relu
            | Op::Sigmoid
            | Op::Tanh
            | Op::Softmax { .. }
            | Op::ReduceSum { .. }
            | Op::ReduceProd { .. }
            | Op::MaxPool { .. }
            | Op::AvgPool { .. }
            | Op::Reshape { .. }
            | Op::Transpose { .. }
            | Op::Gather { .. }
            | Op::Broadcast { .. } => Arity::Exact(1),
            Op::Concat { .. } => Arity::AtLeast(1),
            Op::Fused { members } => Arity::Exact(fused_external_inputs(members).len()),
        }
    }

    pub fn is_unary_elementwise(&self) -> bool {
        matches!(
            self,
            Op::Sqrt
                | Op::Square
                | Op::Recip
                | Op::Abs
                | Op::Exp
                | Op::Relu
                | Op::Sigmoid
                | Op::Tanh
        )
    }

    pub fn is_binary_elementwise(&self) -> bool {
        matches!(self, Op::Add | Op::Sub | Op::Mul | Op::Div)
    }

    pub fn is_elementwise(&self) -> bool {
        self.is_unary_elementwise() || self.is_binary_elementwise()
    }

    /// Structural attribute checks that do not need input shapes.
    pub fn check_attrs(&self) -> Result<(), String> {
        match self {
            Op::Conv2D { stride, pad: _ } => {
                if stride.0 == 0 || stride.1 == 0 {
                    return Err("stride dims must be >= 1".into());
                }
            }
            Op::MaxPool { kernel, stride } | Op::AvgPool { kernel, stride } => {
                if kernel.0 == 0 || kernel.1 == 0 {
                    return Err("kernel dims must be >= 1".into());
                }
                if stride.0 == 0 || stride.1 == 0 {
                    return Err("stride dims must be >= 1".into());
                }
            }
            Op::Reshape { shape } | Op::Broadcast { shape } => {
                if shape.is_empty() || shape.iter().any(|&d| d == 0) {
                    return Err(format!("target shape {shape:?} must be non-empty with dims >= 1"));
                }
            }
            Op::Transpose { perm } => {
                let mut seen = vec![false; perm.len()];
                for &p in perm {
                    if p >= perm.len() || seen[p] {
                        return Err(format!("{perm:?} is not a permutation of 0..{}", perm.len()));
                    }
                    seen[p] = true;
                }
                if perm.is_empty() {
                    return Err("permutation must be non-empty".into());
                }
            }
            Op::Gather { indices, .. } => {
                if indices.is_empty() {
                    return Err("index list must be non-empty".into());
                }
            }
            Op::Fused { members } => {
                if members.is_empty() {
                    return Err("fused group must have at least one member".into());
                }
                for m in members {
                    if matches!(m.op, Op::Fused { .. }) {
                        return Err("fused groups do not nest".into());
                    }
                    m.op.check_attrs()
                        .map_err(|e| format!("member `{}`: {e}", m.id))?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Output shape from positional input shapes. `Fused` is handled by
    /// [`infer_fused_shape`] since its members resolve inputs by value id.
    pub fn infer_shape(&self, ins: &[&[usize]]) -> Result<Vec<usize>, String> {
        if !self.arity().accepts(ins.len()) {
            return Err(format!(
                "{} expects {:?} inputs, got {}",
                self.kind_name(),
                self.arity(),
                ins.len()
            ));
        }
        match self {
            Op::Conv2D { stride, pad } => {
                let (x, w) = (ins[0], ins[1]);
                if x.len() != 4 || w.len() != 4 {
                    return Err(format!("Conv2D needs 4-D input and weight, got {x:?} and {w:?}"));
                }
                let (n, cin, h, wid) = (x[0], x[1], x[2], x[3]);
                let (cout, wcin, kh, kw) = (w[0], w[1], w[2], w[3]);
                if cin != wcin {
                    return Err(format!("input channels {cin} != weight channels {wcin}"));
                }
                let (ph, pw) = *pad;
                let (sh, sw) = *stride;
                if h + 2 * ph < kh || wid + 2 * pw < kw {
                    return Err(format!("kernel {kh}x{kw} larger than padded input"));
                }
                let hout = (h + 2 * ph - kh) / sh + 1;
                let wout = (wid + 2 * pw - kw) / sw + 1;
                Ok(vec![n, cout, hout, wout])
            }
            Op::MatMul => {
                let (a, b) = (ins[0], ins[1]);
                if a.len() != 2 || b.len() != 2 {
                    return Err(format!("MatMul is rank-2 only, got {a:?} x {b:?}"));
                }
                if a[1] != b[0] {
                    return Err(format!("inner dims differ: {a:?} x {b:?}"));
                }
                Ok(vec![a[0], b[1]])
            }
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                if ins[0] != ins[1] {
                    return Err(format!(
                        "elementwise {} needs equal shapes, got {:?} and {:?}",
                        self.kind_name(),
                        ins[0],
                        ins[1]
                    ));
                }
                Ok(ins[0].to_vec())
            }
            Op::Sqrt
            | Op::Square
            | Op::Recip
            | Op::Abs
            | Op::Exp
            | Op::Relu
            | Op::Sigmoid
            | Op::Tanh => Ok(ins[0].to_vec()),
            Op::Softmax { axis } => {
                if *axis >= ins[0].len() {
                    return Err(format!("axis {axis} out of range for {:?}", ins[0]));
                }
                Ok(ins[0].to_vec())
            }
            Op::ReduceSum { axis } | Op::ReduceProd { axis } => {
                let x = ins[0];
                if *axis >= x.len() {
                    return Err(format!("axis {axis} out of range for {x:?}"));
                }
                let mut out: Vec<usize> = x
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i != axis)
                    .map(|(_, d)| *d)
                    .collect();
                if out.is_empty() {
                    out.push(1);
                }
                Ok(out)
            }
            Op::MaxPool { kernel, stride } | Op::AvgPool { kernel, stride } => {
                let x = ins[0];
                if x.len() != 4 {
                    return Err(format!("pooling needs 4-D input, got {x:?}"));
                }
                let (kh, kw) = *kernel;
                let (sh, sw) = *stride;
                if x[2] < kh || x[3] < kw {
                    return Err(format!("pool window {kh}x{kw} larger than input {x:?}"));
                }
                Ok(vec![x[0], x[1], (x[2] - kh) / sh + 1, (x[3] - kw) / sw + 1])
            }
            Op::Reshape { shape } => {
                let from: usize = ins[0].iter().product();
                let to: usize = shape.iter().product();
                if from != to {
                    return Err(format!("cannot reshape {:?} ({from} elems) to {shape:?} ({to})", ins[0]));
                }
                Ok(shape.clone())
            }
            Op::Transpose { perm } => {
                let x = ins[0];
                if perm.len() != x.len() {
                    return Err(format!("permutation {perm:?} does not match rank of {x:?}"));
                }
                Ok(perm.iter().map(|&p| x[p]).collect())
            }
            Op::Concat { axis } => {
                let first = ins[0];
                if *axis >= first.len() {
                    return Err(format!("axis {axis} out of range for {first:?}"));
                }
                let mut out = first.to_vec();
                for x in &ins[1..] {
                    if x.len() != first.len() {
                        return Err("concat inputs must have equal rank".into());
                    }
                    for (d, (a, b)) in x.iter().zip(first.iter()).enumerate() {
                        if d != *axis && a != b {
                            return Err(format!(
                                "concat inputs differ on non-concat dim {d}: {ins:?}"
                            ));
                        }
                    }
                    out[*axis] += x[*axis];
                }
                Ok(out)
            }
            Op::Gather { axis, indices } => {
                let x = ins[0];
                if *axis >= x.len() {
                    return Err(format!("axis {axis} out of range for {x:?}"));
                }
                if let Some(bad) = indices.iter().find(|&&i| i >= x[*axis]) {
                    return Err(format!("index {bad} out of range for dim {}", x[*axis]));
                }
                let mut out = x.to_vec();
                out[*axis] = indices.len();
                Ok(out)
            }
            Op::Broadcast { shape } => {
                let x = ins[0];
                if x.len() > shape.len() {
                    return Err(format!("cannot broadcast {x:?} to lower rank {shape:?}"));
                }
                // Right-aligned: each input dim must equal the target or be 1.
                let offset = shape.len() - x.len();
                for (i, &d) in x.iter().enumerate() {
                    let t = shape[offset + i];
                    if d != t && d != 1 {
                        return Err(format!("cannot broadcast {x:?} to {shape:?}"));
                    }
                }
                Ok(shape.clone())
            }
            Op::Fused { members } => {
                let externals = fused_external_inputs(members);
                let mut env: std::collections::HashMap<&str, Vec<usize>> = externals
                    .iter()
                    .zip(ins)
                    .map(|(id, s)| (id.as_str(), s.to_vec()))
                    .collect();
                infer_fused_shape(members, &mut env)
            }
        }
    }
}

/// External input value ids of a fused group, in first-use order: every
/// member input that is not produced by an earlier member.
pub fn fused_external_inputs(members: &[OperatorNode]) -> Vec<String> {
    let internal: std::collections::HashSet<&str> =
        members.iter().map(|m| m.id.as_str()).collect();
    let mut seen = std::collections::HashSet::new();
    let mut ext = Vec::new();
    for m in members {
        for inp in &m.inputs {
            if !internal.contains(inp.as_str()) && seen.insert(inp.clone()) {
                ext.push(inp.clone());
            }
        }
    }
    ext
}

fn infer_fused_shape<'a>(
    members: &'a [OperatorNode],
    env: &mut std::collections::HashMap<&'a str, Vec<usize>>,
) -> Result<Vec<usize>, String> {
    let mut last = None;
    for m in members {
        let shapes: Vec<Vec<usize>> = m
            .inputs
            .iter()
            .map(|i| {
                env.get(i.as_str())
                    .cloned()
                    .ok_or_else(|| format!("member `{}` input `{i}` unresolved", m.id))
            })
            .collect::<Result<_, _>>()?;
        let views: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        let out = m
            .op
            .infer_shape(&views)
            .map_err(|e| format!("member `{}`: {e}", m.id))?;
        env.insert(m.id.as_str(), out.clone());
        last = Some(out);
    }
    last.ok_or_else(|| "empty fused group".into())
}
