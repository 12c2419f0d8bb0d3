//! Model file I/O.
//!
//! Graphs are stored as XGIR JSON next to an XGWT weight blob:
//!
//! * XGIR JSON: `{"version":1,"inputs":[{"name","shape"}],"outputs":[ids],`
//!   `"nodes":[{"id","op","attrs","inputs"}],"weights":[{"id","name"}]}`.
//!   Unknown fields are rejected. A node's output value id is its node id.
//! * XGWT binary: magic `XGWT`, u32 version, u32 tensor count, then one
//!   directory entry per tensor (u16 name length, name bytes, u32 rank,
//!   u32 dims, u8 dtype, u64 absolute data offset), then the data section
//!   with every tensor's payload 64-byte aligned. Little-endian throughout.
//!   dtype 0 is f32 (payload `product(dims) * 4` bytes); dtype 100 is a
//!   tagged opaque payload of `product(dims)` bytes (used for FKW-encoded
//!   weights; dims is `[byte_len]`).
//!
//! Saving is deterministic: weights are emitted in ascending id order, JSON
//! maps are key-sorted, so save-load-save reproduces identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::graph::{Graph, GraphInput, OperatorNode};
use crate::ops::Op;
use crate::tensor::{DType, Tensor};
use crate::validate;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("link error: missing weight `{0}` in blob")]
    Link(String),
    #[error("shape error: {0}")]
    Shape(String),
}

// ── XGIR JSON ────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    version: u32,
    inputs: Vec<InputJson>,
    outputs: Vec<String>,
    nodes: Vec<NodeJson>,
    weights: Vec<WeightJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputJson {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeJson {
    id: String,
    op: String,
    attrs: Map<String, Value>,
    inputs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightJson {
    id: String,
    name: String,
}

fn pair_json(p: (usize, usize)) -> Value {
    json!([p.0, p.1])
}

fn op_to_parts(op: &Op) -> (String, Map<String, Value>) {
    let mut attrs = Map::new();
    match op {
        Op::Conv2D { stride, pad } => {
            attrs.insert("stride".into(), pair_json(*stride));
            attrs.insert("pad".into(), pair_json(*pad));
        }
        Op::Softmax { axis } | Op::ReduceSum { axis } | Op::ReduceProd { axis } | Op::Concat { axis } => {
            attrs.insert("axis".into(), json!(axis));
        }
        Op::MaxPool { kernel, stride } | Op::AvgPool { kernel, stride } => {
            attrs.insert("kernel".into(), pair_json(*kernel));
            attrs.insert("stride".into(), pair_json(*stride));
        }
        Op::Reshape { shape } | Op::Broadcast { shape } => {
            attrs.insert("shape".into(), json!(shape));
        }
        Op::Transpose { perm } => {
            attrs.insert("perm".into(), json!(perm));
        }
        Op::Gather { axis, indices } => {
            attrs.insert("axis".into(), json!(axis));
            attrs.insert("indices".into(), json!(indices));
        }
        Op::Fused { members } => {
            let ms: Vec<Value> = members.iter().map(node_to_json).collect();
            attrs.insert("members".into(), Value::Array(ms));
        }
        _ => {}
    }
    (op.kind_name().to_string(), attrs)
}

fn node_to_json(n: &OperatorNode) -> Value {
    let (op, attrs) = op_to_parts(&n.op);
    json!({"id": n.id, "op": op, "attrs": attrs, "inputs": n.inputs})
}

struct AttrReader<'a> {
    node: &'a str,
    attrs: &'a Map<String, Value>,
    used: Vec<&'a str>,
}

impl<'a> AttrReader<'a> {
    fn new(node: &'a str, attrs: &'a Map<String, Value>) -> Self {
        AttrReader { node, attrs, used: Vec::new() }
    }

    fn get(&mut self, key: &'static str) -> Result<&'a Value, IoError> {
        self.used.push(key);
        self.attrs.get(key).ok_or_else(|| {
            IoError::Schema(format!("node `{}`: missing attr `{key}`", self.node))
        })
    }

    fn usize_attr(&mut self, key: &'static str) -> Result<usize, IoError> {
        let v = self.get(key)?;
        v.as_u64().map(|u| u as usize).ok_or_else(|| {
            IoError::Schema(format!("node `{}`: attr `{key}` must be an unsigned int", self.node))
        })
    }

    fn list_attr(&mut self, key: &'static str) -> Result<Vec<usize>, IoError> {
        let v = self.get(key)?;
        let arr = v.as_array().ok_or_else(|| {
            IoError::Schema(format!("node `{}`: attr `{key}` must be an array", self.node))
        })?;
        arr.iter()
            .map(|e| {
                e.as_u64().map(|u| u as usize).ok_or_else(|| {
                    IoError::Schema(format!(
                        "node `{}`: attr `{key}` must contain unsigned ints",
                        self.node
                    ))
                })
            })
            .collect()
    }

    fn pair_attr(&mut self, key: &'static str) -> Result<(usize, usize), IoError> {
        let l = self.list_attr(key)?;
        if l.len() != 2 {
            return Err(IoError::Schema(format!(
                "node `{}`: attr `{key}` must have exactly 2 entries",
                self.node
            )));
        }
        Ok((l[0], l[1]))
    }

    fn finish(self) -> Result<(), IoError> {
        for k in self.attrs.keys() {
            if !self.used.contains(&k.as_str()) {
                return Err(IoError::Schema(format!(
                    "node `{}`: unknown attr `{k}`",
                    self.node
                )));
            }
        }
        Ok(())
    }
}

fn op_from_parts(node: &str, op: &str, attrs: &Map<String, Value>) -> Result<Op, IoError> {
    let mut r = AttrReader::new(node, attrs);
    let parsed = match op {
        "Conv2D" => Op::Conv2D { stride: r.pair_attr("stride")?, pad: r.pair_attr("pad")? },
        "MatMul" => Op::MatMul,
        "Add" => Op::Add,
        "Sub" => Op::Sub,
        "Mul" => Op::Mul,
        "Div" => Op::Div,
        "Sqrt" => Op::Sqrt,
        "Square" => Op::Square,
        "Recip" => Op::Recip,
        "Abs" => Op::Abs,
        "Exp" => Op::Exp,
        "ReLU" => Op::Relu,
        "Sigmoid" => Op::Sigmoid,
        "Tanh" => Op::Tanh,
        "Softmax" => Op::Softmax { axis: r.usize_attr("axis")? },
        "ReduceSum" => Op::ReduceSum { axis: r.usize_attr("axis")? },
        "ReduceProd" => Op::ReduceProd { axis: r.usize_attr("axis")? },
        "MaxPool" => Op::MaxPool { kernel: r.pair_attr("kernel")?, stride: r.pair_attr("stride")? },
        "AvgPool" => Op::AvgPool { kernel: r.pair_attr("kernel")?, stride: r.pair_attr("stride")? },
        "Reshape" => Op::Reshape { shape: r.list_attr("shape")? },
        "Transpose" => Op::Transpose { perm: r.list_attr("perm")? },
        "Concat" => Op::Concat { axis: r.usize_attr("axis")? },
        "Gather" => Op::Gather { axis: r.usize_attr("axis")?, indices: r.list_attr("indices")? },
        "Broadcast" => Op::Broadcast { shape: r.list_attr("shape")? },
        "Fused" => {
            let mv = r.get("members")?.clone();
            let arr = mv.as_array().ok_or_else(|| {
                IoError::Schema(format!("node `{node}`: attr `members` must be an array"))
            })?;
            let members = arr
                .iter()
                .map(|m| {
                    let nj: NodeJson = serde_json::from_value(m.clone())
                        .map_err(|e| IoError::Schema(format!("node `{node}`: member: {e}")))?;
                    node_from_json(&nj)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Op::Fused { members }
        }
        other => return Err(IoError::Schema(format!("node `{node}`: unknown op `{other}`"))),
    };
    r.finish()?;
    Ok(parsed)
}

fn node_from_json(nj: &NodeJson) -> Result<OperatorNode, IoError> {
    let op = op_from_parts(&nj.id, &nj.op, &nj.attrs)?;
    Ok(OperatorNode::new(nj.id.clone(), op, nj.inputs.clone()))
}

/// Serialize a graph (without its weight data) to XGIR JSON text.
pub fn graph_to_json(g: &Graph) -> String {
    let model = ModelJson {
        version: 1,
        inputs: g
            .inputs
            .iter()
            .map(|i| InputJson { name: i.name.clone(), shape: i.shape.clone() })
            .collect(),
        outputs: g.outputs.clone(),
        nodes: g
            .nodes
            .iter()
            .map(|n| {
                let (op, attrs) = op_to_parts(&n.op);
                NodeJson { id: n.id.clone(), op, attrs, inputs: n.inputs.clone() }
            })
            .collect(),
        weights: g
            .weights
            .keys()
            .map(|id| WeightJson { id: id.clone(), name: id.clone() })
            .collect(),
    };
    serde_json::to_string_pretty(&model).expect("model serialization cannot fail")
}

/// Parse XGIR JSON. Returns the graph structure plus the weight-id-to-blob
/// name mapping; weight tensors still have to be linked from a blob.
fn graph_from_json(text: &str) -> Result<(Graph, Vec<(String, String)>), IoError> {
    let model: ModelJson =
        serde_json::from_str(text).map_err(|e| IoError::Parse(e.to_string()))?;
    if model.version != 1 {
        return Err(IoError::Schema(format!("unsupported version {}", model.version)));
    }
    let nodes = model
        .nodes
        .iter()
        .map(node_from_json)
        .collect::<Result<Vec<_>, _>>()?;
    let graph = Graph {
        inputs: model
            .inputs
            .into_iter()
            .map(|i| GraphInput { name: i.name, shape: i.shape })
            .collect(),
        outputs: model.outputs,
        nodes,
        weights: BTreeMap::new(),
    };
    let links = model
        .weights
        .into_iter()
        .map(|w| (w.id, w.name))
        .collect();
    Ok((graph, links))
}

// ── XGWT binary ──────────────────────────────────────────────────────

pub const XGWT_MAGIC: &[u8; 4] = b"XGWT";
pub const XGWT_VERSION: u32 = 1;
/// dtype code for tagged opaque payloads (FKW-encoded weights).
pub const DTYPE_TAGGED_FKW: u8 = 100;

/// One entry of an XGWT blob. For dtype 0 the payload is little-endian f32s;
/// for dtype 100 it is an opaque byte string and `dims` is `[byte_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobEntry {
    pub name: String,
    pub dtype: u8,
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl BlobEntry {
    pub fn from_tensor(name: &str, t: &Tensor) -> Self {
        let mut bytes = Vec::with_capacity(t.byte_len());
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        BlobEntry {
            name: name.to_string(),
            dtype: DType::F32.code(),
            dims: t.shape().to_vec(),
            bytes,
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor, IoError> {
        if self.dtype != DType::F32.code() {
            return Err(IoError::Schema(format!(
                "tensor `{}` has non-f32 dtype {}",
                self.name, self.dtype
            )));
        }
        let data: Vec<f32> = self
            .bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::from_vec(self.dims.clone(), data)
            .map_err(|e| IoError::Shape(format!("tensor `{}`: {e}", self.name)))
    }
}

fn align64(n: usize) -> usize {
    n.div_ceil(64) * 64
}

fn payload_len(dtype: u8, dims: &[usize]) -> Result<usize, IoError> {
    let elems: usize = dims.iter().product();
    match dtype {
        0 => Ok(elems * 4),
        DTYPE_TAGGED_FKW => Ok(elems),
        other => Err(IoError::Schema(format!("unknown dtype code {other}"))),
    }
}

/// Encode entries into XGWT bytes. Entry order is preserved.
pub fn write_xgwt(entries: &[BlobEntry]) -> Result<Vec<u8>, IoError> {
    let dir_len: usize = entries
        .iter()
        .map(|e| 2 + e.name.len() + 4 + 4 * e.dims.len() + 1 + 8)
        .sum();
    let header_len = 4 + 4 + 4 + dir_len;

    let mut offsets = Vec::with_capacity(entries.len());
    let mut cursor = align64(header_len);
    for e in entries {
        let len = payload_len(e.dtype, &e.dims)?;
        if len != e.bytes.len() {
            return Err(IoError::Schema(format!(
                "tensor `{}`: dims imply {len} bytes but payload has {}",
                e.name,
                e.bytes.len()
            )));
        }
        offsets.push(cursor);
        cursor = align64(cursor + len);
    }

    let mut out = Vec::with_capacity(cursor);
    out.extend_from_slice(XGWT_MAGIC);
    out.extend_from_slice(&XGWT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (e, off) in entries.iter().zip(&offsets) {
        if e.name.len() > u16::MAX as usize {
            return Err(IoError::Schema(format!("tensor name too long: `{}`", e.name)));
        }
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for &d in &e.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(e.dtype);
        out.extend_from_slice(&(*off as u64).to_le_bytes());
    }
    for (e, off) in entries.iter().zip(&offsets) {
        out.resize(*off, 0);
        out.extend_from_slice(&e.bytes);
    }
    out.resize(cursor.max(out.len()), 0);
    Ok(out)
}

/// Decode an XGWT blob.
pub fn read_xgwt(bytes: &[u8]) -> Result<Vec<BlobEntry>, IoError> {
    struct Cursor<'a> {
        b: &'a [u8],
        pos: usize,
    }
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
            if self.pos + n > self.b.len() {
                return Err(IoError::Parse("truncated XGWT blob".into()));
            }
            let s = &self.b[self.pos..self.pos + n];
            self.pos += n;
            Ok(s)
        }
        fn u16(&mut self) -> Result<u16, IoError> {
            let s = self.take(2)?;
            Ok(u16::from_le_bytes([s[0], s[1]]))
        }
        fn u32(&mut self) -> Result<u32, IoError> {
            let s = self.take(4)?;
            Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        }
        fn u64(&mut self) -> Result<u64, IoError> {
            let s = self.take(8)?;
            Ok(u64::from_le_bytes(s.try_into().unwrap()))
        }
    }

    let mut c = Cursor { b: bytes, pos: 0 };
    if c.take(4)? != XGWT_MAGIC {
        return Err(IoError::Parse("bad magic, not an XGWT blob".into()));
    }
    let version = c.u32()?;
    if version != XGWT_VERSION {
        return Err(IoError::Schema(format!("unsupported XGWT version {version}")));
    }
    let count = c.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| IoError::Parse("tensor name is not utf-8".into()))?;
        let rank = c.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32()? as usize);
        }
        let dtype = c.take(1)?[0];
        let offset = c.u64()? as usize;
        let len = payload_len(dtype, &dims)?;
        if offset % 64 != 0 {
            return Err(IoError::Parse(format!(
                "tensor `{name}`: data offset {offset} not 64-byte aligned"
            )));
        }
        if offset + len > bytes.len() {
            return Err(IoError::Parse(format!("tensor `{name}`: data out of bounds")));
        }
        entries.push(BlobEntry {
            name,
            dtype,
            dims,
            bytes: bytes[offset..offset + len].to_vec(),
        });
    }
    Ok(entries)
}

// ── Model-level save / load ──────────────────────────────────────────

/// Write the graph as XGIR JSON plus an XGWT blob such that [`load_model`]
/// inverts it exactly (byte-identical weights, structurally equal graph).
pub fn save_model(g: &Graph, graph_path: &Path, weights_path: &Path) -> Result<(), IoError> {
    let entries: Vec<BlobEntry> = g
        .weights
        .iter()
        .map(|(id, t)| BlobEntry::from_tensor(id, t))
        .collect();
    std::fs::write(graph_path, graph_to_json(g))?;
    std::fs::write(weights_path, write_xgwt(&entries)?)?;
    Ok(())
}

/// Load and validate a model. Fails on malformed files, unknown ops or
/// attrs, weights missing from the blob, and any graph-invariant violation.
pub fn load_model(graph_path: &Path, weights_path: &Path) -> Result<Graph, IoError> {
    let text = std::fs::read_to_string(graph_path)?;
    let blob = std::fs::read(weights_path)?;
    load_model_from_bytes(&text, &blob)
}

/// [`load_model`] over in-memory file contents.
pub fn load_model_from_bytes(graph_json: &str, weights_blob: &[u8]) -> Result<Graph, IoError> {
    let (mut graph, links) = graph_from_json(graph_json)?;
    let entries = read_xgwt(weights_blob)?;
    let by_name: BTreeMap<&str, &BlobEntry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    for (id, name) in &links {
        let entry = by_name
            .get(name.as_str())
            .ok_or_else(|| IoError::Link(name.clone()))?;
        graph.weights.insert(id.clone(), entry.to_tensor()?);
    }
    let report = validate::validate_graph(&graph);
    if !report.is_ok() {
        return Err(IoError::Shape(report.to_string()));
    }
    Ok(graph)
}
