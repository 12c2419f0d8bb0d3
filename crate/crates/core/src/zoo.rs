//! Bundled toy models and a seeded random-model generator.
//!
//! Real networks the pipeline targets (ResNet-50, GPT-2 class models) are
//! far beyond desk scale, so the test and demo surface is a small zoo: a
//! 6-layer CNN, a small residual net, and a 2-block transformer encoder,
//! plus a generator of random valid graphs that exercises every operator
//! family and the rewrite motifs. Everything is deterministic in the seed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, GraphBuilder};
use crate::ops::Op;
use crate::tensor::Tensor;

/// Weight values are uniform in magnitude over `[0.1, 1.0]` with random
/// sign, so no initialized weight is ever exactly zero and pruning-rate
/// accounting stays exact.
fn sample_weight(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.1f32..=1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("generated shape is valid")
}

/// Look up a bundled model by name: `cnn6`, `resnet-small`, `transformer2`.
pub fn by_name(name: &str, seed: u64) -> Option<Graph> {
    match name {
        "cnn6" => Some(toy_cnn6(seed)),
        "resnet-small" => Some(toy_resnet_small(seed)),
        "transformer2" => Some(toy_transformer2(seed)),
        _ => None,
    }
}

pub const ZOO_NAMES: &[&str] = &["cnn6", "resnet-small", "transformer2"];

/// 6-layer CNN: 1x1 stem, three 3x3 convs, two fully connected layers.
/// Channel counts keep every 3x3 GEMM view at least 12 input channels wide
/// and divisible by 6.
pub fn toy_cnn6(seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Graph::builder()
        .input("x", vec![1, 3, 8, 8])
        .weight("stem.w", sample_weight(&mut rng, vec![12, 3, 1, 1]))
        .weight("conv2.w", sample_weight(&mut rng, vec![12, 12, 3, 3]))
        .weight("conv3.w", sample_weight(&mut rng, vec![16, 12, 3, 3]))
        .weight("conv4.w", sample_weight(&mut rng, vec![16, 16, 3, 3]))
        .weight("fc1.w", sample_weight(&mut rng, vec![64, 36]))
        .weight("fc2.w", sample_weight(&mut rng, vec![36, 10]))
        .node("stem", Op::Conv2D { stride: (1, 1), pad: (0, 0) }, &["x", "stem.w"])
        .node("stem.relu", Op::Relu, &["stem"])
        .node("conv2", Op::Conv2D { stride: (1, 1), pad: (1, 1) }, &["stem.relu", "conv2.w"])
        .node("conv2.relu", Op::Relu, &["conv2"])
        .node("pool1", Op::MaxPool { kernel: (2, 2), stride: (2, 2) }, &["conv2.relu"])
        .node("conv3", Op::Conv2D { stride: (1, 1), pad: (1, 1) }, &["pool1", "conv3.w"])
        .node("conv3.relu", Op::Relu, &["conv3"])
        .node("conv4", Op::Conv2D { stride: (1, 1), pad: (1, 1) }, &["conv3.relu", "conv4.w"])
        .node("conv4.relu", Op::Relu, &["conv4"])
        .node("pool2", Op::AvgPool { kernel: (2, 2), stride: (2, 2) }, &["conv4.relu"])
        .node("flat", Op::Reshape { shape: vec![1, 64] }, &["pool2"])
        .node("fc1", Op::MatMul, &["flat", "fc1.w"])
        .node("fc1.relu", Op::Relu, &["fc1"])
        .node("fc2", Op::MatMul, &["fc1.relu", "fc2.w"])
        .outputs(&["fc2"])
        .build()
}

/// Small residual net: 1x1 stem into two residual blocks of two 3x3 convs.
pub fn toy_resnet_small(seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Graph::builder()
        .input("x", vec![1, 3, 6, 6])
        .weight("stem.w", sample_weight(&mut rng, vec![12, 3, 1, 1]))
        .node("stem", Op::Conv2D { stride: (1, 1), pad: (0, 0) }, &["x", "stem.w"])
        .node("stem.relu", Op::Relu, &["stem"]);
    let mut prev = "stem.relu".to_string();
    for blk in 1..=2 {
        let w1 = format!("res{blk}.c1.w");
        let w2 = format!("res{blk}.c2.w");
        b = b
            .weight(&w1, sample_weight(&mut rng, vec![12, 12, 3, 3]))
            .weight(&w2, sample_weight(&mut rng, vec![12, 12, 3, 3]));
        let c1 = format!("res{blk}.c1");
        let r1 = format!("res{blk}.r1");
        let c2 = format!("res{blk}.c2");
        let add = format!("res{blk}.add");
        let out = format!("res{blk}.out");
        b = b
            .node(&c1, Op::Conv2D { stride: (1, 1), pad: (1, 1) }, &[&prev, &w1])
            .node(&r1, Op::Relu, &[&c1])
            .node(&c2, Op::Conv2D { stride: (1, 1), pad: (1, 1) }, &[&r1, &w2])
            .node(&add, Op::Add, &[&c2, &prev])
            .node(&out, Op::Relu, &[&add]);
        prev = out;
    }
    let mut rng2 = rng;
    b.weight("fc.w", sample_weight(&mut rng2, vec![108, 10]))
        .node("pool", Op::MaxPool { kernel: (2, 2), stride: (2, 2) }, &[&prev])
        .node("flat", Op::Reshape { shape: vec![1, 108] }, &["pool"])
        .node("fc", Op::MatMul, &["flat", "fc.w"])
        .outputs(&["fc"])
        .build()
}

/// 2-block single-head transformer encoder over `[seq=8, d=16]` activations.
pub fn toy_transformer2(seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (seq, d, ffn) = (8usize, 16usize, 32usize);
    let mut b = Graph::builder().input("x", vec![seq, d]);
    b = b.weight(
        "scale",
        Tensor::from_vec(vec![1], vec![1.0 / (d as f32).sqrt()]).unwrap(),
    );
    let mut prev = "x".to_string();
    for blk in 1..=2 {
        let p = format!("b{blk}");
        for w in ["wq", "wk", "wv", "wo"] {
            b = b.weight(&format!("{p}.{w}"), sample_weight(&mut rng, vec![d, d]));
        }
        b = b
            .weight(&format!("{p}.w1"), sample_weight(&mut rng, vec![d, ffn]))
            .weight(&format!("{p}.w2"), sample_weight(&mut rng, vec![ffn, d]));
        b = b
            .node(&format!("{p}.q"), Op::MatMul, &[&prev, &format!("{p}.wq")])
            .node(&format!("{p}.k"), Op::MatMul, &[&prev, &format!("{p}.wk")])
            .node(&format!("{p}.v"), Op::MatMul, &[&prev, &format!("{p}.wv")])
            .node(&format!("{p}.kt"), Op::Transpose { perm: vec![1, 0] }, &[&format!("{p}.k")])
            .node(&format!("{p}.scores"), Op::MatMul, &[&format!("{p}.q"), &format!("{p}.kt")])
            .node(&format!("{p}.sb"), Op::Broadcast { shape: vec![seq, seq] }, &["scale"])
            .node(&format!("{p}.scaled"), Op::Mul, &[&format!("{p}.scores"), &format!("{p}.sb")])
            .node(&format!("{p}.attn"), Op::Softmax { axis: 1 }, &[&format!("{p}.scaled")])
            .node(&format!("{p}.ctx"), Op::MatMul, &[&format!("{p}.attn"), &format!("{p}.v")])
            .node(&format!("{p}.proj"), Op::MatMul, &[&format!("{p}.ctx"), &format!("{p}.wo")])
            .node(&format!("{p}.res1"), Op::Add, &[&prev, &format!("{p}.proj")])
            .node(&format!("{p}.ffn1"), Op::MatMul, &[&format!("{p}.res1"), &format!("{p}.w1")])
            .node(&format!("{p}.act"), Op::Relu, &[&format!("{p}.ffn1")])
            .node(&format!("{p}.ffn2"), Op::MatMul, &[&format!("{p}.act"), &format!("{p}.w2")])
            .node(&format!("{p}.res2"), Op::Add, &[&format!("{p}.res1"), &format!("{p}.ffn2")]);
        prev = format!("{p}.res2");
    }
    let prev_ref: &str = &prev;
    b.outputs(&[prev_ref]).build()
}

// ── Random model generator ───────────────────────────────────────────

struct GenValue {
    id: String,
    shape: Vec<usize>,
    /// Conservative bound on |value| used to keep generated math finite.
    bound: f32,
    /// Statically known non-negative (safe under Sqrt).
    nonneg: bool,
}

struct Gen {
    b: Option<GraphBuilder>,
    rng: ChaCha8Rng,
    values: Vec<GenValue>,
    next_id: usize,
    consumed: Vec<String>,
}

impl Gen {
    fn fresh(&mut self, prefix: &str) -> String {
        self.next_id += 1;
        format!("{prefix}{}", self.next_id)
    }

    // Generator weights are all positive: sums and products of them cannot
    // cancel, so the two sides of an algebraic rewrite agree to a few ulps
    // of each element's own magnitude. Signed values still flow from the
    // graph input, Tanh, and Sub.
    fn weight(&mut self, shape: Vec<usize>) -> String {
        self.scaled_weight(shape, 1.0, true)
    }

    /// Weight scaled by `scale`; conv and matmul layers pass `1/fan_in` to
    /// keep activation magnitudes near the input scale, the way initialized
    /// networks do. `positive` drops the sign flip: dot products over
    /// same-sign terms cannot cancel, which keeps a 1-ulp perturbation from
    /// blowing past the 1e-5 semantic-preservation tolerance downstream.
    fn scaled_weight(&mut self, shape: Vec<usize>, scale: f32, positive: bool) -> String {
        let id = self.fresh("w");
        let mut t = sample_weight(&mut self.rng, shape);
        for v in t.data_mut() {
            *v *= scale;
            if positive {
                *v = v.abs();
            }
        }
        self.b = Some(self.b.take().unwrap().weight(&id, t));
        id
    }

    /// A non-negative view of a value: the value itself when statically
    /// non-negative, otherwise a fresh Abs node over it.
    fn nonneg_view(&mut self, vid: &str, shape: &[usize], bound: f32, nonneg: bool) -> String {
        if nonneg {
            vid.to_string()
        } else {
            self.node(Op::Abs, &[vid], shape.to_vec(), bound, true)
        }
    }

    fn const_weight(&mut self, shape: Vec<usize>, v: f32) -> String {
        let id = self.fresh("w");
        let n: usize = shape.iter().product();
        let t = Tensor::from_vec(shape, vec![v; n]).unwrap();
        self.b = Some(self.b.take().unwrap().weight(&id, t));
        id
    }

    fn node(&mut self, op: Op, inputs: &[&str], shape: Vec<usize>, bound: f32, nonneg: bool) -> String {
        let id = self.fresh("n");
        self.b = Some(self.b.take().unwrap().node(&id, op, inputs));
        for i in inputs {
            self.consumed.push(i.to_string());
        }
        self.values.push(GenValue { id: id.clone(), shape, bound, nonneg });
        id
    }

    fn pick(&mut self) -> usize {
        self.rng.gen_range(0..self.values.len())
    }
}

/// Generate a random valid model. Graphs mix elementwise chains, conv or
/// matmul layers, reductions, data movement, and the rewrite motifs, with
/// magnitude bounds tracked so no value overflows f32.
pub fn random_model(seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vision = rng.gen_bool(0.5);
    let mut g = Gen {
        b: Some(Graph::builder()),
        rng,
        values: Vec::new(),
        next_id: 0,
        consumed: Vec::new(),
    };

    let input_shape = if vision {
        let c = g.rng.gen_range(2..=4usize);
        let hw = [6, 8][g.rng.gen_range(0..2usize)];
        vec![1, c, hw, hw]
    } else {
        vec![g.rng.gen_range(3..=6usize), g.rng.gen_range(4..=8usize)]
    };
    g.b = Some(g.b.take().unwrap().input("x", input_shape.clone()));
    g.values.push(GenValue { id: "x".into(), shape: input_shape, bound: 1.0, nonneg: false });

    let steps = g.rng.gen_range(6..=14usize);
    for _ in 0..steps {
        let v = g.pick();
        let (vid, vshape, vbound, vnonneg) = {
            let v = &g.values[v];
            (v.id.clone(), v.shape.clone(), v.bound, v.nonneg)
        };
        let elems: usize = vshape.iter().product();
        match g.rng.gen_range(0..12u32) {
            // Plain unary. Saturating ops only see small magnitudes so that
            // upstream rounding differences stay well under tolerance.
            0 => {
                let (op, bound, nonneg) = match g.rng.gen_range(0..4u32) {
                    0 => (Op::Relu, vbound, true),
                    1 => (Op::Abs, vbound, true),
                    2 if vbound < 8.0 => (Op::Sigmoid, 1.0, true),
                    _ if vbound < 8.0 => (Op::Tanh, 1.0, false),
                    _ => (Op::Abs, vbound, true),
                };
                g.node(op, &[&vid], vshape, bound, nonneg);
            }
            // Binary with a fresh weight (bounded by |w| <= 1).
            1 => {
                let w = g.weight(vshape.clone());
                let op = [Op::Add, Op::Sub, Op::Mul][g.rng.gen_range(0..3usize)].clone();
                let bound = match op {
                    Op::Mul => vbound,
                    _ => vbound + 1.0,
                };
                if bound < 1e4 {
                    g.node(op, &[&vid, &w], vshape, bound, false);
                }
            }
            // Binary with another live value of the same shape, if any.
            2 => {
                let partner = g
                    .values
                    .iter()
                    .filter(|o| o.shape == vshape && o.id != vid)
                    .map(|o| (o.id.clone(), o.bound))
                    .next();
                if let Some((pid, pbound)) = partner {
                    if vbound + pbound < 1e4 {
                        g.node(Op::Add, &[&vid, &pid], vshape, vbound + pbound, false);
                    }
                }
            }
            // Distributive motif: Mul(a,B) + Mul(a,C).
            3 => {
                if vbound < 32.0 {
                    let wb = g.weight(vshape.clone());
                    let wc = g.weight(vshape.clone());
                    let m1 = g.node(Op::Mul, &[&vid, &wb], vshape.clone(), vbound, false);
                    let m2 = g.node(Op::Mul, &[&vid, &wc], vshape.clone(), vbound, false);
                    g.node(Op::Add, &[&m1, &m2], vshape, 2.0 * vbound, false);
                }
            }
            // Reduce-of-exp motif: ReduceProd(Exp(a)) over a short axis.
            4 => {
                let axis = g.rng.gen_range(0..vshape.len());
                let n = vshape[axis];
                if vbound <= 1.0 && (vbound.exp()).powi(n as i32) < 64.0 {
                    let e = g.node(Op::Exp, &[&vid], vshape.clone(), vbound.exp(), true);
                    let mut out_shape: Vec<usize> = vshape
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != axis)
                        .map(|(_, d)| *d)
                        .collect();
                    if out_shape.is_empty() {
                        out_shape.push(1);
                    }
                    g.node(
                        Op::ReduceProd { axis },
                        &[&e],
                        out_shape,
                        vbound.exp().powi(n as i32),
                        true,
                    );
                }
            }
            // Sqrt-then-square motif over a non-negative value.
            5 => {
                let base = if vnonneg {
                    vid.clone()
                } else {
                    g.node(Op::Abs, &[&vid], vshape.clone(), vbound, true)
                };
                let s = g.node(Op::Sqrt, &[&base], vshape.clone(), vbound.sqrt(), true);
                g.node(Op::Square, &[&s], vshape, vbound, true);
            }
            // Double reciprocal over a denominator bounded away from zero.
            6 => {
                if vbound < 90.0 {
                    let sq = g.node(Op::Square, &[&vid], vshape.clone(), vbound * vbound, true);
                    let one = g.const_weight(vshape.clone(), 1.0);
                    let den = g.node(Op::Add, &[&sq, &one], vshape.clone(), vbound * vbound + 1.0, true);
                    let r1 = g.node(Op::Recip, &[&den], vshape.clone(), 1.0, true);
                    g.node(Op::Recip, &[&r1], vshape, vbound * vbound + 1.0, true);
                }
            }
            // Transpose pair.
            7 => {
                if vshape.len() >= 2 {
                    let mut perm: Vec<usize> = (0..vshape.len()).collect();
                    perm.swap(0, vshape.len() - 1);
                    let inv = perm.clone(); // a swap is its own inverse
                    let tshape: Vec<usize> = perm.iter().map(|&p| vshape[p]).collect();
                    let t1 = g.node(Op::Transpose { perm: perm.clone() }, &[&vid], tshape, vbound, vnonneg);
                    g.node(Op::Transpose { perm: inv }, &[&t1], vshape, vbound, vnonneg);
                }
            }
            // Multiply by constant one / add constant zero.
            8 => {
                if g.rng.gen_bool(0.5) {
                    let one = g.const_weight(vshape.clone(), 1.0);
                    g.node(Op::Mul, &[&vid, &one], vshape, vbound, vnonneg);
                } else {
                    let zero = g.const_weight(vshape.clone(), 0.0);
                    g.node(Op::Add, &[&vid, &zero], vshape, vbound, vnonneg);
                }
            }
            // Conv or matmul layer: non-negative input, positive fan-in
            // normalized weights, so dot products never cancel.
            9 => {
                if vshape.len() == 4 && vbound < 50.0 {
                    let src = g.nonneg_view(&vid, &vshape, vbound, vnonneg);
                    let cin = vshape[1];
                    let cout = g.rng.gen_range(2..=6usize);
                    let one_by_one = g.rng.gen_bool(0.3);
                    let (k, pad) = if one_by_one { (1, 0) } else { (3, 1) };
                    let fan_in = (cin * k * k) as f32;
                    let w = g.scaled_weight(vec![cout, cin, k, k], 1.0 / fan_in, true);
                    let out = vec![vshape[0], cout, vshape[2], vshape[3]];
                    g.node(Op::Conv2D { stride: (1, 1), pad: (pad, pad) }, &[&src, &w], out, vbound, true);
                } else if vshape.len() == 2 && vbound < 50.0 {
                    let src = g.nonneg_view(&vid, &vshape, vbound, vnonneg);
                    let n = g.rng.gen_range(3..=8usize);
                    let w = g.scaled_weight(vec![vshape[1], n], 1.0 / vshape[1] as f32, true);
                    let out = vec![vshape[0], n];
                    g.node(Op::MatMul, &[&src, &w], out, vbound, true);
                }
            }
            // Pooling or softmax.
            10 => {
                if vshape.len() == 4 && vshape[2] >= 4 && vshape[3] >= 4 {
                    let out = vec![vshape[0], vshape[1], vshape[2] / 2, vshape[3] / 2];
                    g.node(
                        Op::MaxPool { kernel: (2, 2), stride: (2, 2) },
                        &[&vid],
                        out,
                        vbound,
                        vnonneg,
                    );
                } else if vbound < 8.0 {
                    let axis = vshape.len() - 1;
                    g.node(Op::Softmax { axis }, &[&vid], vshape, 1.0, true);
                }
            }
            // Reduce, gather, or concat with self.
            _ => match g.rng.gen_range(0..3u32) {
                0 => {
                    let axis = g.rng.gen_range(0..vshape.len());
                    let n = vshape[axis];
                    let mut out: Vec<usize> = vshape
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != axis)
                        .map(|(_, d)| *d)
                        .collect();
                    if out.is_empty() {
                        out.push(1);
                    }
                    if vbound * (n as f32) < 1e4 {
                        g.node(Op::ReduceSum { axis }, &[&vid], out, vbound * n as f32, vnonneg);
                    }
                }
                1 => {
                    let axis = vshape.len() - 1;
                    let take = (vshape[axis] + 1) / 2;
                    let indices: Vec<usize> = (0..take).collect();
                    let mut out = vshape.clone();
                    out[axis] = take;
                    g.node(Op::Gather { axis, indices }, &[&vid], out, vbound, vnonneg);
                }
                _ => {
                    if elems <= 512 && vbound < 1e4 {
                        let mut out = vshape.clone();
                        out[0] *= 2;
                        g.node(Op::Concat { axis: 0 }, &[&vid, &vid], out, vbound, vnonneg);
                    }
                }
            },
        }
    }

    // Every sink (value no node consumes) becomes a graph output, so the
    // whole graph is live.
    let consumed: std::collections::HashSet<&str> =
        g.consumed.iter().map(|s| s.as_str()).collect();
    let sinks: Vec<String> = g
        .values
        .iter()
        .filter(|v| v.id != "x" && !consumed.contains(v.id.as_str()))
        .map(|v| v.id.clone())
        .collect();
    let sink_refs: Vec<&str> = sinks.iter().map(|s| s.as_str()).collect();
    let builder = g.b.take().unwrap();
    if sink_refs.is_empty() {
        // Degenerate roll: everything was consumed; emit the last value.
        let last = g.values.last().unwrap().id.clone();
        builder.outputs(&[&last]).build()
    } else {
        builder.outputs(&sink_refs).build()
    }
}

/// Deterministic random input feeds for a graph, uniform in `[-1, 1]`.
pub fn random_inputs(g: &Graph, seed: u64, count: usize) -> Vec<BTreeMap<String, Tensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1234_abcd_ef00);
    (0..count)
        .map(|_| {
            g.inputs
                .iter()
                .map(|inp| {
                    let n: usize = inp.shape.iter().product();
                    let data = (0..n).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
                    (
                        inp.name.clone(),
                        Tensor::from_vec(inp.shape.clone(), data).unwrap(),
                    )
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::execute_reference;
    use crate::validate::validate_graph;

    #[test]
    fn zoo_models_are_valid_and_runnable() {
        for name in ZOO_NAMES {
            let g = by_name(name, 1).unwrap();
            let report = validate_graph(&g);
            assert!(report.is_ok(), "{name}: {report}");
            let feeds = random_inputs(&g, 1, 1);
            let values = execute_reference(&g, &feeds[0]).unwrap();
            for out in &g.outputs {
                assert!(values[out].data().iter().all(|v| v.is_finite()), "{name} output not finite");
            }
        }
    }

    #[test]
    fn random_models_valid_and_finite() {
        for seed in 0..40 {
            let g = random_model(seed);
            let report = validate_graph(&g);
            assert!(report.is_ok(), "seed {seed}: {report}");
            let feeds = random_inputs(&g, seed, 2);
            for feed in &feeds {
                let values = execute_reference(&g, feed)
                    .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
                for out in &g.outputs {
                    assert!(
                        values[out].data().iter().all(|v| v.is_finite()),
                        "seed {seed}: output {out} not finite"
                    );
                }
            }
        }
    }

    #[test]
    fn generator_is_deterministic() {
        assert_eq!(random_model(42), random_model(42));
        let g = random_model(42);
        assert_eq!(random_inputs(&g, 9, 3), random_inputs(&g, 9, 3));
    }
}
