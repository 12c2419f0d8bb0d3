//! Mathematical-property based graph rewriting.
//!
//! The pass runs a greedy fixed-point loop: scan the graph in topological
//! order, at each anchor try the rules in registration order, and apply the
//! first match whose FLOP delta is negative (zero is allowed only for
//! commutative enabling rules). Guards are static only: shapes, attributes,
//! and constant signs, never runtime data.
//!
//! Termination: every applied step decreases the pair (total FLOPs, number
//! of `ReduceProd` nodes) lexicographically. All builtin rules except the
//! exp/reduce swap strictly reduce FLOPs; the swap reduces FLOPs or, over a
//! length-1 axis, leaves them unchanged while removing a `ReduceProd`. No
//! rule introduces a `ReduceProd`, so the pass reaches a fixed point; on top
//! of that the step budget is a hard bound.

mod pattern;
mod rules;

pub use pattern::{AttrVal, Binding, Pat, PatOp};
pub use rules::builtin_rules;

use serde::Serialize;
use thiserror::Error;

use xgir_core::flops::count_flops;
use xgir_core::graph::{Graph, GraphError, NodeId};
use xgir_core::ops::Op;
use xgir_core::topo;

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("rule `{rule}` failed its registration self-test on binding {binding_seed}: {detail}")]
    SelfTest {
        rule: &'static str,
        binding_seed: u64,
        detail: String,
    },
}

/// The mathematical property a rule is based on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Property {
    Associative,
    Distributive,
    Commutative,
    Identity,
}

/// Static predicate on a binding.
#[derive(Debug, Clone, PartialEq)]
pub enum Guard {
    None,
    /// Slot value is statically known non-negative.
    SlotNonNegative(usize),
    /// Slot value is a weight constant that is all ones.
    SlotConstOne(usize),
    /// Slot value is a weight constant that is all zeros.
    SlotConstZero(usize),
    /// Two permutation attr vars compose to the identity.
    PermsInverse(usize, usize),
}

/// A rewrite rule: a pattern template, a replacement over the same slots,
/// and a static guard. Semantic equality of the two sides on the guard's
/// domain is verified by randomized testing when the builtin set is
/// registered.
#[derive(Debug, Clone)]
pub struct RewriteRule {
    pub name: &'static str,
    pub property: Property,
    pub pattern: Pat,
    pub replacement: Pat,
    pub guard: Guard,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RewriteStep {
    pub rule: String,
    pub anchor: NodeId,
    pub flop_delta: i64,
}

#[derive(Debug, Clone, Serialize, PartialEq, Default)]
pub struct RewriteLog {
    pub steps: Vec<RewriteStep>,
    pub flops_before: u64,
    pub flops_after: u64,
    pub truncated: bool,
}

/// Is `value` statically known to be element-wise non-negative?
///
/// True for weight constants with no negative element and for outputs of
/// operators that preserve or create non-negativity from non-negative
/// inputs. Conservative: unknown means false.
pub fn value_nonneg(g: &Graph, value: &str) -> bool {
    if let Some(w) = g.weights.get(value) {
        return w.data().iter().all(|&v| v >= 0.0);
    }
    let Some(node) = g.node(value) else { return false };
    match &node.op {
        Op::Abs | Op::Square | Op::Exp | Op::Relu | Op::Sigmoid | Op::Sqrt | Op::Softmax { .. } => {
            true
        }
        Op::Add
        | Op::Mul
        | Op::ReduceSum { .. }
        | Op::ReduceProd { .. }
        | Op::MaxPool { .. }
        | Op::AvgPool { .. }
        | Op::Concat { .. } => node.inputs.iter().all(|i| value_nonneg(g, i)),
        Op::Reshape { .. }
        | Op::Transpose { .. }
        | Op::Gather { .. }
        | Op::Broadcast { .. } => value_nonneg(g, &node.inputs[0]),
        _ => false,
    }
}

fn guard_holds(g: &Graph, guard: &Guard, b: &Binding) -> bool {
    match guard {
        Guard::None => true,
        Guard::SlotNonNegative(i) => value_nonneg(g, b.slot(*i)),
        Guard::SlotConstOne(i) => g
            .weights
            .get(b.slot(*i))
            .map(|w| w.data().iter().all(|&v| v == 1.0))
            .unwrap_or(false),
        Guard::SlotConstZero(i) => g
            .weights
            .get(b.slot(*i))
            .map(|w| w.data().iter().all(|&v| v == 0.0))
            .unwrap_or(false),
        Guard::PermsInverse(pv, qv) => {
            let p = b.perm(*pv);
            let q = b.perm(*qv);
            p.len() == q.len() && (0..q.len()).all(|d| p[q[d]] == d)
        }
    }
}

/// Match `rule` with its pattern rooted at `anchor`.
///
/// Returns the first binding (in the matcher's deterministic order) that
/// satisfies the guard and the consumer constraint: every internal pattern
/// value (matched operator nodes other than the anchor) is consumed only by
/// other matched nodes and is not a graph output.
pub fn match_rule(g: &Graph, rule: &RewriteRule, anchor: &str) -> Option<Binding> {
    let seed = pattern::empty_binding(&rule.pattern, &rule.replacement);
    let candidates = pattern::enumerate_matches(g, &rule.pattern, anchor, seed);
    candidates.into_iter().find(|b| {
        internal_values_private(g, b) && guard_holds(g, &rule.guard, b)
    })
}

fn internal_values_private(g: &Graph, b: &Binding) -> bool {
    let matched: std::collections::HashSet<&str> =
        b.matched.iter().map(|s| s.as_str()).collect();
    b.matched.iter().skip(1).all(|internal| {
        !g.is_graph_output(internal)
            && g.consumers(internal)
                .iter()
                .all(|c| matched.contains(c.id.as_str()))
    })
}

/// Apply one matched rewrite, returning the new graph. The anchor's output
/// value id is preserved (the replacement root takes it over, or consumers
/// are redirected when the replacement is a bare slot), so downstream nodes
/// and graph outputs never need fixing up beyond redirection.
fn apply_binding(g: &Graph, rule: &RewriteRule, anchor: &str, b: &Binding, step: usize) -> Graph {
    let mut out = g.clone();

    match &rule.replacement {
        Pat::Slot(i) => {
            let target = b.slot(*i).clone();
            for node in &mut out.nodes {
                for input in &mut node.inputs {
                    if input == anchor {
                        *input = target.clone();
                    }
                }
            }
            for o in &mut out.outputs {
                if o == anchor {
                    *o = target.clone();
                }
            }
            out.nodes.retain(|n| n.id != anchor);
        }
        Pat::Op(root_op, root_subs) => {
            let mut counter = 0usize;
            let inputs: Vec<String> = root_subs
                .iter()
                .map(|s| build_replacement(&mut out, s, b, anchor, step, &mut counter))
                .collect();
            let node = out
                .nodes
                .iter_mut()
                .find(|n| n.id == anchor)
                .expect("anchor exists");
            node.op = root_op.to_op(b);
            node.inputs = inputs;
        }
    }

    // Internal pattern nodes are dead once the anchor stops consuming them;
    // they may feed each other, so sweep to a fixed point.
    let internal: std::collections::HashSet<&str> =
        b.matched.iter().skip(1).map(|s| s.as_str()).collect();
    loop {
        let dead: Vec<String> = out
            .nodes
            .iter()
            .filter(|n| {
                internal.contains(n.id.as_str())
                    && out.consumers(&n.id).is_empty()
                    && !out.is_graph_output(&n.id)
            })
            .map(|n| n.id.clone())
            .collect();
        if dead.is_empty() {
            break;
        }
        out.nodes.retain(|n| !dead.contains(&n.id));
    }
    out
}

fn build_replacement(
    out: &mut Graph,
    pat: &Pat,
    b: &Binding,
    anchor: &str,
    step: usize,
    counter: &mut usize,
) -> String {
    match pat {
        Pat::Slot(i) => b.slot(*i).clone(),
        Pat::Op(op, subs) => {
            let inputs: Vec<String> = subs
                .iter()
                .map(|s| build_replacement(out, s, b, anchor, step, counter))
                .collect();
            *counter += 1;
            let id = out.fresh_id(&format!("{anchor}.r{step}n{counter}"));
            out.nodes
                .push(xgir_core::graph::OperatorNode::new(id.clone(), op.to_op(b), inputs));
            id
        }
    }
}

/// Greedy fixed-point rewriting. Scans in topological order; at each anchor
/// tries rules in registration order and applies the first match whose FLOP
/// delta qualifies. Stops at a fixed point or after `max_steps` applications
/// (the log is then flagged truncated).
pub fn apply_rewrites(
    g: &Graph,
    rules: &[RewriteRule],
    max_steps: usize,
) -> Result<(Graph, RewriteLog), RewriteError> {
    let mut current = g.clone();
    let mut log = RewriteLog {
        flops_before: count_flops(&current)?.total,
        ..Default::default()
    };
    let mut flops_current = log.flops_before;

    loop {
        let mut applied = false;
        let order = topo::topo_order(&current)?;
        'scan: for anchor in &order {
            if current.node(anchor).is_none() {
                continue; // removed by an earlier step in this scan
            }
            for rule in rules {
                let Some(binding) = match_rule(&current, rule, anchor) else {
                    continue;
                };
                let candidate = apply_binding(&current, rule, anchor, &binding, log.steps.len());
                let flops_after = count_flops(&candidate)?.total;
                let delta = flops_after as i64 - flops_current as i64;
                let qualifies =
                    delta < 0 || (delta == 0 && rule.property == Property::Commutative);
                if !qualifies {
                    continue;
                }
                if log.steps.len() >= max_steps {
                    log.truncated = true;
                    log.flops_after = flops_current;
                    return Ok((current, log));
                }
                log.steps.push(RewriteStep {
                    rule: rule.name.to_string(),
                    anchor: anchor.clone(),
                    flop_delta: delta,
                });
                current = candidate;
                flops_current = flops_after;
                applied = true;
                break 'scan;
            }
        }
        if !applied {
            break;
        }
    }

    log.flops_after = flops_current;
    Ok((current, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use xgir_core::exec::execute_reference;
    use xgir_core::tensor::Tensor;
    use xgir_core::validate::validate_graph;
    use xgir_core::{max_rel_error, zoo};

    fn r1_motif() -> Graph {
        Graph::builder()
            .input("a", vec![2, 3])
            .input("b", vec![2, 3])
            .input("c", vec![2, 3])
            .node("m1", Op::Mul, &["a", "b"])
            .node("m2", Op::Mul, &["a", "c"])
            .node("sum", Op::Add, &["m1", "m2"])
            .outputs(&["sum"])
            .build()
    }

    #[test]
    fn distributive_factor_flops_18_to_12() {
        let rules = builtin_rules().unwrap();
        let (rewritten, log) = apply_rewrites(&r1_motif(), rules, 100).unwrap();
        assert_eq!(log.flops_before, 18);
        assert_eq!(log.flops_after, 12);
        assert_eq!(log.steps.len(), 1);
        assert_eq!(log.steps[0].flop_delta, -6);
        assert!(validate_graph(&rewritten).is_ok());
    }

    #[test]
    fn exp_reduce_swap_flops_12_to_8() {
        let g = Graph::builder()
            .input("a", vec![2, 3])
            .node("e", Op::Exp, &["a"])
            .node("p", Op::ReduceProd { axis: 1 }, &["e"])
            .outputs(&["p"])
            .build();
        let rules = builtin_rules().unwrap();
        let (rewritten, log) = apply_rewrites(&g, rules, 100).unwrap();
        assert_eq!(log.flops_before, 12);
        assert_eq!(log.flops_after, 8);
        let values = execute_reference(
            &rewritten,
            &BTreeMap::from([(
                "a".to_string(),
                Tensor::from_vec(vec![2, 3], vec![0.1, 0.2, 0.3, -0.1, 0.0, 0.5]).unwrap(),
            )]),
        )
        .unwrap();
        let expected = execute_reference(
            &g,
            &BTreeMap::from([(
                "a".to_string(),
                Tensor::from_vec(vec![2, 3], vec![0.1, 0.2, 0.3, -0.1, 0.0, 0.5]).unwrap(),
            )]),
        )
        .unwrap();
        let got = values[&rewritten.outputs[0]].clone();
        let want = expected[&g.outputs[0]].clone();
        assert!(max_rel_error(&got, &want) < 1e-5);
    }

    #[test]
    fn no_match_leaves_graph_unchanged() {
        let g = Graph::builder()
            .input("x", vec![2, 2])
            .node("t", Op::Tanh, &["x"])
            .outputs(&["t"])
            .build();
        let rules = builtin_rules().unwrap();
        let (rewritten, log) = apply_rewrites(&g, rules, 100).unwrap();
        assert_eq!(rewritten, g);
        assert!(log.steps.is_empty());
        assert_eq!(log.flops_before, log.flops_after);
    }

    #[test]
    fn external_consumer_blocks_match() {
        // The intermediate Mul(a,b) also feeds a graph output: no match.
        let mut g = r1_motif();
        g.outputs.push("m1".into());
        let rules = builtin_rules().unwrap();
        let r1 = rules.iter().find(|r| r.name == "distributive_factor").unwrap();
        assert!(match_rule(&g, r1, "sum").is_none());
        let (_, log) = apply_rewrites(&g, std::slice::from_ref(r1), 100).unwrap();
        assert!(log.steps.is_empty());
    }

    #[test]
    fn log_delta_sum_matches_totals() {
        for seed in 0..25u64 {
            let g = zoo::random_model(seed);
            let rules = builtin_rules().unwrap();
            let (rewritten, log) = apply_rewrites(&g, rules, 1000).unwrap();
            let sum: i64 = log.steps.iter().map(|s| s.flop_delta).sum();
            assert_eq!(log.flops_after as i64, log.flops_before as i64 + sum);
            assert!(log.flops_after <= log.flops_before);
            assert!(validate_graph(&rewritten).is_ok(), "seed {seed}");
            // Empirical termination bound.
            assert!(log.steps.len() <= 3 * g.nodes.len(), "seed {seed}");
        }
    }

    #[test]
    fn semantic_preservation_on_random_models() {
        let rules = builtin_rules().unwrap();
        for seed in 0..25u64 {
            let g = zoo::random_model(seed);
            let (rewritten, _) = apply_rewrites(&g, rules, 1000).unwrap();
            for feed in zoo::random_inputs(&g, seed, 4) {
                let want = execute_reference(&g, &feed).unwrap();
                let got = execute_reference(&rewritten, &feed).unwrap();
                for (i, o) in g.outputs.iter().enumerate() {
                    let err = max_rel_error(&got[&rewritten.outputs[i]], &want[o]);
                    assert!(err < 1e-5, "seed {seed}, output {o}: rel error {err}");
                }
            }
        }
    }

    #[test]
    fn step_budget_truncates() {
        let g = r1_motif();
        let rules = builtin_rules().unwrap();
        let (out, log) = apply_rewrites(&g, rules, 0).unwrap();
        assert!(log.truncated);
        assert_eq!(out, g);
    }

    #[test]
    fn nonneg_analysis() {
        let g = Graph::builder()
            .input("x", vec![2])
            .weight("w", Tensor::from_vec(vec![2], vec![0.5, 1.0]).unwrap())
            .weight("wn", Tensor::from_vec(vec![2], vec![-0.5, 1.0]).unwrap())
            .node("a", Op::Abs, &["x"])
            .node("s", Op::Add, &["a", "w"])
            .node("t", Op::Add, &["x", "w"])
            .outputs(&["s", "t"])
            .build();
        assert!(value_nonneg(&g, "a"));
        assert!(value_nonneg(&g, "s"));
        assert!(value_nonneg(&g, "w"));
        assert!(!value_nonneg(&g, "wn"));
        assert!(!value_nonneg(&g, "t"));
        assert!(!value_nonneg(&g, "x"));
    }
}
