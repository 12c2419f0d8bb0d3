//! Small template graphs with slot variables, and the structural matcher.
//!
//! A pattern is a tree of operator matchers over slots. Slots bind value ids
//! (graph inputs, weights, or node outputs); repeated slots must bind the
//! same value. Attribute variables (reduction axes, permutations) unify the
//! same way. `Add` and `Mul` are matched commutatively, so one pattern
//! covers both operand orders.

use xgir_core::graph::{Graph, NodeId, ValueId};
use xgir_core::ops::Op;

/// One node of a pattern or replacement template.
#[derive(Debug, Clone, PartialEq)]
pub enum Pat {
    /// Matches any value; index into the rule's slot table.
    Slot(usize),
    Op(PatOp, Vec<Pat>),
}

/// Operator matcher. Attribute variables index into the binding's attr table.
#[derive(Debug, Clone, PartialEq)]
pub enum PatOp {
    Add,
    Mul,
    Sqrt,
    Square,
    Recip,
    Abs,
    Exp,
    ReduceSum { axis_var: usize },
    ReduceProd { axis_var: usize },
    Transpose { perm_var: usize },
}

impl PatOp {
    fn commutative(&self) -> bool {
        matches!(self, PatOp::Add | PatOp::Mul)
    }

    /// Does `op` match, and if so, which attr-variable assignments follow?
    fn matches(&self, op: &Op) -> Option<Vec<(usize, AttrVal)>> {
        match (self, op) {
            (PatOp::Add, Op::Add)
            | (PatOp::Mul, Op::Mul)
            | (PatOp::Sqrt, Op::Sqrt)
            | (PatOp::Square, Op::Square)
            | (PatOp::Recip, Op::Recip)
            | (PatOp::Abs, Op::Abs)
            | (PatOp::Exp, Op::Exp) => Some(vec![]),
            (PatOp::ReduceSum { axis_var }, Op::ReduceSum { axis })
            | (PatOp::ReduceProd { axis_var }, Op::ReduceProd { axis }) => {
                Some(vec![(*axis_var, AttrVal::Axis(*axis))])
            }
            (PatOp::Transpose { perm_var }, Op::Transpose { perm }) => {
                Some(vec![(*perm_var, AttrVal::Perm(perm.clone()))])
            }
            _ => None,
        }
    }

    /// Materialize the concrete operator for a replacement template.
    pub fn to_op(&self, binding: &Binding) -> Op {
        match self {
            PatOp::Add => Op::Add,
            PatOp::Mul => Op::Mul,
            PatOp::Sqrt => Op::Sqrt,
            PatOp::Square => Op::Square,
            PatOp::Recip => Op::Recip,
            PatOp::Abs => Op::Abs,
            PatOp::Exp => Op::Exp,
            PatOp::ReduceSum { axis_var } => Op::ReduceSum { axis: binding.axis(*axis_var) },
            PatOp::ReduceProd { axis_var } => Op::ReduceProd { axis: binding.axis(*axis_var) },
            PatOp::Transpose { perm_var } => Op::Transpose { perm: binding.perm(*perm_var).to_vec() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttrVal {
    Axis(usize),
    Perm(Vec<usize>),
}

/// A slot/attr assignment produced by a successful match.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Binding {
    pub slots: Vec<Option<ValueId>>,
    pub attrs: Vec<Option<AttrVal>>,
    /// Nodes structurally matched by `Pat::Op`, pattern pre-order; the first
    /// entry is the anchor.
    pub matched: Vec<NodeId>,
}

impl Binding {
    fn sized(slots: usize, attrs: usize) -> Self {
        Binding {
            slots: vec![None; slots],
            attrs: vec![None; attrs],
            matched: Vec::new(),
        }
    }

    pub fn slot(&self, i: usize) -> &ValueId {
        self.slots[i].as_ref().expect("slot bound by match")
    }

    pub fn axis(&self, i: usize) -> usize {
        match self.attrs[i].as_ref().expect("attr bound by match") {
            AttrVal::Axis(a) => *a,
            AttrVal::Perm(_) => panic!("attr var {i} bound to a permutation"),
        }
    }

    pub fn perm(&self, i: usize) -> &[usize] {
        match self.attrs[i].as_ref().expect("attr bound by match") {
            AttrVal::Perm(p) => p,
            AttrVal::Axis(_) => panic!("attr var {i} bound to an axis"),
        }
    }
}

/// Number of slot and attr variables a pattern/replacement pair uses.
pub fn var_counts(pats: &[&Pat]) -> (usize, usize) {
    fn walk(p: &Pat, slots: &mut usize, attrs: &mut usize) {
        match p {
            Pat::Slot(i) => *slots = (*slots).max(i + 1),
            Pat::Op(op, subs) => {
                let a = match op {
                    PatOp::ReduceSum { axis_var }
                    | PatOp::ReduceProd { axis_var } => Some(*axis_var),
                    PatOp::Transpose { perm_var } => Some(*perm_var),
                    _ => None,
                };
                if let Some(a) = a {
                    *attrs = (*attrs).max(a + 1);
                }
                for s in subs {
                    walk(s, slots, attrs);
                }
            }
        }
    }
    let (mut s, mut a) = (0, 0);
    for p in pats {
        walk(p, &mut s, &mut a);
    }
    (s, a)
}

/// All bindings of `pattern` rooted at value `anchor`, in a deterministic
/// order (commutative alternatives explored second-operand-swapped last).
/// Does not check guards or consumer constraints.
pub fn enumerate_matches(g: &Graph, pattern: &Pat, anchor: &str, binding: Binding) -> Vec<Binding> {
    match pattern {
        Pat::Slot(i) => {
            let mut b = binding;
            match &b.slots[*i] {
                Some(bound) if bound != anchor => vec![],
                _ => {
                    b.slots[*i] = Some(anchor.to_string());
                    vec![b]
                }
            }
        }
        Pat::Op(pop, subs) => {
            let Some(node) = g.node(anchor) else { return vec![] };
            let Some(attr_binds) = pop.matches(&node.op) else { return vec![] };
            if node.inputs.len() != subs.len() {
                return vec![];
            }
            let mut b = binding;
            for (var, val) in attr_binds {
                match &b.attrs[var] {
                    Some(existing) if *existing != val => return vec![],
                    _ => b.attrs[var] = Some(val),
                }
            }
            b.matched.push(node.id.clone());

            let orders: Vec<Vec<usize>> = if pop.commutative() && subs.len() == 2 {
                vec![vec![0, 1], vec![1, 0]]
            } else {
                vec![(0..subs.len()).collect()]
            };
            let mut out = Vec::new();
            for order in orders {
                let mut partial = vec![b.clone()];
                for (pat_idx, input_idx) in order.iter().enumerate() {
                    let mut next = Vec::new();
                    for pb in partial {
                        next.extend(enumerate_matches(
                            g,
                            &subs[pat_idx],
                            &node.inputs[*input_idx],
                            pb,
                        ));
                    }
                    partial = next;
                    if partial.is_empty() {
                        break;
                    }
                }
                out.extend(partial);
            }
            out
        }
    }
}

/// Prepare an empty binding sized for a rule's pattern and replacement.
pub fn empty_binding(pattern: &Pat, replacement: &Pat) -> Binding {
    let (slots, attrs) = var_counts(&[pattern, replacement]);
    Binding::sized(slots, attrs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use xgir_core::Graph;

    #[test]
    fn commutative_match_finds_swapped_operands() {
        // one * x matches the pattern Mul(Slot0, Slot1) both ways; the
        // pattern Mul(Abs(S0), S1) requires the Abs on either side.
        let g = Graph::builder()
            .input("x", vec![2])
            .node("a", Op::Abs, &["x"])
            .node("m", Op::Mul, &["x", "a"])
            .outputs(&["m"])
            .build();
        let pat = Pat::Op(
            PatOp::Mul,
            vec![Pat::Op(PatOp::Abs, vec![Pat::Slot(0)]), Pat::Slot(1)],
        );
        let b = empty_binding(&pat, &Pat::Slot(0));
        let matches = enumerate_matches(&g, &pat, "m", b);
        assert_eq!(matches.len(), 1); // only the swapped order fits
        assert_eq!(matches[0].slot(0), "x");
        assert_eq!(matches[0].slot(1), "x");
    }

    #[test]
    fn repeated_slot_must_agree() {
        let g = Graph::builder()
            .input("x", vec![2])
            .input("y", vec![2])
            .node("m1", Op::Mul, &["x", "y"])
            .node("m2", Op::Mul, &["x", "x"])
            .node("add", Op::Add, &["m1", "m2"])
            .outputs(&["add"])
            .build();
        // Add(Mul(S0,S1), Mul(S0,S2)): shared S0 must be x.
        let pat = Pat::Op(
            PatOp::Add,
            vec![
                Pat::Op(PatOp::Mul, vec![Pat::Slot(0), Pat::Slot(1)]),
                Pat::Op(PatOp::Mul, vec![Pat::Slot(0), Pat::Slot(2)]),
            ],
        );
        let b = empty_binding(&pat, &Pat::Slot(0));
        let matches = enumerate_matches(&g, &pat, "add", b);
        assert!(!matches.is_empty());
        for m in &matches {
            assert_eq!(m.slot(0), "x");
        }
    }

    #[test]
    fn attr_vars_unify() {
        let g = Graph::builder()
            .input("x", vec![2, 3])
            .node("e", Op::Exp, &["x"])
            .node("p", Op::ReduceProd { axis: 1 }, &["e"])
            .outputs(&["p"])
            .build();
        let pat = Pat::Op(
            PatOp::ReduceProd { axis_var: 0 },
            vec![Pat::Op(PatOp::Exp, vec![Pat::Slot(0)])],
        );
        let b = empty_binding(&pat, &Pat::Slot(0));
        let matches = enumerate_matches(&g, &pat, "p", b);
        assert_eq!(matches.len(), 1);
        assert_eq!(matches[0].axis(0), 1);
        assert_eq!(matches[0].matched, vec!["p", "e"]);
    }
}
