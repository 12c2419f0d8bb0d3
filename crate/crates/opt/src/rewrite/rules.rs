//! The builtin rule set, one representative per property category, each
//! verified semantically equal to its pattern by randomized testing at
//! registration (100 guard-respecting bindings per rule).

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xgir_core::exec::execute_reference;
use xgir_core::graph::{Graph, GraphInput, OperatorNode};
use xgir_core::max_rel_error;
use xgir_core::tensor::Tensor;

use super::pattern::{var_counts, AttrVal, Binding, Pat, PatOp};
use super::{Guard, Property, RewriteError, RewriteRule};

fn s(i: usize) -> Pat {
    Pat::Slot(i)
}

fn p(op: PatOp, subs: Vec<Pat>) -> Pat {
    Pat::Op(op, subs)
}

fn rules_unchecked() -> Vec<RewriteRule> {
    use PatOp::*;
    vec![
        // Mul(A,B) + Mul(A,C)  =>  Mul(A, Add(B,C))
        RewriteRule {
            name: "distributive_factor",
            property: Property::Distributive,
            pattern: p(Add, vec![p(Mul, vec![s(0), s(1)]), p(Mul, vec![s(0), s(2)])]),
            replacement: p(Mul, vec![s(0), p(Add, vec![s(1), s(2)])]),
            guard: Guard::None,
        },
        // Mul(Mul(Abs(A), B), Abs(C))  =>  Mul(Abs(Mul(A,C)), B)
        RewriteRule {
            name: "abs_product_assoc",
            property: Property::Associative,
            pattern: p(
                Mul,
                vec![
                    p(Mul, vec![p(Abs, vec![s(0)]), s(1)]),
                    p(Abs, vec![s(2)]),
                ],
            ),
            replacement: p(
                Mul,
                vec![p(Abs, vec![p(Mul, vec![s(0), s(2)])]), s(1)],
            ),
            guard: Guard::None,
        },
        // ReduceProd(Exp(A), ax)  =>  Exp(ReduceSum(A, ax))
        RewriteRule {
            name: "exp_reduce_swap",
            property: Property::Commutative,
            pattern: p(ReduceProd { axis_var: 0 }, vec![p(Exp, vec![s(0)])]),
            replacement: p(Exp, vec![p(ReduceSum { axis_var: 0 }, vec![s(0)])]),
            guard: Guard::None,
        },
        // Square(Sqrt(A))  =>  A, for A statically non-negative
        RewriteRule {
            name: "square_of_sqrt",
            property: Property::Identity,
            pattern: p(Square, vec![p(Sqrt, vec![s(0)])]),
            replacement: s(0),
            guard: Guard::SlotNonNegative(0),
        },
        // Recip(Recip(A))  =>  A (1-ulp round-trip on finite nonzero values)
        RewriteRule {
            name: "recip_of_recip",
            property: Property::Identity,
            pattern: p(Recip, vec![p(Recip, vec![s(0)])]),
            replacement: s(0),
            guard: Guard::None,
        },
        // Mul(A, 1)  =>  A
        RewriteRule {
            name: "mul_by_one",
            property: Property::Identity,
            pattern: p(Mul, vec![s(0), s(1)]),
            replacement: s(0),
            guard: Guard::SlotConstOne(1),
        },
        // Add(A, 0)  =>  A
        RewriteRule {
            name: "add_zero",
            property: Property::Identity,
            pattern: p(Add, vec![s(0), s(1)]),
            replacement: s(0),
            guard: Guard::SlotConstZero(1),
        },
        // Transpose(Transpose(X, p), q)  =>  X when p . q = id
        RewriteRule {
            name: "transpose_pair",
            property: Property::Identity,
            pattern: p(
                Transpose { perm_var: 1 },
                vec![p(Transpose { perm_var: 0 }, vec![s(0)])],
            ),
            replacement: s(0),
            guard: Guard::PermsInverse(0, 1),
        },
    ]
}

/// The registered rule set. On first call every rule is self-tested on 100
/// random guard-respecting bindings; a failure aborts registration and names
/// the failing rule and binding.
pub fn builtin_rules() -> Result<&'static [RewriteRule], RewriteError> {
    type Failure = (&'static str, u64, String);
    static CACHE: OnceLock<Result<Vec<RewriteRule>, Failure>> = OnceLock::new();
    let cached = CACHE.get_or_init(|| {
        let rules = rules_unchecked();
        for rule in &rules {
            if let Err((seed, detail)) = self_test(rule, 100) {
                return Err((rule.name, seed, detail));
            }
        }
        Ok(rules)
    });
    match cached {
        Ok(rules) => Ok(rules),
        Err((rule, binding_seed, detail)) => Err(RewriteError::SelfTest {
            rule,
            binding_seed: *binding_seed,
            detail: detail.clone(),
        }),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum AttrKind {
    Axis,
    Perm,
}

fn attr_kinds(pat: &Pat, kinds: &mut Vec<Option<AttrKind>>) {
    if let Pat::Op(op, subs) = pat {
        match op {
            PatOp::ReduceSum { axis_var } | PatOp::ReduceProd { axis_var } => {
                kinds[*axis_var] = Some(AttrKind::Axis);
            }
            PatOp::Transpose { perm_var } => {
                kinds[*perm_var] = Some(AttrKind::Perm);
            }
            _ => {}
        }
        for s in subs {
            attr_kinds(s, kinds);
        }
    }
}

fn instantiate(pat: &Pat, b: &Binding, g: &mut Graph, prefix: &str, counter: &mut usize) -> String {
    match pat {
        Pat::Slot(i) => b.slot(*i).clone(),
        Pat::Op(op, subs) => {
            let inputs: Vec<String> = subs
                .iter()
                .map(|sp| instantiate(sp, b, g, prefix, counter))
                .collect();
            *counter += 1;
            let id = format!("{prefix}{counter}");
            g.nodes.push(OperatorNode::new(id.clone(), op.to_op(b), inputs));
            id
        }
    }
}

/// Randomized semantic-equality check of one rule: build the pattern and the
/// replacement over shared slot inputs, execute both on guard-respecting
/// random data, and compare within 1e-5 relative error.
fn self_test(rule: &RewriteRule, trials: u64) -> Result<(), (u64, String)> {
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.gen_range(1..=4usize);
        let n = rng.gen_range(1..=4usize);
        let shape = vec![m, n];
        let elems = m * n;

        let (n_slots, n_attrs) = var_counts(&[&rule.pattern, &rule.replacement]);
        let mut kinds = vec![None; n_attrs];
        attr_kinds(&rule.pattern, &mut kinds);
        attr_kinds(&rule.replacement, &mut kinds);

        let mut binding = Binding::default();
        binding.slots = (0..n_slots).map(|i| Some(format!("slot{i}"))).collect();
        binding.attrs = kinds
            .iter()
            .map(|k| match k {
                Some(AttrKind::Axis) => Some(AttrVal::Axis(rng.gen_range(0..2usize))),
                Some(AttrKind::Perm) => Some(AttrVal::Perm(if rng.gen_bool(0.5) {
                    vec![0, 1]
                } else {
                    vec![1, 0]
                })),
                None => None,
            })
            .collect();
        if let Guard::PermsInverse(pv, qv) = &rule.guard {
            // Both rank-2 permutations are self-inverse.
            binding.attrs[*qv] = binding.attrs[*pv].clone();
        }

        let mut g = Graph::default();
        let mut feed = BTreeMap::new();
        for i in 0..n_slots {
            let name = format!("slot{i}");
            let data: Vec<f32> = match &rule.guard {
                Guard::SlotNonNegative(gi) if *gi == i => {
                    (0..elems).map(|_| rng.gen_range(0.0f32..=2.0)).collect()
                }
                Guard::SlotConstOne(gi) if *gi == i => vec![1.0; elems],
                Guard::SlotConstZero(gi) if *gi == i => vec![0.0; elems],
                _ => (0..elems).map(|_| rng.gen_range(-2.0f32..=2.0)).collect(),
            };
            let t = Tensor::from_vec(shape.clone(), data).expect("valid");
            match &rule.guard {
                Guard::SlotConstOne(gi) | Guard::SlotConstZero(gi) if *gi == i => {
                    g.weights.insert(name, t);
                }
                _ => {
                    g.inputs.push(GraphInput { name: name.clone(), shape: shape.clone() });
                    feed.insert(name, t);
                }
            }
        }
        let mut counter = 0usize;
        let lhs = instantiate(&rule.pattern, &binding, &mut g, "lhs", &mut counter);
        let rhs = instantiate(&rule.replacement, &binding, &mut g, "rhs", &mut counter);
        g.outputs = vec![lhs.clone(), rhs.clone()];

        let values = execute_reference(&g, &feed)
            .map_err(|e| (seed, format!("execution failed: {e}")))?;
        let err = max_rel_error(&values[&rhs], &values[&lhs]);
        if !(err < 1e-5) {
            return Err((seed, format!("sides differ by rel error {err}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_rules_register() {
        let rules = builtin_rules().unwrap();
        assert_eq!(rules.len(), 8);
        let names: Vec<&str> = rules.iter().map(|r| r.name).collect();
        assert!(names.contains(&"distributive_factor"));
        assert!(names.contains(&"transpose_pair"));
    }

    #[test]
    fn broken_rule_fails_self_test() {
        // Claiming Add(A,B) == Mul(A,B) must be caught.
        let bogus = RewriteRule {
            name: "bogus",
            property: Property::Identity,
            pattern: p(PatOp::Add, vec![s(0), s(1)]),
            replacement: p(PatOp::Mul, vec![s(0), s(1)]),
            guard: Guard::None,
        };
        assert!(self_test(&bogus, 100).is_err());
    }
}
