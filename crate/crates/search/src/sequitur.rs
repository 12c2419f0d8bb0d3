//! Sequitur: online grammar inference over a symbol sequence.
//!
//! The algorithm maintains two invariants while appending symbols:
//!
//! * digram uniqueness — no pair of adjacent symbols appears twice in the
//!   grammar (non-overlapping occurrences); a repeat is replaced by a
//!   nonterminal, creating a rule when none exists for that digram;
//! * rule utility — every rule other than the start rule is used at least
//!   twice; a rule whose use count drops to one is inlined and deleted.
//!
//! Rule bodies are doubly-linked symbol lists in one arena; each rule has a
//! guard node carrying the rule's id, so the owner of a body node is always
//! reachable. The digram index stores the arena index of the first node of
//! each recorded occurrence. Appending is amortized constant-time, so whole
//! runs are linear in the input length.

use std::collections::{BTreeMap, HashMap, HashSet};

pub type Terminal = u64;
pub type RuleId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sym {
    T(Terminal),
    N(RuleId),
}

/// A context-free grammar with a single production per nonterminal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    /// Rule 0 is the start rule.
    pub rules: BTreeMap<RuleId, Vec<Sym>>,
}

impl Grammar {
    pub const START: RuleId = 0;

    pub fn start_body(&self) -> &[Sym] {
        &self.rules[&Self::START]
    }

    /// Expand a rule to terminals.
    pub fn expand_rule(&self, id: RuleId) -> Vec<Terminal> {
        let mut out = Vec::new();
        self.expand_into(id, &mut out);
        out
    }

    fn expand_into(&self, id: RuleId, out: &mut Vec<Terminal>) {
        for sym in &self.rules[&id] {
            match sym {
                Sym::T(t) => out.push(*t),
                Sym::N(r) => self.expand_into(*r, out),
            }
        }
    }

    /// The full expansion of the start rule.
    pub fn expand(&self) -> Vec<Terminal> {
        self.expand_rule(Self::START)
    }

    /// Check digram uniqueness (with the overlapping-occurrence exception)
    /// and rule utility. Returns the first violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        // Utility: every nonterminal except start used at least twice.
        let mut uses: BTreeMap<RuleId, usize> = self.rules.keys().map(|&r| (r, 0)).collect();
        for body in self.rules.values() {
            for sym in body {
                if let Sym::N(r) = sym {
                    if !self.rules.contains_key(r) {
                        return Err(format!("rule {r} referenced but not defined"));
                    }
                    *uses.get_mut(r).unwrap() += 1;
                }
            }
        }
        for (&r, &count) in &uses {
            if r == Self::START {
                if count != 0 {
                    return Err("start rule is referenced".into());
                }
            } else if count < 2 {
                return Err(format!("rule {r} used {count} times"));
            }
        }

        // Digram uniqueness: two occurrences of the same digram may only
        // overlap (same rule, adjacent positions, which forces all three
        // symbols equal).
        let mut seen: HashMap<(Sym, Sym), (RuleId, usize)> = HashMap::new();
        for (&r, body) in &self.rules {
            for (i, pair) in body.windows(2).enumerate() {
                let d = (pair[0], pair[1]);
                match seen.get(&d) {
                    None => {
                        seen.insert(d, (r, i));
                    }
                    Some(&(pr, pi)) => {
                        let overlapping = pr == r && i == pi + 1 && pair[0] == pair[1];
                        if !overlapping {
                            return Err(format!(
                                "digram {d:?} appears in rule {pr} at {pi} and rule {r} at {i}"
                            ));
                        }
                        // Keep pointing at the earlier occurrence, matching
                        // the construction's do-nothing-on-overlap behavior.
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Node {
    sym: Sym,
    prev: u32,
    next: u32,
    /// Guard nodes carry their rule id in `sym` and terminate both ends of
    /// a body list.
    guard: bool,
    alive: bool,
}

struct Builder {
    nodes: Vec<Node>,
    /// Guard node per rule; dead rules keep a tombstone.
    guards: Vec<u32>,
    rule_alive: Vec<bool>,
    /// Arena indices of body nodes holding `N(r)`, per rule.
    occurrences: Vec<HashSet<u32>>,
    digrams: HashMap<(Sym, Sym), u32>,
}

impl Builder {
    fn new() -> Self {
        let mut b = Builder {
            nodes: Vec::new(),
            guards: Vec::new(),
            rule_alive: Vec::new(),
            occurrences: Vec::new(),
            digrams: HashMap::new(),
        };
        b.new_rule();
        b
    }

    fn new_rule(&mut self) -> RuleId {
        let id = self.guards.len();
        let g = self.nodes.len() as u32;
        self.nodes.push(Node {
            sym: Sym::N(id),
            prev: g,
            next: g,
            guard: true,
            alive: true,
        });
        self.guards.push(g);
        self.rule_alive.push(true);
        self.occurrences.push(HashSet::new());
        id
    }

    fn node(&self, i: u32) -> &Node {
        &self.nodes[i as usize]
    }

    /// Insert `sym` after node `after`, updating occurrence sets.
    fn insert_after(&mut self, after: u32, sym: Sym) -> u32 {
        let idx = self.nodes.len() as u32;
        let next = self.node(after).next;
        self.nodes.push(Node { sym, prev: after, next, guard: false, alive: true });
        self.nodes[after as usize].next = idx;
        self.nodes[next as usize].prev = idx;
        if let Sym::N(r) = sym {
            self.occurrences[r].insert(idx);
        }
        idx
    }

    /// Unlink a body node.
    fn remove(&mut self, i: u32) {
        let (prev, next) = (self.node(i).prev, self.node(i).next);
        self.nodes[prev as usize].next = next;
        self.nodes[next as usize].prev = prev;
        self.nodes[i as usize].alive = false;
        if let Sym::N(r) = self.node(i).sym {
            self.occurrences[r].remove(&i);
        }
    }

    /// The digram starting at `i`, unless either side is a guard.
    fn digram_at(&self, i: u32) -> Option<(Sym, Sym)> {
        let n = self.node(i);
        if n.guard || !n.alive {
            return None;
        }
        let m = self.node(n.next);
        if m.guard {
            return None;
        }
        Some((n.sym, m.sym))
    }

    /// Drop the index entry for the digram starting at `i` if it points
    /// exactly there.
    fn forget_digram(&mut self, i: u32) {
        if let Some(d) = self.digram_at(i) {
            if self.digrams.get(&d) == Some(&i) {
                self.digrams.remove(&d);
            }
        }
    }

    /// Enforce digram uniqueness for the (possibly new) digram starting at
    /// `i`. May cascade.
    fn check(&mut self, i: u32) {
        if !self.node(i).alive {
            return;
        }
        let Some(d) = self.digram_at(i) else { return };
        match self.digrams.get(&d).copied() {
            None => {
                self.digrams.insert(d, i);
            }
            Some(q) if q == i => {}
            Some(q) => {
                if !self.node(q).alive || self.digram_at(q) != Some(d) {
                    // Stale entry; repoint.
                    self.digrams.insert(d, i);
                    return;
                }
                // Overlapping occurrences (shared middle node): do nothing.
                if self.node(q).next == i || self.node(i).next == q {
                    return;
                }
                self.handle_match(i, q, d);
            }
        }
    }

    /// `q` is the recorded occurrence of digram `d`, `i` a second one.
    fn handle_match(&mut self, i: u32, q: u32, d: (Sym, Sym)) {
        // Is q exactly a whole rule body? Then reuse that rule.
        let q_prev = self.node(q).prev;
        let q_next = self.node(q).next;
        let whole_body = self.node(q_prev).guard && self.node(self.node(q_next).next).guard;
        if whole_body {
            let Sym::N(rule) = self.node(q_prev).sym else { unreachable!("guards carry rule ids") };
            self.substitute(i, rule);
        } else {
            let rule = self.new_rule();
            let guard = self.guards[rule];
            let a = self.insert_after(guard, d.0);
            self.insert_after(a, d.1);
            // Index the body before substituting, so any occurrence of `d`
            // surfaced by the cascades reuses this rule instead of racing
            // the index.
            self.digrams.insert(d, a);
            self.substitute(q, rule);
            // The cascade out of the first substitution may already have
            // rewritten the second occurrence; substitute it only if it
            // still stands.
            if self.node(i).alive && self.digram_at(i) == Some(d) {
                self.substitute(i, rule);
            }
        }
    }

    /// Re-run uniqueness checks at each node that is still a live body
    /// symbol, left to right. Needed after splices: a removed indexed
    /// occurrence can leave a surviving overlapping twin (the `aaa` shape)
    /// unindexed one position away from the edit.
    fn check_around(&mut self, spots: &[u32]) {
        for &s in spots {
            if (s as usize) < self.nodes.len() {
                let node = *self.node(s);
                if node.alive && !node.guard {
                    self.check(s);
                }
            }
        }
    }

    /// Replace the digram starting at `p` with the nonterminal of `rule`,
    /// maintaining the index, utility, and cascading digram checks.
    fn substitute(&mut self, p: u32, rule: RuleId) {
        let second = self.node(p).next;
        let prev = self.node(p).prev;
        let prev_prev = self.node(prev).prev;
        let after = self.node(second).next;

        self.forget_digram(prev);
        self.forget_digram(second);
        self.forget_digram(p);

        let (s1, s2) = (self.node(p).sym, self.node(second).sym);
        self.remove(second);
        self.remove(p);
        let n = self.insert_after(prev, Sym::N(rule));

        // Utility: symbols that lost a use may leave their rule at one use.
        for s in [s1, s2] {
            if let Sym::N(r) = s {
                if self.rule_alive[r] && self.occurrences[r].len() == 1 {
                    self.inline_rule(r);
                }
            }
        }

        self.check_around(&[prev_prev, prev, n, after]);
    }

    /// Inline a rule's body at its single remaining use and delete the rule.
    /// Body nodes are spliced in place, so index entries into the body stay
    /// valid.
    fn inline_rule(&mut self, rule: RuleId) {
        debug_assert_eq!(self.occurrences[rule].len(), 1);
        let u = *self.occurrences[rule].iter().next().unwrap();
        let guard = self.guards[rule];
        let first = self.node(guard).next;
        let last = self.node(guard).prev;

        let prev = self.node(u).prev;
        let prev_prev = self.node(prev).prev;
        let next = self.node(u).next;
        self.forget_digram(prev);
        self.forget_digram(u);
        self.remove(u);
        self.rule_alive[rule] = false;

        if first == guard {
            // Empty body (cannot happen for rules created from digrams, but
            // keep the splice total).
            self.nodes[guard as usize].alive = false;
            self.check_around(&[prev_prev, prev]);
            return;
        }

        self.nodes[prev as usize].next = first;
        self.nodes[first as usize].prev = prev;
        self.nodes[last as usize].next = next;
        self.nodes[next as usize].prev = last;
        self.nodes[guard as usize].alive = false;

        self.check_around(&[prev_prev, prev, last, next]);
    }

    fn append(&mut self, t: Terminal) {
        let start_guard = self.guards[Grammar::START];
        let last = self.node(start_guard).prev;
        let n = self.insert_after(last, Sym::T(t));
        let left = self.node(n).prev;
        if !self.node(left).guard {
            self.check(left);
        }
    }

    fn finish(self) -> Grammar {
        // Renumber alive rules densely in creation order.
        let mut remap: BTreeMap<RuleId, RuleId> = BTreeMap::new();
        for (old, &alive) in self.rule_alive.iter().enumerate() {
            if alive {
                let next = remap.len();
                remap.insert(old, next);
            }
        }
        let mut rules = BTreeMap::new();
        for (old, &guard) in self.guards.iter().enumerate() {
            if !self.rule_alive[old] {
                continue;
            }
            let mut body = Vec::new();
            let mut cur = self.node(guard).next;
            while cur != guard {
                let node = self.node(cur);
                body.push(match node.sym {
                    Sym::T(t) => Sym::T(t),
                    Sym::N(r) => Sym::N(remap[&r]),
                });
                cur = node.next;
            }
            rules.insert(remap[&old], body);
        }
        Grammar { rules }
    }
}

/// Run Sequitur over a non-empty symbol sequence.
pub fn sequitur(input: &[Terminal]) -> Grammar {
    let mut b = Builder::new();
    for &t in input {
        b.append(t);
    }
    b.finish()
}

/// Convenience for tests and symbol tables: run over any hashable items by
/// interning them as terminals, returning the grammar and the terminal
/// table.
pub fn sequitur_interned<T: Clone + Eq + std::hash::Hash>(
    items: &[T],
) -> (Grammar, Vec<T>) {
    let mut table: Vec<T> = Vec::new();
    let mut index: HashMap<&T, u64> = HashMap::new();
    let mut terminals = Vec::with_capacity(items.len());
    for item in items {
        let id = *index.entry(item).or_insert_with(|| {
            table.push(item.clone());
            (table.len() - 1) as u64
        });
        terminals.push(id);
    }
    (sequitur(&terminals), table)
}
