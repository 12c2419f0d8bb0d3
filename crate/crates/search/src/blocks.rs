//! Reusable building blocks across candidate networks, via grammar
//! compression of the concatenated layer-symbol sequences.
//!
//! A block is a nonterminal's expansion. Repeats shared across networks only
//! become rules when the networks are compressed together, so the sequences
//! are joined with unique separator symbols (which can never repeat and
//! therefore never enter a rule) before running the grammar inference.

use std::collections::HashMap;

use crate::sequitur::{sequitur, Grammar, Terminal};

/// A ranked reusable block: its terminal expansion, the number of times it
/// occurs across the original sequences (all start positions), and the
/// score `occurrences * length`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReusableBlock {
    pub expansion: Vec<Terminal>,
    pub occurrences: usize,
    pub score: usize,
}

/// Occurrences of `needle` in `haystack`, counting all start positions.
fn count_occurrences(haystack: &[Terminal], needle: &[Terminal]) -> usize {
    if needle.is_empty() || needle.len() > haystack.len() {
        return 0;
    }
    haystack.windows(needle.len()).filter(|w| *w == needle).count()
}

/// Rank candidate building blocks across grammars.
///
/// Each input grammar is expanded back to its sequence; the sequences are
/// concatenated with unique separators and re-compressed so cross-network
/// repeats surface as rules. Every nonterminal expansion becomes a candidate
/// block scored by brute-force occurrence count (over the original
/// sequences) times expansion length, ranked descending, ties by
/// lexicographic expansion.
pub fn reusable_blocks(grammars: &[Grammar]) -> Vec<ReusableBlock> {
    let sequences: Vec<Vec<Terminal>> = grammars.iter().map(|g| g.expand()).collect();
    if sequences.is_empty() {
        return Vec::new();
    }
    let max_symbol = sequences
        .iter()
        .flat_map(|s| s.iter())
        .copied()
        .max()
        .unwrap_or(0);

    let mut joined = Vec::new();
    for (i, seq) in sequences.iter().enumerate() {
        if i > 0 {
            joined.push(max_symbol + 1 + i as Terminal); // unique separator
        }
        joined.extend_from_slice(seq);
    }
    let combined = sequitur(&joined);

    let mut by_expansion: HashMap<Vec<Terminal>, ReusableBlock> = HashMap::new();
    for &rule in combined.rules.keys() {
        if rule == Grammar::START {
            continue;
        }
        let expansion = combined.expand_rule(rule);
        if expansion.iter().any(|&t| t > max_symbol) {
            continue; // touches a separator; cannot happen, but stay safe
        }
        by_expansion.entry(expansion.clone()).or_insert_with(|| {
            let occurrences = sequences
                .iter()
                .map(|s| count_occurrences(s, &expansion))
                .sum();
            ReusableBlock {
                score: occurrences * expansion.len(),
                expansion,
                occurrences,
            }
        });
    }

    let mut blocks: Vec<ReusableBlock> = by_expansion.into_values().collect();
    blocks.sort_by(|a, b| b.score.cmp(&a.score).then(a.expansion.cmp(&b.expansion)));
    blocks
}

/// Fraction of each candidate sequence covered by cached blocks, under
/// greedy left-to-right tiling trying longer blocks first (ties by
/// lexicographic block).
pub fn composability_coverage(
    candidates: &[Vec<Terminal>],
    cache: &[Vec<Terminal>],
) -> Vec<f64> {
    let mut blocks: Vec<&Vec<Terminal>> = cache.iter().filter(|b| !b.is_empty()).collect();
    blocks.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    candidates
        .iter()
        .map(|seq| {
            if seq.is_empty() {
                return 0.0;
            }
            let mut covered = 0usize;
            let mut pos = 0usize;
            while pos < seq.len() {
                let hit = blocks
                    .iter()
                    .find(|b| pos + b.len() <= seq.len() && seq[pos..pos + b.len()] == ***b);
                match hit {
                    Some(b) => {
                        covered += b.len();
                        pos += b.len();
                    }
                    None => pos += 1,
                }
            }
            covered as f64 / seq.len() as f64
        })
        .collect()
}
