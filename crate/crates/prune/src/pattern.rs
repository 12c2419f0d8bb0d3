//! Pattern-based kernel pruning and connectivity pruning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use xgir_core::tensor::Tensor;

use crate::PruneError;

/// A non-zero mask over kernel positions. Bit `ky * kw + kx` set means the
/// position survives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelPattern {
    pub mask: u32,
}

impl KernelPattern {
    pub fn entries(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn contains(&self, position: usize) -> bool {
        self.mask >> position & 1 == 1
    }

    /// Surviving `(ky, kx)` offsets in ascending position order.
    pub fn positions(&self, kw: usize) -> Vec<(usize, usize)> {
        (0..32)
            .filter(|p| self.contains(*p))
            .map(|p| (p / kw, p % kw))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternLibrary {
    /// Distinct patterns, most frequent first (ties by ascending mask).
    pub patterns: Vec<KernelPattern>,
    pub kernel_size: (usize, usize),
    pub entries: usize,
}

impl PatternLibrary {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// Per-kernel state after assignment: a library pattern or removed outright
/// by connectivity pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelSlot {
    Pattern(usize),
    Removed,
}

/// Pattern id (or removal) for every `(filter, channel)` kernel of a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternAssignment {
    pub filters: usize,
    pub channels: usize,
    pub kernel_size: (usize, usize),
    /// Row-major `[filter][channel]`.
    pub slots: Vec<KernelSlot>,
}

impl PatternAssignment {
    pub fn slot(&self, filter: usize, channel: usize) -> KernelSlot {
        self.slots[filter * self.channels + channel]
    }

    pub fn slot_mut(&mut self, filter: usize, channel: usize) -> &mut KernelSlot {
        &mut self.slots[filter * self.channels + channel]
    }

    pub fn surviving_kernels(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| matches!(s, KernelSlot::Pattern(_)))
            .count()
    }

    /// Pattern-id sequence of one filter's surviving kernels, ascending.
    pub fn filter_pattern_sequence(&self, filter: usize) -> Vec<usize> {
        let mut seq: Vec<usize> = (0..self.channels)
            .filter_map(|c| match self.slot(filter, c) {
                KernelSlot::Pattern(p) => Some(p),
                KernelSlot::Removed => None,
            })
            .collect();
        seq.sort_unstable();
        seq
    }
}

fn check_conv_weight(w: &Tensor) -> Result<(usize, usize, usize, usize), PruneError> {
    let s = w.shape();
    if s.len() != 4 {
        return Err(PruneError::NotConvWeight(s.to_vec()));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

fn kernel_data<'a>(w: &'a Tensor, f: usize, c: usize) -> &'a [f32] {
    let (_, cin, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let k = kh * kw;
    &w.data()[(f * cin + c) * k..(f * cin + c) * k + k]
}

/// Mask of the `entries` largest-magnitude positions of one kernel, ties by
/// ascending position.
fn top_magnitude_mask(kernel: &[f32], entries: usize) -> u32 {
    let mut order: Vec<usize> = (0..kernel.len()).collect();
    order.sort_by(|&a, &b| {
        kernel[b]
            .abs()
            .total_cmp(&kernel[a].abs())
            .then(a.cmp(&b))
    });
    order[..entries].iter().fold(0u32, |m, &p| m | 1 << p)
}

/// Derive a pattern library from conv weights: each kernel votes for its
/// top-`entries` magnitude mask; the `k` most frequent masks win (ties by
/// ascending mask value).
pub fn derive_pattern_library(
    weights: &[&Tensor],
    k: usize,
    entries: usize,
) -> Result<PatternLibrary, PruneError> {
    if k == 0 {
        return Err(PruneError::ZeroLibrary);
    }
    let mut kernel_size: Option<(usize, usize)> = None;
    let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
    for w in weights {
        let (cout, cin, kh, kw) = check_conv_weight(w)?;
        if kh * kw > 32 {
            return Err(PruneError::KernelTooLarge((kh, kw)));
        }
        match kernel_size {
            None => kernel_size = Some((kh, kw)),
            Some(ks) if ks != (kh, kw) => {
                return Err(PruneError::MixedKernelSizes(ks, (kh, kw)))
            }
            _ => {}
        }
        if entries > kh * kw {
            return Err(PruneError::TooManyEntries { entries, positions: kh * kw });
        }
        for f in 0..cout {
            for c in 0..cin {
                *votes.entry(top_magnitude_mask(kernel_data(w, f, c), entries)).or_insert(0) += 1;
            }
        }
    }
    let kernel_size = kernel_size.ok_or(PruneError::EmptyLibrary)?;
    let mut ranked: Vec<(u32, usize)> = votes.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(PatternLibrary {
        patterns: ranked
            .into_iter()
            .take(k)
            .map(|(mask, _)| KernelPattern { mask })
            .collect(),
        kernel_size,
        entries,
    })
}

/// Assign each kernel the library pattern that retains the most squared
/// magnitude, ties by lowest pattern id.
pub fn assign_patterns(
    weight: &Tensor,
    lib: &PatternLibrary,
) -> Result<PatternAssignment, PruneError> {
    let (cout, cin, kh, kw) = check_conv_weight(weight)?;
    if lib.is_empty() {
        return Err(PruneError::EmptyLibrary);
    }
    if lib.kernel_size != (kh, kw) {
        return Err(PruneError::KernelSizeMismatch { lib: lib.kernel_size, weight: (kh, kw) });
    }
    let mut slots = Vec::with_capacity(cout * cin);
    for f in 0..cout {
        for c in 0..cin {
            let kernel = kernel_data(weight, f, c);
            let mut best = (0usize, f32::NEG_INFINITY);
            for (pid, pat) in lib.patterns.iter().enumerate() {
                let retained: f32 = kernel
                    .iter()
                    .enumerate()
                    .filter(|(p, _)| pat.contains(*p))
                    .map(|(_, v)| v * v)
                    .sum();
                if retained > best.1 {
                    best = (pid, retained);
                }
            }
            slots.push(KernelSlot::Pattern(best.0));
        }
    }
    Ok(PatternAssignment { filters: cout, channels: cin, kernel_size: (kh, kw), slots })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternPruneOutcome {
    pub pruned: Tensor,
    pub total_slots: usize,
    pub retained_slots: usize,
}

impl PatternPruneOutcome {
    /// Weight reduction factor, total/retained (2.25 for 4-of-9 patterns).
    pub fn reduction(&self) -> f64 {
        self.total_slots as f64 / self.retained_slots as f64
    }
}

/// Zero every position outside each kernel's mask; removed kernels become
/// all-zero.
pub fn apply_pattern_pruning(
    weight: &Tensor,
    lib: &PatternLibrary,
    assignment: &PatternAssignment,
) -> Result<PatternPruneOutcome, PruneError> {
    let (cout, cin, kh, kw) = check_conv_weight(weight)?;
    if assignment.filters != cout || assignment.channels != cin
        || assignment.kernel_size != (kh, kw)
    {
        return Err(PruneError::AssignmentMismatch(
            assignment.filters,
            assignment.channels,
            weight.shape().to_vec(),
        ));
    }
    let mut pruned = weight.clone();
    let k = kh * kw;
    let mut retained = 0usize;
    for f in 0..cout {
        for c in 0..cin {
            let base = (f * cin + c) * k;
            match assignment.slot(f, c) {
                KernelSlot::Removed => {
                    pruned.data_mut()[base..base + k].fill(0.0);
                }
                KernelSlot::Pattern(pid) => {
                    let pat = lib.patterns.get(pid).ok_or(PruneError::EmptyLibrary)?;
                    retained += pat.entries();
                    for p in 0..k {
                        if !pat.contains(p) {
                            pruned.data_mut()[base + p] = 0.0;
                        }
                    }
                }
            }
        }
    }
    Ok(PatternPruneOutcome { pruned, total_slots: cout * cin * k, retained_slots: retained })
}

/// Mark the `floor(rate * kernels)` smallest-L2 kernels removed, skipping
/// any removal that would empty a filter or an input channel. Deterministic:
/// candidates ordered by (L2, filter, channel).
pub fn connectivity_prune(
    weight: &Tensor,
    assignment: &PatternAssignment,
    rate: f64,
) -> Result<PatternAssignment, PruneError> {
    let (cout, cin, kh, kw) = check_conv_weight(weight)?;
    if !(0.0..1.0).contains(&rate) {
        return Err(PruneError::BadRate(rate));
    }
    if assignment.filters != cout || assignment.channels != cin {
        return Err(PruneError::AssignmentMismatch(
            assignment.filters,
            assignment.channels,
            weight.shape().to_vec(),
        ));
    }
    let _ = (kh, kw);
    let target = (rate * (cout * cin) as f64).floor() as usize;
    let mut out = assignment.clone();

    let mut per_filter: Vec<usize> = (0..cout)
        .map(|f| (0..cin).filter(|&c| out.slot(f, c) != KernelSlot::Removed).count())
        .collect();
    let mut per_channel: Vec<usize> = (0..cin)
        .map(|c| (0..cout).filter(|&f| out.slot(f, c) != KernelSlot::Removed).count())
        .collect();

    let mut candidates: Vec<(usize, usize, f32)> = (0..cout)
        .flat_map(|f| (0..cin).map(move |c| (f, c)))
        .filter(|&(f, c)| assignment.slot(f, c) != KernelSlot::Removed)
        .map(|(f, c)| {
            let l2: f32 = kernel_data(weight, f, c).iter().map(|v| v * v).sum();
            (f, c, l2)
        })
        .collect();
    candidates.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut removed = assignment.slots.iter().filter(|s| **s == KernelSlot::Removed).count();
    let mut last_binding: &'static str = "filter";
    for (f, c, _) in candidates {
        if removed >= target {
            break;
        }
        if per_filter[f] <= 1 {
            last_binding = "filter";
            continue;
        }
        if per_channel[c] <= 1 {
            last_binding = "input channel";
            continue;
        }
        *out.slot_mut(f, c) = KernelSlot::Removed;
        per_filter[f] -= 1;
        per_channel[c] -= 1;
        removed += 1;
    }
    if removed < target {
        return Err(PruneError::InfeasibleRate {
            rate,
            target,
            removable: removed,
            constraint: last_binding,
        });
    }
    Ok(out)
}

/// Structural justification check: every position zeroed by pruning is
/// outside its kernel's assigned mask or in a removed kernel.
pub fn pattern_zeros_justified(
    original: &Tensor,
    pruned: &Tensor,
    lib: &PatternLibrary,
    assignment: &PatternAssignment,
) -> bool {
    let (cout, cin, kh, kw) = match check_conv_weight(original) {
        Ok(d) => d,
        Err(_) => return false,
    };
    let k = kh * kw;
    for f in 0..cout {
        for c in 0..cin {
            let base = (f * cin + c) * k;
            for p in 0..k {
                let was = original.data()[base + p];
                let now = pruned.data()[base + p];
                if was != 0.0 && now == 0.0 {
                    match assignment.slot(f, c) {
                        KernelSlot::Removed => {}
                        KernelSlot::Pattern(pid) => {
                            if lib.patterns[pid].contains(p) {
                                return false; // zeroed inside the mask
                            }
                        }
                    }
                } else if now != 0.0 && now != was {
                    return false; // pruning may only zero, never alter
                }
            }
        }
    }
    true
}
