//! Filter kernel reorder: group filters with identical pattern sequences so
//! each group executes uniformly, and order kernels within a filter by
//! pattern id.

use serde::Serialize;

use xgen_prune::PatternAssignment;

/// The reorder outcome: a bijective filter permutation plus the maximal runs
/// of stored filters sharing one pattern-id sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterReorder {
    /// `stored_to_original[s]` is the original index of stored filter `s`.
    pub stored_to_original: Vec<usize>,
    /// Group sizes in stored order; sums to the filter count.
    pub group_sizes: Vec<usize>,
}

impl FilterReorder {
    /// Inverse mapping: stored position of each original filter.
    pub fn original_to_stored(&self) -> Vec<usize> {
        let mut inv = vec![0usize; self.stored_to_original.len()];
        for (s, &o) in self.stored_to_original.iter().enumerate() {
            inv[o] = s;
        }
        inv
    }
}

/// Sort filters lexicographically by their sorted pattern-id sequences
/// (stable: equal keys keep original filter order) and compute the group
/// runs.
pub fn reorder_filters(assignment: &PatternAssignment) -> FilterReorder {
    let keys: Vec<Vec<usize>> = (0..assignment.filters)
        .map(|f| assignment.filter_pattern_sequence(f))
        .collect();
    let mut stored_to_original: Vec<usize> = (0..assignment.filters).collect();
    stored_to_original.sort_by(|&a, &b| keys[a].cmp(&keys[b]));

    let mut group_sizes = Vec::new();
    let mut run = 0usize;
    for (i, &orig) in stored_to_original.iter().enumerate() {
        if i > 0 && keys[orig] != keys[stored_to_original[i - 1]] {
            group_sizes.push(run);
            run = 0;
        }
        run += 1;
    }
    if run > 0 {
        group_sizes.push(run);
    }
    FilterReorder { stored_to_original, group_sizes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use xgen_prune::KernelSlot;

    fn assignment(seqs: &[&[usize]]) -> PatternAssignment {
        let channels = seqs[0].len();
        PatternAssignment {
            filters: seqs.len(),
            channels,
            kernel_size: (3, 3),
            slots: seqs
                .iter()
                .flat_map(|s| s.iter().map(|&p| KernelSlot::Pattern(p)))
                .collect(),
        }
    }

    #[test]
    fn equal_sequences_group_together() {
        // Sequences [1,1,2], [2,2,3], [1,1,2]: filters 0 and 2 become
        // adjacent; group sizes 2 and 1.
        let a = assignment(&[&[1, 1, 2], &[2, 2, 3], &[1, 1, 2]]);
        let r = reorder_filters(&a);
        assert_eq!(r.stored_to_original, vec![0, 2, 1]);
        assert_eq!(r.group_sizes, vec![2, 1]);
    }

    #[test]
    fn identical_filters_are_one_group() {
        let a = assignment(&[&[3, 1], &[1, 3], &[3, 1]]);
        let r = reorder_filters(&a);
        assert_eq!(r.group_sizes, vec![3]); // sorted sequences all equal [1,3]
        assert_eq!(r.stored_to_original, vec![0, 1, 2]); // stable
    }

    #[test]
    fn permutation_is_a_bijection() {
        let a = assignment(&[&[2, 0], &[0, 1], &[1, 1], &[0, 0], &[0, 1]]);
        let r = reorder_filters(&a);
        let mut seen = r.stored_to_original.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        let inv = r.original_to_stored();
        for (s, &o) in r.stored_to_original.iter().enumerate() {
            assert_eq!(inv[o], s);
        }
        assert_eq!(r.group_sizes.iter().sum::<usize>(), 5);
    }

    #[test]
    fn removed_kernels_shorten_the_sequence() {
        let mut a = assignment(&[&[1, 2], &[1, 2]]);
        *a.slot_mut(0, 1) = KernelSlot::Removed;
        let r = reorder_filters(&a);
        // [1] sorts before [1,2].
        assert_eq!(r.stored_to_original, vec![0, 1]);
        assert_eq!(r.group_sizes, vec![1, 1]);
    }
}
