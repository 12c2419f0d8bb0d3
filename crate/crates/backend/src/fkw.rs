//! The compact Filter-Kernel-Weight (FKW) storage format.
//!
//! Per layer: the pattern table (u16 masks), the filter permutation, one
//! surviving-kernel count per stored filter, kernel records of (u32 channel,
//! u16 pattern id) grouped by stored filter and ordered by pattern id, and
//! the weight payload with exactly `entries` values per kernel in ascending
//! mask-position order. One pattern id per kernel replaces CSR's per-nonzero
//! column indices, which is where the index-overhead saving comes from.
//!
//! The byte-level layout (see [`FkwWeights::to_bytes`]) is versioned by the
//! `FKW1` header and is what lands in XGWT blobs under dtype code 100.

use serde::Serialize;

use xgen_prune::{KernelSlot, PatternAssignment, PatternLibrary};
use xgir_core::tensor::Tensor;

use crate::reorder::FilterReorder;
use crate::BackendError;

pub const FKW_MAGIC: &[u8; 4] = b"FKW1";
pub const FKW_VERSION: u16 = 1;

/// One surviving kernel: its input channel and pattern table index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KernelRecord {
    pub channel: u32,
    pub pattern: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkwWeights {
    pub cout: usize,
    pub cin: usize,
    pub kernel: (usize, usize),
    pub entries: usize,
    /// Pattern table: u16 masks, bit `ky*kw + kx`.
    pub patterns: Vec<u16>,
    /// Original filter index per stored position.
    pub stored_to_original: Vec<u16>,
    /// Surviving kernels per stored filter.
    pub per_filter_counts: Vec<u16>,
    /// Records grouped by stored filter, non-decreasing pattern id within
    /// each filter.
    pub records: Vec<KernelRecord>,
    /// `entries` values per record, ascending mask-position order.
    pub weights: Vec<f32>,
}

impl FkwWeights {
    pub fn total_kernels(&self) -> usize {
        self.records.len()
    }

    /// Offsets `(dy, dx)` of a pattern's surviving positions, ascending.
    pub fn pattern_offsets(&self, pattern: u16) -> Vec<(usize, usize)> {
        let kw = self.kernel.1;
        let mask = self.patterns[pattern as usize];
        (0..16)
            .filter(|p| mask >> p & 1 == 1)
            .map(|p| (p / kw, p % kw))
            .collect()
    }

    /// Reconstruct the pruned dense weight tensor, bit-exact.
    pub fn decode(&self) -> Result<Tensor, BackendError> {
        let (kh, kw) = self.kernel;
        let mut out = Tensor::zeros(vec![self.cout, self.cin, kh, kw])
            .map_err(|e| BackendError::Decode(e.to_string()))?;
        let mut rec = 0usize;
        for (stored, &count) in self.per_filter_counts.iter().enumerate() {
            let orig = self.stored_to_original[stored] as usize;
            for _ in 0..count {
                let r = self.records[rec];
                let base = (orig * self.cin + r.channel as usize) * kh * kw;
                let mask = self.patterns[r.pattern as usize];
                let mut e = 0usize;
                for p in 0..kh * kw {
                    if mask >> p & 1 == 1 {
                        out.data_mut()[base + p] = self.weights[rec * self.entries + e];
                        e += 1;
                    }
                }
                if e != self.entries {
                    return Err(BackendError::Decode(format!(
                        "pattern {} has {e} entries, expected {}",
                        r.pattern, self.entries
                    )));
                }
                rec += 1;
            }
        }
        if rec != self.records.len() {
            return Err(BackendError::Decode("per-filter counts disagree with records".into()));
        }
        Ok(out)
    }

    /// Versioned byte serialization (little-endian), the XGWT dtype-100
    /// payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FKW_MAGIC);
        out.extend_from_slice(&FKW_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries as u16).to_le_bytes());
        out.extend_from_slice(&(self.cout as u32).to_le_bytes());
        out.extend_from_slice(&(self.cin as u32).to_le_bytes());
        out.extend_from_slice(&(self.kernel.0 as u16).to_le_bytes());
        out.extend_from_slice(&(self.kernel.1 as u16).to_le_bytes());
        out.extend_from_slice(&(self.patterns.len() as u16).to_le_bytes());
        for &m in &self.patterns {
            out.extend_from_slice(&m.to_le_bytes());
        }
        for &p in &self.stored_to_original {
            out.extend_from_slice(&p.to_le_bytes());
        }
        for &c in &self.per_filter_counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.channel.to_le_bytes());
            out.extend_from_slice(&r.pattern.to_le_bytes());
        }
        for &w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BackendError> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], BackendError> {
            if *pos + n > bytes.len() {
                return Err(BackendError::Decode("truncated FKW payload".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let u16_at = |pos: &mut usize| -> Result<u16, BackendError> {
            Ok(u16::from_le_bytes(take(pos, 2)?.try_into().unwrap()))
        };
        let u32_at = |pos: &mut usize| -> Result<u32, BackendError> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };

        if take(&mut pos, 4)? != FKW_MAGIC {
            return Err(BackendError::Decode("bad FKW magic".into()));
        }
        let version = u16_at(&mut pos)?;
        if version != FKW_VERSION {
            return Err(BackendError::Decode(format!("unsupported FKW version {version}")));
        }
        let entries = u16_at(&mut pos)? as usize;
        let cout = u32_at(&mut pos)? as usize;
        let cin = u32_at(&mut pos)? as usize;
        let kh = u16_at(&mut pos)? as usize;
        let kw = u16_at(&mut pos)? as usize;
        let pattern_count = u16_at(&mut pos)? as usize;
        let mut patterns = Vec::with_capacity(pattern_count);
        for _ in 0..pattern_count {
            patterns.push(u16_at(&mut pos)?);
        }
        let mut stored_to_original = Vec::with_capacity(cout);
        for _ in 0..cout {
            stored_to_original.push(u16_at(&mut pos)?);
        }
        let mut per_filter_counts = Vec::with_capacity(cout);
        for _ in 0..cout {
            per_filter_counts.push(u16_at(&mut pos)?);
        }
        let total = u32_at(&mut pos)? as usize;
        let mut records = Vec::with_capacity(total);
        for _ in 0..total {
            let channel = u32_at(&mut pos)?;
            let pattern = u16_at(&mut pos)?;
            records.push(KernelRecord { channel, pattern });
        }
        let mut weights = Vec::with_capacity(total * entries);
        for _ in 0..total * entries {
            let b = take(&mut pos, 4)?;
            weights.push(f32::from_le_bytes(b.try_into().unwrap()));
        }
        if pos != bytes.len() {
            return Err(BackendError::Decode("trailing bytes in FKW payload".into()));
        }
        Ok(FkwWeights {
            cout,
            cin,
            kernel: (kh, kw),
            entries,
            patterns,
            stored_to_original,
            per_filter_counts,
            records,
            weights,
        })
    }
}

/// Encode a pattern-pruned layer. `pruned` must be the output of pattern
/// pruning under exactly this library and assignment (zeros outside masks).
pub fn build_fkw(
    pruned: &Tensor,
    lib: &PatternLibrary,
    assignment: &PatternAssignment,
    reorder: &FilterReorder,
) -> Result<FkwWeights, BackendError> {
    let s = pruned.shape();
    if s.len() != 4 {
        return Err(BackendError::Mismatch(format!("expected 4-D weight, got {s:?}")));
    }
    let (cout, cin, kh, kw) = (s[0], s[1], s[2], s[3]);
    if kh * kw > 16 {
        return Err(BackendError::KernelTooLargeForFkw((kh, kw)));
    }
    if assignment.filters != cout || assignment.channels != cin {
        return Err(BackendError::Mismatch(format!(
            "assignment is {}x{}, layer is {cout}x{cin}",
            assignment.filters, assignment.channels
        )));
    }
    if reorder.stored_to_original.len() != cout {
        return Err(BackendError::Mismatch("permutation length != filter count".into()));
    }
    if cout > u16::MAX as usize || lib.len() > u16::MAX as usize {
        return Err(BackendError::Mismatch("layer too large for u16 indices".into()));
    }

    let patterns: Vec<u16> = lib.patterns.iter().map(|p| p.mask as u16).collect();
    let mut per_filter_counts = Vec::with_capacity(cout);
    let mut records = Vec::new();
    let mut weights = Vec::new();
    for &orig in &reorder.stored_to_original {
        let mut kernels: Vec<(usize, usize)> = (0..cin)
            .filter_map(|c| match assignment.slot(orig, c) {
                KernelSlot::Pattern(p) => Some((p, c)),
                KernelSlot::Removed => None,
            })
            .collect();
        kernels.sort_unstable(); // by pattern id, then channel
        per_filter_counts.push(kernels.len() as u16);
        for (p, c) in kernels {
            records.push(KernelRecord { channel: c as u32, pattern: p as u16 });
            let base = (orig * cin + c) * kh * kw;
            let mask = lib.patterns[p].mask;
            for pos in 0..kh * kw {
                if mask >> pos & 1 == 1 {
                    weights.push(pruned.data()[base + pos]);
                }
            }
        }
    }

    let fkw = FkwWeights {
        cout,
        cin,
        kernel: (kh, kw),
        entries: lib.entries,
        patterns,
        stored_to_original: reorder.stored_to_original.iter().map(|&o| o as u16).collect(),
        per_filter_counts,
        records,
        weights,
    };
    if fkw.weights.len() != fkw.entries * fkw.records.len() {
        return Err(BackendError::Mismatch(
            "library entry count disagrees with assigned patterns".into(),
        ));
    }
    Ok(fkw)
}
