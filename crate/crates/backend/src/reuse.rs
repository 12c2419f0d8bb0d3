//! Deep reuse: on-the-fly clustering of similar neuron vectors so one
//! representative's dot products serve the whole cluster.
//!
//! An activation matrix `rows x D` is sliced into `D/L` sub-blocks of
//! length-`L` neuron vectors. Within each sub-block vectors are clustered --
//! by byte equality in exact mode, by sign-random-projection (SimHash)
//! signatures in lsh mode -- and only one centroid dot product per (cluster,
//! weight column) is computed. Partial products are summed across sub-blocks
//! ascending, so exact mode is bitwise identical to the blocked matmul
//! [`plain_matmul_blocked`] with the same accumulation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use xgir_core::par;
use xgir_core::tensor::Tensor;

use crate::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReuseMode {
    /// Byte-equality clustering; reuse is lossless.
    Exact,
    /// Sign-random-projection LSH clustering; reuse is approximate.
    Lsh,
}

/// Where clustering happens when a batch dimension exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReuseScope {
    PerInput,
    PerBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReuseConfig {
    /// Neuron-vector length; must divide the shared dimension.
    pub vector_len: usize,
    /// Number of LSH hyperplanes (sign bits); at least 1 in lsh mode.
    pub hyperplanes: usize,
    pub seed: u64,
    pub mode: ReuseMode,
    pub scope: ReuseScope,
}

impl ReuseConfig {
    pub fn exact(vector_len: usize) -> Self {
        ReuseConfig {
            vector_len,
            hyperplanes: 1,
            seed: 0,
            mode: ReuseMode::Exact,
            scope: ReuseScope::PerBatch,
        }
    }

    fn validate(&self, d: usize) -> Result<(), BackendError> {
        if self.vector_len == 0 || d % self.vector_len != 0 {
            return Err(BackendError::BadVectorLen { l: self.vector_len, d });
        }
        if self.mode == ReuseMode::Lsh && self.hyperplanes == 0 {
            return Err(BackendError::NoHyperplanes);
        }
        Ok(())
    }
}

/// Clusters of one sub-block's vectors. Ids are dense from 0 in first-seen
/// order; in exact mode two vectors share a cluster iff byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMap {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f32>>,
    pub counts: Vec<usize>,
}

impl ClusterMap {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ReuseStats {
    pub dot_products_computed: u64,
    pub dot_products_baseline: u64,
}

impl ReuseStats {
    pub fn savings_ratio(&self) -> f64 {
        if self.dot_products_baseline == 0 {
            0.0
        } else {
            1.0 - self.dot_products_computed as f64 / self.dot_products_baseline as f64
        }
    }

    pub fn merge(&mut self, other: &ReuseStats) {
        self.dot_products_computed += other.dot_products_computed;
        self.dot_products_baseline += other.dot_products_baseline;
    }
}

/// Slice a `rows x D` matrix into `D/L` sub-blocks of `rows` length-`L`
/// vectors, order-preserving.
pub fn slice_neuron_vectors(x: &Tensor, l: usize) -> Result<Vec<Vec<Vec<f32>>>, BackendError> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(BackendError::Shape(format!("expected rows x D matrix, got {s:?}")));
    }
    let (rows, d) = (s[0], s[1]);
    if l == 0 || d % l != 0 {
        return Err(BackendError::BadVectorLen { l, d });
    }
    Ok((0..d / l)
        .map(|b| {
            (0..rows)
                .map(|r| x.data()[r * d + b * l..r * d + b * l + l].to_vec())
                .collect()
        })
        .collect())
}

/// Seeded random unit hyperplanes for SimHash signatures.
fn hyperplanes(h: usize, l: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..h)
        .map(|_| {
            // Gaussian via Box-Muller keeps the direction distribution
            // uniform on the sphere.
            let mut v: Vec<f32> = (0..l)
                .map(|_| {
                    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
                    let u2: f32 = rng.gen_range(0.0..1.0);
                    (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
                })
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(f32::MIN_POSITIVE);
            for x in &mut v {
                *x /= norm;
            }
            v
        })
        .collect()
}

fn signature(v: &[f32], planes: &[Vec<f32>]) -> u64 {
    let mut sig = 0u64;
    for (i, p) in planes.iter().enumerate() {
        let dot: f32 = v.iter().zip(p).map(|(a, b)| a * b).sum();
        if dot > 0.0 {
            sig |= 1 << i;
        }
    }
    sig
}

/// Cluster same-length vectors.
///
/// Exact mode groups byte-identical vectors and uses the first member as the
/// centroid (bit-exact reuse). Lsh mode groups by SimHash signature over
/// `hyperplanes` seeded random unit hyperplanes and uses the member mean.
/// Deterministic given the config.
pub fn lsh_cluster(vectors: &[Vec<f32>], config: &ReuseConfig) -> Result<ClusterMap, BackendError> {
    if let Some(first) = vectors.first() {
        if vectors.iter().any(|v| v.len() != first.len()) {
            return Err(BackendError::Shape("vectors must share one length".into()));
        }
        if config.mode == ReuseMode::Lsh && config.hyperplanes == 0 {
            return Err(BackendError::NoHyperplanes);
        }
        if config.hyperplanes > 64 {
            return Err(BackendError::Shape("at most 64 hyperplanes".into()));
        }
    }

    let mut assignments = Vec::with_capacity(vectors.len());
    let mut centroids: Vec<Vec<f32>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();

    match config.mode {
        ReuseMode::Exact => {
            let mut index: std::collections::HashMap<Vec<u32>, usize> =
                std::collections::HashMap::new();
            for v in vectors {
                let key: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
                let next = centroids.len();
                let id = *index.entry(key).or_insert(next);
                if id == centroids.len() {
                    centroids.push(v.clone());
                    counts.push(0);
                }
                counts[id] += 1;
                assignments.push(id);
            }
        }
        ReuseMode::Lsh => {
            let l = vectors.first().map(|v| v.len()).unwrap_or(0);
            let planes = hyperplanes(config.hyperplanes, l, config.seed);
            let mut index: std::collections::HashMap<u64, usize> =
                std::collections::HashMap::new();
            let mut sums: Vec<Vec<f64>> = Vec::new();
            for v in vectors {
                let sig = signature(v, &planes);
                let next = sums.len();
                let id = *index.entry(sig).or_insert(next);
                if id == sums.len() {
                    sums.push(vec![0.0; l]);
                    counts.push(0);
                }
                for (s, x) in sums[id].iter_mut().zip(v) {
                    *s += *x as f64;
                }
                counts[id] += 1;
                assignments.push(id);
            }
            centroids = sums
                .into_iter()
                .zip(&counts)
                .map(|(s, &c)| s.into_iter().map(|x| (x / c as f64) as f32).collect())
                .collect();
        }
    }

    Ok(ClusterMap { assignments, centroids, counts })
}

/// Matmul with per-(cluster, column) dot products computed once per
/// sub-block and inherited by cluster members.
pub fn exec_matmul_reuse(
    x: &Tensor,
    w: &Tensor,
    config: &ReuseConfig,
) -> Result<(Tensor, ReuseStats), BackendError> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(BackendError::Shape(format!("cannot multiply {xs:?} by {ws:?}")));
    }
    let (rows, d, cols) = (xs[0], xs[1], ws[1]);
    config.validate(d)?;
    let l = config.vector_len;
    let blocks = d / l;
    let wd = w.data();

    // Per sub-block: cluster, compute centroid partials, record assignments.
    let per_block: Vec<Result<(Vec<usize>, Vec<f32>, usize), BackendError>> =
        par::map_indexed(blocks, |b| {
            let vectors: Vec<Vec<f32>> = (0..rows)
                .map(|r| x.data()[r * d + b * l..r * d + b * l + l].to_vec())
                .collect();
            let map = lsh_cluster(&vectors, config)?;
            let k = map.num_clusters();
            let mut partials = vec![0.0f32; k * cols];
            for (c, centroid) in map.centroids.iter().enumerate() {
                for j in 0..cols {
                    let mut acc = 0.0f32;
                    for (i, &v) in centroid.iter().enumerate() {
                        acc += v * wd[(b * l + i) * cols + j];
                    }
                    partials[c * cols + j] = acc;
                }
            }
            Ok((map.assignments, partials, k))
        });

    let mut out = vec![0.0f32; rows * cols];
    let mut stats = ReuseStats {
        dot_products_computed: 0,
        dot_products_baseline: (rows * cols * blocks) as u64,
    };
    for block in per_block {
        let (assignments, partials, k) = block?;
        stats.dot_products_computed += (k * cols) as u64;
        for r in 0..rows {
            let c = assignments[r];
            for j in 0..cols {
                out[r * cols + j] += partials[c * cols + j];
            }
        }
    }

    Ok((
        Tensor::from_vec(vec![rows, cols], out).expect("shape valid"),
        stats,
    ))
}

/// The reuse comparator: plain matmul with the same blocked accumulation
/// order (per-block partials summed ascending). Exact-mode reuse is bitwise
/// equal to this.
pub fn plain_matmul_blocked(x: &Tensor, w: &Tensor, l: usize) -> Result<Tensor, BackendError> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(BackendError::Shape(format!("cannot multiply {xs:?} by {ws:?}")));
    }
    let (rows, d, cols) = (xs[0], xs[1], ws[1]);
    if l == 0 || d % l != 0 {
        return Err(BackendError::BadVectorLen { l, d });
    }
    let mut out = vec![0.0f32; rows * cols];
    for b in 0..d / l {
        for r in 0..rows {
            for j in 0..cols {
                let mut acc = 0.0f32;
                for i in 0..l {
                    acc += x.data()[r * d + b * l + i] * w.data()[(b * l + i) * cols + j];
                }
                out[r * cols + j] += acc;
            }
        }
    }
    Ok(Tensor::from_vec(vec![rows, cols], out).expect("shape valid"))
}

/// Elementwise deviation maxima between an exact and an approximate output:
/// `(max_abs, max_rel)`, zero iff identical. Relative error is against the
/// exact element, 0/0 counting as zero.
pub fn reuse_error(exact: &Tensor, approx: &Tensor) -> (f32, f32) {
    if exact.shape() != approx.shape() {
        return (f32::INFINITY, f32::INFINITY);
    }
    let mut max_abs = 0.0f32;
    let mut max_rel = 0.0f32;
    for (e, a) in exact.data().iter().zip(approx.data()) {
        let diff = (a - e).abs();
        max_abs = max_abs.max(diff);
        if diff > 0.0 {
            max_rel = max_rel.max(diff / e.abs());
        }
    }
    (max_abs, max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: usize, cols: usize, f: impl Fn(usize) -> f32) -> Tensor {
        Tensor::from_vec(vec![rows, cols], (0..rows * cols).map(f).collect()).unwrap()
    }

    #[test]
    fn slices_reconstruct_the_matrix() {
        let x = matrix(4, 6, |i| i as f32);
        let blocks = slice_neuron_vectors(&x, 3).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].len(), 4);
        for r in 0..4 {
            let mut row = blocks[0][r].clone();
            row.extend_from_slice(&blocks[1][r]);
            assert_eq!(row, x.data()[r * 6..(r + 1) * 6]);
        }
    }

    #[test]
    fn l_equals_d_is_one_block() {
        let x = matrix(3, 4, |i| i as f32);
        assert_eq!(slice_neuron_vectors(&x, 4).unwrap().len(), 1);
        assert!(slice_neuron_vectors(&x, 3).is_err());
    }

    #[test]
    fn identical_vectors_share_a_cluster_in_both_modes() {
        let vectors = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![3.0, 4.0]];
        for mode in [ReuseMode::Exact, ReuseMode::Lsh] {
            let config = ReuseConfig {
                vector_len: 2,
                hyperplanes: 8,
                seed: 5,
                mode,
                scope: ReuseScope::PerBatch,
            };
            let map = lsh_cluster(&vectors, &config).unwrap();
            assert_eq!(map.assignments[0], map.assignments[1]);
            assert_eq!(map.counts[map.assignments[0]], 2);
        }
    }

    #[test]
    fn opposite_vectors_never_collide() {
        // Every sign bit flips between v and -v (dots are nonzero almost
        // surely), so the signatures differ for any H >= 1.
        let v = vec![0.3f32, -0.7, 0.2, 0.9];
        let neg: Vec<f32> = v.iter().map(|x| -x).collect();
        for h in [1usize, 2, 8] {
            for seed in 0..20u64 {
                let config = ReuseConfig {
                    vector_len: 4,
                    hyperplanes: h,
                    seed,
                    mode: ReuseMode::Lsh,
                    scope: ReuseScope::PerBatch,
                };
                let map = lsh_cluster(&[v.clone(), neg.clone()], &config).unwrap();
                assert_ne!(map.assignments[0], map.assignments[1], "h={h} seed={seed}");
            }
        }
    }

    #[test]
    fn exact_mode_is_bitwise_blocked_matmul() {
        let x = matrix(5, 8, |i| ((i * 37 % 23) as f32 - 11.0) * 0.173);
        let w = matrix(8, 3, |i| ((i * 13 % 7) as f32 - 3.0) * 0.41);
        for l in [1usize, 2, 4, 8] {
            let (got, _) = exec_matmul_reuse(&x, &w, &ReuseConfig::exact(l)).unwrap();
            let want = plain_matmul_blocked(&x, &w, l).unwrap();
            assert!(got.bit_eq(&want), "L={l}");
        }
    }

    #[test]
    fn identical_rows_save_all_but_one() {
        let row: Vec<f32> = vec![0.5, -1.0, 2.0, 0.25];
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&row);
        }
        let x = Tensor::from_vec(vec![4, 4], data).unwrap();
        let w = matrix(4, 3, |i| i as f32 * 0.1);
        let (out, stats) = exec_matmul_reuse(&x, &w, &ReuseConfig::exact(2)).unwrap();
        assert_eq!(stats.dot_products_baseline, 4 * 3 * 2);
        assert_eq!(stats.dot_products_computed, 1 * 3 * 2);
        assert_eq!(stats.savings_ratio(), 1.0 - 0.25);
        let want = plain_matmul_blocked(&x, &w, 2).unwrap();
        assert!(out.bit_eq(&want));
    }

    #[test]
    fn savings_accounting_matches_cluster_counts() {
        let x = matrix(6, 6, |i| ((i * 29 % 11) as f32) * 0.31 - 1.0);
        let w = matrix(6, 4, |i| (i as f32).cos());
        let config = ReuseConfig {
            vector_len: 3,
            hyperplanes: 2,
            seed: 9,
            mode: ReuseMode::Lsh,
            scope: ReuseScope::PerBatch,
        };
        let (_, stats) = exec_matmul_reuse(&x, &w, &config).unwrap();
        let mut expected = 0u64;
        for block in slice_neuron_vectors(&x, 3).unwrap() {
            let map = lsh_cluster(&block, &config).unwrap();
            assert!(map.num_clusters() <= 6.min(1 << 2));
            expected += (map.num_clusters() * 4) as u64;
        }
        assert_eq!(stats.dot_products_computed, expected);
        assert_eq!(stats.dot_products_baseline, 6 * 4 * 2);
        assert!(stats.savings_ratio() >= 0.0 && stats.savings_ratio() < 1.0);
    }

    #[test]
    fn reuse_error_zero_iff_identical() {
        let a = matrix(2, 2, |i| i as f32);
        assert_eq!(reuse_error(&a, &a), (0.0, 0.0));
        let b = matrix(2, 2, |i| i as f32 + 0.5);
        let (abs, rel) = reuse_error(&a, &b);
        assert_eq!(abs, 0.5);
        assert!(rel.is_infinite()); // element 0 is 0 -> 0.5/0
    }

    #[test]
    fn determinism_same_config_same_everything() {
        let x = matrix(8, 12, |i| ((i * 7 % 13) as f32 - 6.0) * 0.2);
        let w = matrix(12, 5, |i| ((i * 3 % 5) as f32) * 0.3);
        let config = ReuseConfig {
            vector_len: 4,
            hyperplanes: 6,
            seed: 1234,
            mode: ReuseMode::Lsh,
            scope: ReuseScope::PerBatch,
        };
        let (a, sa) = exec_matmul_reuse(&x, &w, &config).unwrap();
        let (b, sb) = exec_matmul_reuse(&x, &w, &config).unwrap();
        assert!(a.bit_eq(&b));
        assert_eq!(sa, sb);
    }
}
