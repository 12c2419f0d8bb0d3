//! Low-level execution backends over pruned models.
//!
//! * [`reorder`] / [`fkw`] / [`plan`] / [`exec`]: pattern-conscious
//!   convolution. Filters are reordered so identical pattern sequences sit
//!   together, weights are stored in the compact Filter-Kernel-Weight (FKW)
//!   format, and execution runs from static per-pattern offset lists with a
//!   load-trace simulator that counts redundant and indirect accesses.
//! * [`formats`]: exact byte accounting for dense, CSR, and FKW encodings.
//! * [`reuse`]: deep reuse — neuron-vector LSH clustering over activation
//!   matrices so one cluster representative's dot products serve every
//!   member.
//! * [`engine`]: graph-level execution hooks wiring the backends into the
//!   reference executor.

pub mod engine;
pub mod exec;
pub mod fkw;
pub mod formats;
pub mod plan;
pub mod reorder;
pub mod reuse;

pub use engine::{FkwEngine, ReuseEngine};
pub use exec::{exec_conv_fkw, trace_loads, LoadStats};
pub use fkw::{build_fkw, FkwWeights, KernelRecord};
pub use formats::{compare_formats, CsrSizes, FkwSizes, FormatComparison};
pub use plan::{plan_execution, ExecPlan};
pub use reorder::{reorder_filters, FilterReorder};
pub use reuse::{
    exec_matmul_reuse, lsh_cluster, plain_matmul_blocked, reuse_error, slice_neuron_vectors,
    ClusterMap, ReuseConfig, ReuseMode, ReuseScope, ReuseStats,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("kernel {0:?} has more than 16 positions; FKW pattern masks are u16")]
    KernelTooLargeForFkw((usize, usize)),
    #[error("assignment/layer mismatch: {0}")]
    Mismatch(String),
    #[error("FKW decode: {0}")]
    Decode(String),
    #[error("vector length {l} does not divide the shared dimension {d}")]
    BadVectorLen { l: usize, d: usize },
    #[error("H must be at least 1 in lsh mode")]
    NoHyperplanes,
    #[error("tile {tile:?} invalid for output {out:?}")]
    BadTile { tile: (usize, usize), out: (usize, usize) },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Exec(#[from] xgir_core::exec::ExecError),
    #[error(transparent)]
    Prune(#[from] xgen_prune::PruneError),
}
