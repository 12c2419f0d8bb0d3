//! Compiler-aware co-search over per-layer pruning schemes and rates, with
//! code generation and cost assessment in the evaluation loop, plus
//! grammar-based composability for identifying reusable building blocks
//! across candidate networks.

pub mod blocks;
pub mod cost;
pub mod evaluate;
pub mod evolve;
pub mod prepare;
pub mod sequitur;
pub mod space;
pub mod symbols;

pub use blocks::{composability_coverage, reusable_blocks, ReusableBlock};
pub use cost::effective_flops;
pub use evaluate::{compile_candidate, evaluate_candidate, CompiledCandidate};
pub use evolve::{search, SearchOutcome, TraceRecord, DEFAULT_EVALS};
pub use prepare::{builtin_substitutions, prepare_model, Substitution};
pub use sequitur::{sequitur, sequitur_interned, Grammar, Sym, Terminal};
pub use space::{prunable_layers, Candidate, Gene, LayerDomain, PrunableLayer, Scheme, SearchSpace};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Graph(#[from] xgir_core::graph::GraphError),
    #[error(transparent)]
    Exec(#[from] xgir_core::exec::ExecError),
    #[error(transparent)]
    Prune(#[from] xgen_prune::PruneError),
    #[error(transparent)]
    Backend(#[from] xgen_backend::BackendError),
    #[error(transparent)]
    Rewrite(#[from] xgen_opt::rewrite::RewriteError),
    #[error(transparent)]
    Fusion(#[from] xgen_opt::fusion::FusionError),
    #[error("infeasible gene for layer `{layer}`: {detail}")]
    InfeasibleGene { layer: String, detail: String },
    #[error("search space mismatch: {0}")]
    SpaceMismatch(String),
    #[error("substitution `{name}` failed its registration self-test: {detail}")]
    SubstitutionSelfTest { name: &'static str, detail: String },
    #[error("evaluation budget {evals} is below the population size {population}")]
    BudgetTooSmall { evals: usize, population: usize },
}
