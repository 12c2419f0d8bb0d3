//! CLI error taxonomy with the stable exit-code contract:
//! 0 success, 2 validation error, 3 tolerance exceeded, 4 infeasible
//! search, 5 I/O failure.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("tolerance exceeded: max relative error {got:e} > {tolerance:e}")]
    ToleranceExceeded { got: f32, tolerance: f32 },
    #[error("search found no feasible candidate: best cost {best_cost} over budget {budget}")]
    InfeasibleSearch { best_cost: f64, budget: f64 },
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::ToleranceExceeded { .. } => 3,
            CliError::InfeasibleSearch { .. } => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<xgir_core::io::IoError> for CliError {
    fn from(e: xgir_core::io::IoError) -> Self {
        match e {
            xgir_core::io::IoError::Io(inner) => CliError::Io(inner.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

macro_rules! validation_from {
    ($($ty:ty),+ $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Validation(e.to_string())
            }
        })+
    };
}

validation_from!(
    xgir_core::graph::GraphError,
    xgir_core::exec::ExecError,
    xgir_core::tensor::TensorError,
    xgen_opt::rewrite::RewriteError,
    xgen_opt::fusion::FusionError,
    xgen_prune::PruneError,
    xgen_backend::BackendError,
    serde_json::Error,
);

impl From<xgen_search::SearchError> for CliError {
    fn from(e: xgen_search::SearchError) -> Self {
        CliError::Validation(e.to_string())
    }
}
