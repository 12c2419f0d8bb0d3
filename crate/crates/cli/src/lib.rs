//! Library surface of the pipeline driver: configuration, staged pipeline,
//! comparison, and the report schema. The `xgen` binary is a thin argument
//! parser over these.

pub mod compare;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use compare::{compare_models, CompareOutcome};
pub use config::{
    load_model_arg, CalibrationSpec, EngineKind, LayerPruneConfig, PassName, PipelineConfig,
    PruneConfig, ReuseSettings,
};
pub use error::CliError;
pub use pipeline::{run_pipeline, PipelineOutcome};
pub use report::{Report, REPORT_VERSION};
