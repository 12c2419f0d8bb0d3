//! Pipeline and pruning configuration files, plus model-path resolution.
//!
//! Model arguments are either a pair of file paths (XGIR JSON + XGWT blob)
//! or a bundled zoo reference `zoo:<name>[:<seed>]` with `cnn6`,
//! `resnet-small`, or `transformer2`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use xgir_core::graph::Graph;
use xgir_core::tensor::Tensor;
use xgir_core::{io, validate, zoo};

use xgen_prune::BlockPruneMode;

use crate::error::CliError;

/// Resolve a model argument. Zoo references need no weights file.
pub fn load_model_arg(model: &str, weights: Option<&Path>) -> Result<Graph, CliError> {
    if let Some(rest) = model.strip_prefix("zoo:") {
        let (name, seed) = match rest.split_once(':') {
            Some((n, s)) => (
                n,
                s.parse::<u64>()
                    .map_err(|_| CliError::Validation(format!("bad zoo seed `{s}`")))?,
            ),
            None => (rest, 0),
        };
        return zoo::by_name(name, seed).ok_or_else(|| {
            CliError::Validation(format!(
                "unknown zoo model `{name}` (have: {})",
                zoo::ZOO_NAMES.join(", ")
            ))
        });
    }
    let weights = weights.ok_or_else(|| {
        CliError::Validation(format!("model `{model}` needs --weights (or use zoo:<name>)"))
    })?;
    Ok(io::load_model(Path::new(model), weights)?)
}

/// Fully validate a loaded graph, mapping violations to a validation error.
pub fn ensure_valid(g: &Graph) -> Result<(), CliError> {
    let report = validate::validate_graph(g);
    if report.is_ok() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("invalid model:\n{report}")))
    }
}

// ── Pruning configuration ────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "scheme", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerPruneConfig {
    Dense,
    Pattern {
        #[serde(default = "default_entries")]
        entries: usize,
        #[serde(default = "default_library", rename = "K")]
        k: usize,
        /// Connectivity-pruning rate over kernels.
        #[serde(default)]
        rate: f64,
    },
    Block {
        block: [usize; 2],
        #[serde(default = "default_mode")]
        mode: BlockPruneMode,
        rate: f64,
    },
}

fn default_entries() -> usize {
    4
}

fn default_library() -> usize {
    8
}

fn default_mode() -> BlockPruneMode {
    BlockPruneMode::Cols
}

/// Per-layer pruning plan, keyed by prunable node id; unlisted layers use
/// `default` (dense when absent).
#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    #[serde(default)]
    pub layers: BTreeMap<String, LayerPruneConfig>,
    #[serde(default)]
    pub default: Option<LayerPruneConfig>,
}

impl PruneConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("prune config: {e}")))
    }

    pub fn for_layer(&self, node_id: &str) -> LayerPruneConfig {
        self.layers
            .get(node_id)
            .or(self.default.as_ref())
            .cloned()
            .unwrap_or(LayerPruneConfig::Dense)
    }
}

// ── Pipeline configuration ───────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PassName {
    Prepare,
    Prune,
    Rewrite,
    Fusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Dense,
    Fkw,
    Reuse,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum CalibrationSpec {
    /// Seeded synthetic inputs.
    Synthetic { count: usize, seed: u64 },
    /// XGWT blobs holding one tensor per graph input, by input name.
    Paths { paths: Vec<PathBuf> },
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        CalibrationSpec::Synthetic { count: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ReuseSettings {
    #[serde(rename = "L")]
    pub vector_len: usize,
    #[serde(rename = "H", default = "default_hyperplanes")]
    pub hyperplanes: usize,
    #[serde(default = "default_reuse_mode")]
    pub mode: String,
    #[serde(default = "default_reuse_scope")]
    pub scope: String,
}

fn default_hyperplanes() -> usize {
    8
}

fn default_reuse_mode() -> String {
    "exact".into()
}

fn default_reuse_scope() -> String {
    "per-batch".into()
}

impl Default for ReuseSettings {
    fn default() -> Self {
        ReuseSettings {
            vector_len: 4,
            hyperplanes: default_hyperplanes(),
            mode: default_reuse_mode(),
            scope: default_reuse_scope(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: String,
    #[serde(default)]
    pub weights: Option<PathBuf>,
    /// Stages to run; they always execute in prepare, prune, rewrite,
    /// fusion order.
    #[serde(default)]
    pub passes: Vec<PassName>,
    #[serde(default)]
    pub prune: Option<PruneConfig>,
    pub engine: EngineKind,
    #[serde(default = "default_threshold")]
    pub fusion_threshold: u64,
    #[serde(default = "default_tile")]
    pub tile: [usize; 2],
    #[serde(default)]
    pub reuse: ReuseSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub calibration: CalibrationSpec,
    /// Equivalence gate versus the dense reference; absent means record the
    /// error without gating the exit code.
    #[serde(default)]
    pub tolerance: Option<f32>,
    /// Write compiled FKW weights (dtype 100) to this XGWT blob.
    #[serde(default)]
    pub emit_fkw: Option<PathBuf>,
}

fn default_threshold() -> u64 {
    xgen_opt::fusion::DEFAULT_PROFILE_THRESHOLD
}

fn default_tile() -> [usize; 2] {
    [4, 4]
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("pipeline config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut seen = Vec::new();
        for p in &self.passes {
            if seen.contains(p) {
                return Err(CliError::Validation(format!("duplicate pass {p:?}")));
            }
            seen.push(*p);
        }
        if self.passes.contains(&PassName::Prune) && self.prune.is_none() {
            return Err(CliError::Validation(
                "passes include prune but no prune config is given".into(),
            ));
        }
        if self.tile[0] == 0 || self.tile[1] == 0 {
            return Err(CliError::Validation("tile dims must be >= 1".into()));
        }
        if let CalibrationSpec::Synthetic { count, .. } = self.calibration {
            if count == 0 {
                return Err(CliError::Validation("calibration count must be >= 1".into()));
            }
        }
        self.reuse_config()?;
        Ok(())
    }

    pub fn reuse_config(&self) -> Result<xgen_backend::ReuseConfig, CliError> {
        let mode = match self.reuse.mode.as_str() {
            "exact" => xgen_backend::ReuseMode::Exact,
            "lsh" => xgen_backend::ReuseMode::Lsh,
            other => {
                return Err(CliError::Validation(format!(
                    "unknown reuse mode `{other}` (exact|lsh)"
                )))
            }
        };
        let scope = match self.reuse.scope.as_str() {
            "per-input" => xgen_backend::ReuseScope::PerInput,
            "per-batch" => xgen_backend::ReuseScope::PerBatch,
            other => {
                return Err(CliError::Validation(format!(
                    "unknown reuse scope `{other}` (per-input|per-batch)"
                )))
            }
        };
        if self.reuse.vector_len == 0 {
            return Err(CliError::Validation("reuse L must be >= 1".into()));
        }
        Ok(xgen_backend::ReuseConfig {
            vector_len: self.reuse.vector_len,
            hyperplanes: self.reuse.hyperplanes,
            seed: self.seed,
            mode,
            scope,
        })
    }

    /// Materialize calibration inputs.
    pub fn calibration_inputs(
        &self,
        g: &Graph,
    ) -> Result<Vec<BTreeMap<String, Tensor>>, CliError> {
        match &self.calibration {
            CalibrationSpec::Synthetic { count, seed } => {
                Ok(zoo::random_inputs(g, *seed, *count))
            }
            CalibrationSpec::Paths { paths } => paths
                .iter()
                .map(|p| {
                    let blob = std::fs::read(p)?;
                    let entries = io::read_xgwt(&blob)?;
                    let mut feed = BTreeMap::new();
                    for e in entries {
                        feed.insert(e.name.clone(), e.to_tensor()?);
                    }
                    for input in &g.inputs {
                        if !feed.contains_key(&input.name) {
                            return Err(CliError::Validation(format!(
                                "calibration blob {} lacks input `{}`",
                                p.display(),
                                input.name
                            )));
                        }
                    }
                    Ok(feed)
                })
                .collect(),
        }
    }
}
