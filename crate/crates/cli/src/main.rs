//! `xgen`: drive the optimization pipeline over XGIR models and emit
//! machine-readable reports.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xgen_backend::engine::PatternLayer;
use xgen_cli::{compare, config, error, pipeline, report};
use xgen_opt::fusion::{apply_fusion, plan_fusion_with};
use xgen_opt::rewrite::{apply_rewrites, builtin_rules};
use xgir_core::flops::count_flops;
use xgir_core::io::save_model;

use config::{load_model_arg, EngineKind, PipelineConfig, PruneConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "xgen", version, about = "DNN inference optimizer: pruning, graph rewriting, fusion, sparse execution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// XGIR JSON path or zoo:<name>[:<seed>].
    #[arg(long)]
    model: String,
    /// XGWT weights blob (unused for zoo models).
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// High-level graph optimization: rewriting and fusion.
    Optimize {
        #[command(flatten)]
        model: ModelArgs,
        /// List the registered rewrite rules and exit.
        #[arg(long)]
        list_rules: bool,
        /// Byte threshold for Profile-verdict fusion edges.
        #[arg(long, default_value_t = xgen_opt::fusion::DEFAULT_PROFILE_THRESHOLD)]
        fusion_threshold: u64,
        /// Write the optimized model here (graph JSON).
        #[arg(long)]
        out_model: Option<PathBuf>,
        /// Write the optimized model's weights here (XGWT).
        #[arg(long)]
        out_weights: Option<PathBuf>,
        /// Write the optimization log (JSON) here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Apply a pruning configuration and write the pruned model.
    Prune {
        #[command(flatten)]
        model: ModelArgs,
        /// Per-layer pruning config JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        out_weights: PathBuf,
        /// Calibration inputs for the distortion proxy.
        #[arg(long, default_value_t = 3)]
        calibration: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the full pipeline from a config file.
    Run {
        /// Pipeline config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Write the report JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Engine override: dense, fkw, or reuse.
        #[arg(long)]
        engine: Option<String>,
        /// Reuse neuron-vector length override.
        #[arg(long = "reuse-L")]
        reuse_l: Option<usize>,
        /// Reuse hyperplane-count override.
        #[arg(long = "reuse-H")]
        reuse_h: Option<usize>,
        /// Reuse mode override: exact or lsh.
        #[arg(long = "reuse-mode")]
        reuse_mode: Option<String>,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Fusion Profile-threshold override.
        #[arg(long)]
        fusion_threshold: Option<u64>,
    },
    /// Compare two models on seeded random inputs.
    Compare {
        #[arg(long)]
        model_a: String,
        #[arg(long)]
        weights_a: Option<PathBuf>,
        #[arg(long)]
        model_b: String,
        #[arg(long)]
        weights_b: Option<PathBuf>,
        /// Number of random inputs.
        #[arg(short = 'n', long, default_value_t = 10)]
        inputs: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evolutionary co-search over per-layer pruning schemes.
    Search {
        #[command(flatten)]
        model: ModelArgs,
        /// Search-space JSON; omitted means the default space with the
        /// given budget factor.
        #[arg(long)]
        space: Option<PathBuf>,
        /// Budget as a fraction of the dense cost (used without --space).
        #[arg(long, default_value_t = 0.5)]
        budget_factor: f64,
        #[arg(long, default_value_t = xgen_search::DEFAULT_EVALS)]
        evals: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Calibration input count.
        #[arg(long, default_value_t = 2)]
        calibration: usize,
        /// Write the evaluation trace (JSON lines) here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Summarize a report JSON on standard output.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn write_or_print(path: &Option<PathBuf>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, contents).map_err(CliError::from),
        None => Ok(()),
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Optimize {
            model,
            list_rules,
            fusion_threshold,
            out_model,
            out_weights,
            report,
        } => {
            if list_rules {
                for rule in builtin_rules()? {
                    println!("{:<22} {:?}", rule.name, rule.property);
                }
                return Ok(());
            }
            let g = load_model_arg(&model.model, model.weights.as_deref())?;
            config::ensure_valid(&g)?;
            let rules = builtin_rules()?;
            let (rewritten, log) = apply_rewrites(&g, rules, 3 * g.nodes.len() + 16)?;
            let plan = plan_fusion_with(&rewritten, fusion_threshold)?;
            let fused = apply_fusion(&rewritten, &plan)?;
            println!(
                "rewrite: {} step(s), FLOPs {} -> {}",
                log.steps.len(),
                log.flops_before,
                log.flops_after
            );
            println!(
                "fusion: {} -> {} layers ({} multi-node groups)",
                rewritten.nodes.len(),
                fused.nodes.len(),
                plan.groups.iter().filter(|gr| gr.nodes.len() > 1).count()
            );
            if let (Some(gm), Some(gw)) = (&out_model, &out_weights) {
                save_model(&fused, gm, gw)?;
            }
            let payload = serde_json::json!({
                "rewrite": log,
                "fusion": plan,
                "flops_after": count_flops(&fused)?.total,
            });
            write_or_print(&report, &serde_json::to_string_pretty(&payload)?)
        }
        Command::Prune {
            model,
            config: config_path,
            out_model,
            out_weights,
            calibration,
            seed,
            report,
        } => {
            let g = load_model_arg(&model.model, model.weights.as_deref())?;
            config::ensure_valid(&g)?;
            let plan = PruneConfig::load(&config_path)?;
            let cal = xgir_core::zoo::random_inputs(&g, seed, calibration);
            let (pruned, _pattern, summary) = apply_prune_config(&g, &plan, &cal)?;
            save_model(&pruned, &out_model, &out_weights)?;
            println!(
                "pruned: rate {:.3}x, removed-L2 {:.4}, distortion {:.6}",
                summary.rate, summary.removed_l2_fraction, summary.distortion
            );
            write_or_print(&report, &serde_json::to_string_pretty(&summary)?)
        }
        Command::Run {
            config: config_path,
            report,
            engine,
            reuse_l,
            reuse_h,
            reuse_mode,
            seed,
            fusion_threshold,
        } => {
            let mut cfg = PipelineConfig::load(&config_path)?;
            if let Some(kind) = engine {
                cfg.engine = match kind.as_str() {
                    "dense" => EngineKind::Dense,
                    "fkw" => EngineKind::Fkw,
                    "reuse" => EngineKind::Reuse,
                    other => {
                        return Err(CliError::Validation(format!(
                            "unknown engine `{other}` (dense|fkw|reuse)"
                        )))
                    }
                };
            }
            if let Some(l) = reuse_l {
                cfg.reuse.vector_len = l;
            }
            if let Some(h) = reuse_h {
                cfg.reuse.hyperplanes = h;
            }
            if let Some(m) = reuse_mode {
                cfg.reuse.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = fusion_threshold {
                cfg.fusion_threshold = t;
            }
            let outcome = pipeline::run_pipeline(&cfg)?;
            print!("{}", outcome.report.summary());
            write_or_print(&report, &outcome.report.to_json())?;
            match outcome.gate_violation {
                Some((got, tolerance)) => Err(CliError::ToleranceExceeded { got, tolerance }),
                None => Ok(()),
            }
        }
        Command::Compare {
            model_a,
            weights_a,
            model_b,
            weights_b,
            inputs,
            tol,
            seed,
        } => {
            let a = load_model_arg(&model_a, weights_a.as_deref())?;
            let b = load_model_arg(&model_b, weights_b.as_deref())?;
            config::ensure_valid(&a)?;
            config::ensure_valid(&b)?;
            let outcome = compare::compare_models(&a, &b, inputs, tol, seed)?;
            println!(
                "max rel error {:e} (worst at output `{}`, input #{})",
                outcome.max_rel_error, outcome.worst_output, outcome.worst_input_index
            );
            if outcome.passed {
                println!("PASS at tolerance {tol:e}");
                Ok(())
            } else {
                Err(CliError::ToleranceExceeded {
                    got: outcome.max_rel_error,
                    tolerance: tol,
                })
            }
        }
        Command::Search {
            model,
            space,
            budget_factor,
            evals,
            seed,
            calibration,
            trace,
            report,
        } => {
            let g = load_model_arg(&model.model, model.weights.as_deref())?;
            config::ensure_valid(&g)?;
            let space = match space {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)?;
                    serde_json::from_str(&text)
                        .map_err(|e| CliError::Validation(format!("search space: {e}")))?
                }
                None => {
                    let unconstrained =
                        xgen_search::SearchSpace::default_for_model(&g, f64::INFINITY)?;
                    let dense = xgen_search::Candidate::all_dense(&unconstrained);
                    let dense_cost =
                        xgen_search::compile_candidate(&unconstrained, &g, &dense)?.cost;
                    xgen_search::SearchSpace::default_for_model(&g, dense_cost * budget_factor)?
                }
            };
            let cal = xgir_core::zoo::random_inputs(&g, seed, calibration);
            let outcome = xgen_search::search(&space, &g, &cal, evals, seed)?;
            println!(
                "best: cost {:.1} (budget {:.1}), distortion {:.6}, {} evaluations, feasible: {}",
                outcome.cost, space.budget, outcome.distortion, outcome.evaluations, outcome.feasible
            );
            if let Some(path) = &trace {
                let mut lines = String::new();
                for rec in &outcome.trace {
                    lines.push_str(&serde_json::to_string(rec)?);
                    lines.push('\n');
                }
                std::fs::write(path, lines)?;
            }
            write_or_print(&report, &serde_json::to_string_pretty(&outcome)?)?;
            if outcome.feasible {
                Ok(())
            } else {
                Err(CliError::InfeasibleSearch {
                    best_cost: outcome.cost,
                    budget: space.budget,
                })
            }
        }
        Command::Report { input } => {
            let text = std::fs::read_to_string(&input)?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("report: {e}")))?;
            let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
            if version != u64::from(report::REPORT_VERSION) {
                return Err(CliError::Validation(format!(
                    "unsupported report version {version}"
                )));
            }
            println!("{}", summarize_report_value(&value));
            Ok(())
        }
    }
}

/// Prune a model per config; shared between `prune` and the pipeline.
fn apply_prune_config(
    g: &xgir_core::Graph,
    plan: &PruneConfig,
    calibration: &[BTreeMap<String, xgir_core::Tensor>],
) -> Result<(xgir_core::Graph, BTreeMap<String, PatternLayer>, xgen_prune::PruningReport), CliError>
{
    use config::LayerPruneConfig;
    use xgen_prune::*;

    let mut pruned = g.clone();
    let mut pattern_layers = BTreeMap::new();
    for layer in xgen_search::prunable_layers(g)? {
        let layer_config = plan.for_layer(&layer.node_id);
        let weight = g.weights[&layer.weight_id].clone();
        let new_weight = match &layer_config {
            LayerPruneConfig::Dense => weight,
            LayerPruneConfig::Pattern { entries, k, rate } => {
                let library = derive_pattern_library(&[&weight], *k, *entries)?;
                let mut assignment = assign_patterns(&weight, &library)?;
                if *rate > 0.0 {
                    assignment = connectivity_prune(&weight, &assignment, *rate)?;
                }
                let outcome = apply_pattern_pruning(&weight, &library, &assignment)?;
                pattern_layers
                    .insert(layer.weight_id.clone(), PatternLayer { library, assignment });
                outcome.pruned
            }
            LayerPruneConfig::Block { block, mode, rate } => {
                if layer.is_conv {
                    let view = conv_to_gemm(&weight)?;
                    let bsm = block_prune(&view, (block[0], block[1]), *rate, *mode)?;
                    gemm_to_conv(
                        &bsm.values,
                        layer.weight_shape[1],
                        (layer.weight_shape[2], layer.weight_shape[3]),
                    )?
                } else {
                    block_prune(&weight, (block[0], block[1]), *rate, *mode)?.values
                }
            }
        };
        pruned.weights.insert(layer.weight_id.clone(), new_weight);
    }
    let summary = pruning_report(g, &pruned, calibration)?;
    Ok((pruned, pattern_layers, summary))
}

fn summarize_report_value(value: &serde_json::Value) -> String {
    let mut out = String::new();
    use std::fmt::Write;
    if let Some(model) = value.get("model") {
        let _ = writeln!(
            out,
            "model {}: {} nodes, dense FLOPs {}",
            model.get("source").and_then(|v| v.as_str()).unwrap_or("?"),
            model.get("nodes").and_then(|v| v.as_u64()).unwrap_or(0),
            model.get("flops_dense").and_then(|v| v.as_u64()).unwrap_or(0),
        );
    }
    if let Some(eq) = value.get("equivalence") {
        let _ = writeln!(
            out,
            "equivalence: max rel error {} (passed: {})",
            eq.get("max_rel_error").map(ToString::to_string).unwrap_or_default(),
            eq.get("passed").and_then(|v| v.as_bool()).unwrap_or(false),
        );
    }
    if let Some(engine) = value.get("engine").and_then(|e| e.get("kind")) {
        let _ = writeln!(out, "engine: {engine}");
    }
    out
}
