//! CLI behavior: exit codes, comparison semantics, pipeline edge cases.

use std::process::Command;

use xgen_cli::{
    compare_models, load_model_arg, run_pipeline, CalibrationSpec, EngineKind, PassName,
    PipelineConfig, PruneConfig, ReuseSettings,
};
use xgen_opt::rewrite::{apply_rewrites, builtin_rules};
use xgir_core::zoo;

fn base_config(model: &str) -> PipelineConfig {
    PipelineConfig {
        model: model.into(),
        weights: None,
        passes: vec![],
        prune: None,
        engine: EngineKind::Dense,
        fusion_threshold: xgen_opt::fusion::DEFAULT_PROFILE_THRESHOLD,
        tile: [4, 4],
        reuse: ReuseSettings::default(),
        seed: 0,
        calibration: CalibrationSpec::Synthetic { count: 2, seed: 0 },
        tolerance: Some(1e-5),
        emit_fkw: None,
    }
}

#[test]
fn empty_pass_list_dense_engine_is_identity() {
    let outcome = run_pipeline(&base_config("zoo:cnn6:1")).unwrap();
    assert_eq!(outcome.report.equivalence.max_rel_error, 0.0);
    assert!(outcome.gate_violation.is_none());
    assert!(outcome.report.stages.rewrite.is_none());
    assert_eq!(
        outcome.report.equivalence.flops_before,
        outcome.report.equivalence.flops_after
    );
}

#[test]
fn model_vs_itself_compares_exactly() {
    let g = load_model_arg("zoo:resnet-small:3", None).unwrap();
    let outcome = compare_models(&g, &g, 5, 1e-5, 1).unwrap();
    assert_eq!(outcome.max_rel_error, 0.0);
    assert!(outcome.passed);
}

#[test]
fn model_vs_rewritten_passes_at_1e5() {
    // Random models exercise the rewrite rules; the transformer does not
    // contain any motif, so use generated graphs.
    let g = zoo::random_model(12);
    let rules = builtin_rules().unwrap();
    let (rewritten, log) = apply_rewrites(&g, rules, 1000).unwrap();
    assert!(!log.steps.is_empty(), "seed 12 should rewrite something");
    let outcome = compare_models(&g, &rewritten, 10, 1e-5, 2).unwrap();
    assert!(outcome.passed, "max rel error {}", outcome.max_rel_error);
}

#[test]
fn pruned_model_fails_tight_tolerance() {
    let config_json = serde_json::json!({
        "layers": {
            "conv2": {"scheme": "block", "block": [12, 108], "mode": "cols", "rate": 0.8333333333333334}
        }
    });
    let plan: PruneConfig = serde_json::from_value(config_json).unwrap();
    let mut cfg = base_config("zoo:cnn6:1");
    cfg.passes = vec![PassName::Prune];
    cfg.prune = Some(plan);
    cfg.tolerance = Some(1e-6);
    let outcome = run_pipeline(&cfg).unwrap();
    let (got, tol) = outcome.gate_violation.expect("6x pruning must distort outputs");
    assert!(got > tol);
    // Only conv2 was pruned; the model-wide rate reflects that one layer.
    let prune = outcome.report.stages.prune.unwrap();
    assert!(prune.rate > 1.1, "rate {}", prune.rate);
    assert_eq!(prune.per_layer["conv2"].reduction, 6.0);
}

#[test]
fn exit_codes_follow_the_contract() {
    let bin = env!("CARGO_BIN_EXE_xgen");
    // 0: success.
    let ok = Command::new(bin)
        .args(["compare", "--model-a", "zoo:cnn6:1", "--model-b", "zoo:cnn6:1", "-n", "2"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    // 3: tolerance exceeded.
    let tol = Command::new(bin)
        .args([
            "compare", "--model-a", "zoo:cnn6:1", "--model-b", "zoo:cnn6:2", "-n", "2", "--tol",
            "1e-6",
        ])
        .output()
        .unwrap();
    assert_eq!(tol.status.code(), Some(3));
    // 2: validation error (unknown zoo model).
    let bad = Command::new(bin)
        .args(["compare", "--model-a", "zoo:nope", "--model-b", "zoo:cnn6:1"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    // 5: i/o failure (missing config file).
    let io = Command::new(bin)
        .args(["run", "--config", "/nonexistent/xgen-config.json"])
        .output()
        .unwrap();
    assert_eq!(io.status.code(), Some(5));
    // 4: infeasible search (budget nobody can meet).
    let dir = tempfile::tempdir().unwrap();
    let space_path = dir.path().join("space.json");
    let g = load_model_arg("zoo:cnn6:1", None).unwrap();
    let mut space = xgen_search::SearchSpace::default_for_model(&g, 1.0).unwrap();
    space.budget = 1.0; // one cost unit: unreachable
    std::fs::write(&space_path, serde_json::to_string(&space).unwrap()).unwrap();
    let infeasible = Command::new(bin)
        .args(["search", "--model", "zoo:cnn6:1", "--evals", "16", "--space"])
        .arg(&space_path)
        .output()
        .unwrap();
    assert_eq!(infeasible.status.code(), Some(4), "{:?}", infeasible);
}

#[test]
fn list_rules_names_the_builtin_set() {
    let out = Command::new(env!("CARGO_BIN_EXE_xgen"))
        .args(["optimize", "--model", "zoo:cnn6:1", "--list-rules"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for rule in [
        "distributive_factor",
        "abs_product_assoc",
        "exp_reduce_swap",
        "square_of_sqrt",
        "recip_of_recip",
        "mul_by_one",
        "add_zero",
        "transpose_pair",
    ] {
        assert!(text.contains(rule), "missing {rule} in:\n{text}");
    }
}

#[test]
fn fkw_emission_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let fkw_path = dir.path().join("weights.fkw.xgwt");
    let mut cfg = base_config("zoo:cnn6:1");
    cfg.passes = vec![PassName::Prune];
    cfg.prune = Some(
        serde_json::from_value(serde_json::json!({
            "layers": {"conv2": {"scheme": "pattern", "entries": 4, "K": 8}}
        }))
        .unwrap(),
    );
    cfg.engine = EngineKind::Fkw;
    cfg.tolerance = None;
    cfg.emit_fkw = Some(fkw_path.clone());
    run_pipeline(&cfg).unwrap();

    let blob = std::fs::read(&fkw_path).unwrap();
    let entries = xgir_core::io::read_xgwt(&blob).unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].dtype, xgir_core::io::DTYPE_TAGGED_FKW);
    let fkw = xgen_backend::FkwWeights::from_bytes(&entries[0].bytes).unwrap();
    assert_eq!(fkw.entries, 4);
    assert_eq!((fkw.cout, fkw.cin), (12, 12));
    fkw.decode().unwrap();
}

#[test]
fn reuse_engine_exact_mode_stays_within_tolerance() {
    let mut cfg = base_config("zoo:transformer2:1");
    cfg.engine = EngineKind::Reuse;
    cfg.reuse = ReuseSettings {
        vector_len: 4,
        hyperplanes: 8,
        mode: "exact".into(),
        scope: "per-batch".into(),
    };
    cfg.tolerance = Some(1e-5);
    let outcome = run_pipeline(&cfg).unwrap();
    assert!(outcome.gate_violation.is_none());
    match outcome.report.engine {
        xgen_cli::report::EngineReport::Reuse { total, .. } => {
            assert!(total.dot_products_computed <= total.dot_products_baseline);
        }
        other => panic!("wrong engine report: {other:?}"),
    }
}
