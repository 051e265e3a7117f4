//! End-to-end command-line checks through the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pnf")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pnf-cli-test-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unknown_subcommand_exits_two_with_usage() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.to_lowercase().contains("usage"), "stderr: {err}");
}

#[test]
fn invalid_flag_value_exits_two() {
    let dir = tempdir("badflag");
    let out = run(&[
        "generate",
        "--size",
        "20",
        "--density",
        "1.5",
        "--samples",
        "1",
        "--seed",
        "1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_outputs_validate_and_reproduce() {
    let dir = tempdir("gen");
    let a = dir.join("a");
    let b = dir.join("b");
    for out_dir in [&a, &b] {
        let out = run(&[
            "generate",
            "--size",
            "20",
            "--density",
            "0.1",
            "--samples",
            "2",
            "--seed",
            "13",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_success(&out, "generate");
    }
    // Identical seeds give byte-identical primary outputs.
    for name in ["instance_0.json", "instance_1.json", "manifest.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
    // Outputs pass schema validation.
    let bytes = std::fs::read(a.join("instance_0.json")).unwrap();
    let inst = pnf_core::ingest::read_canonical(&bytes).unwrap();
    assert_eq!(inst.n_activities(), 20);
    // The manifest records the resolved run configuration.
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 13);
    assert_eq!(manifest["config"]["size"], 20);
}

#[test]
fn ridge_train_then_eval_on_noise_free_data_is_nearly_exact() {
    let dir = tempdir("ridge");
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    // Noise-free generator: estimates equal targets exactly, so the linear
    // baseline can interpolate. Kept to 45 activities total so the 1%/99%
    // winsorization cuts sit at the column extremes (clamping nothing);
    // with more data the clipped tail rows would bias the least-squares fit.
    for k in 0..3u64 {
        let mut cfg = pnf_core::synthgen::GenConfig::new(15, 0.15, 7 + k);
        cfg.noise_t = 0.0;
        cfg.noise_c = 0.0;
        cfg.est_band = (1.0, 1.0);
        let inst = pnf_core::synthgen::generate_project(&cfg).unwrap();
        std::fs::write(
            data.join(format!("i{k}.json")),
            pnf_core::ingest::write_canonical(&inst).unwrap(),
        )
        .unwrap();
    }
    let cfg_path = dir.join("ridge.json");
    std::fs::write(&cfg_path, r#"{"split": {"train": 1.0, "val": 0.0}}"#).unwrap();
    let model_dir = dir.join("model");
    let out = run(&[
        "train",
        "--model",
        "ridge",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "13",
        "--out",
        model_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "train ridge");
    let metrics = dir.join("eval.csv");
    let out = run(&[
        "eval",
        "--checkpoint",
        model_dir.join("checkpoint.json").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        metrics.to_str().unwrap(),
    ]);
    assert_success(&out, "eval");
    let csv = std::fs::read_to_string(&metrics).unwrap();
    let duration_row: Vec<&str> = csv
        .lines()
        .find(|l| l.contains(",duration,"))
        .expect("duration row")
        .split(',')
        .collect();
    let mae: f64 = duration_row[5].parse().unwrap();
    assert!(mae < 1e-3, "noise-free ridge MAE {mae}");
}

#[test]
fn frontier_and_mc_produce_manifested_outputs() {
    let dir = tempdir("fmc");
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    let inst =
        pnf_core::synthgen::generate_project(&pnf_core::synthgen::GenConfig::new(12, 0.2, 3))
            .unwrap();
    let inst_path = data.join("i.json");
    std::fs::write(&inst_path, pnf_core::ingest::write_canonical(&inst).unwrap()).unwrap();

    let frontier_out = dir.join("frontier.json");
    // A loose cap: normal durations already satisfy it.
    let out = run(&[
        "frontier",
        "--data",
        inst_path.to_str().unwrap(),
        "--tmax",
        "100000",
        "--out",
        frontier_out.to_str().unwrap(),
    ]);
    assert_success(&out, "frontier");
    let doc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&frontier_out).unwrap()).unwrap();
    assert!(doc["makespan"].as_f64().unwrap() <= 100000.0);
    assert!(Path::new(&format!("{}.manifest.json", frontier_out.display())).exists());

    let mc_out = dir.join("mc.json");
    let out = run(&[
        "mc",
        "--data",
        inst_path.to_str().unwrap(),
        "--samples",
        "500",
        "--seed",
        "5",
        "--out",
        mc_out.to_str().unwrap(),
    ]);
    assert_success(&out, "mc");
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&mc_out).unwrap()).unwrap();
    assert_eq!(doc["n_samples"], 500);
    assert!(doc["makespan_mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn parse_psplib_respects_activity_filter() {
    let dir = tempdir("psp");
    let sm = dir.join("fixture.sm");
    std::fs::write(
        &sm,
        include_str!("../../core/tests/data/fixture_j30.sm"),
    )
    .unwrap();
    let out_json = dir.join("parsed.json");
    let out = run(&[
        "parse-psplib",
        "--in",
        sm.to_str().unwrap(),
        "--out",
        out_json.to_str().unwrap(),
    ]);
    assert_success(&out, "parse-psplib");
    let inst = pnf_core::ingest::read_canonical(&std::fs::read(&out_json).unwrap()).unwrap();
    assert_eq!(inst.n_activities(), 32);

    // Range filter rejects with exit 2.
    let out = run(&[
        "parse-psplib",
        "--in",
        sm.to_str().unwrap(),
        "--out",
        out_json.to_str().unwrap(),
        "--min-activities",
        "50",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ingest_csv_builds_surrogate_instances() {
    let dir = tempdir("csv");
    let csv = dir.join("projects.csv");
    std::fs::write(&csv, "effort,kloc,rely\n100,12.5,VH\n60,3.0,N\n").unwrap();
    let out_dir = dir.join("instances");
    let out = run(&[
        "ingest-csv",
        "--in",
        csv.to_str().unwrap(),
        "--strategy",
        "chain4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "ingest-csv");
    let inst =
        pnf_core::ingest::read_canonical(&std::fs::read(out_dir.join("row_0.json")).unwrap())
            .unwrap();
    assert_eq!(inst.n_activities(), 4);
    let total: f64 = inst.t_true.as_ref().unwrap().iter().sum();
    assert!((total - 100.0).abs() < 1e-9);
}

#[test]
fn experiment_subcommands_produce_curves() {
    let dir = tempdir("exp");
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    for k in 0..3u64 {
        let inst = pnf_core::synthgen::generate_project(&pnf_core::synthgen::GenConfig::new(
            10, 0.2, 90 + k,
        ))
        .unwrap();
        std::fs::write(
            data.join(format!("i{k}.json")),
            pnf_core::ingest::write_canonical(&inst).unwrap(),
        )
        .unwrap();
    }
    let cfg = dir.join("exp.json");
    std::fs::write(
        &cfg,
        r#"{
            "model": {"layers": 1, "hidden": 8, "dropout": 0.0,
                      "layer_norm": false, "residual": false, "head_hidden": [8]},
            "train": {"max_epochs": 3, "warmup_epochs": 1, "patience": 5,
                      "sampled": false, "loss": {"lambda_proj": 0.0}},
            "active": {"retrain_epochs": 1, "rounds": 2},
            "temporal": {"retrain_epochs": 1},
            "seeds": [13]
        }"#,
    )
    .unwrap();

    let active_out = dir.join("active.csv");
    let out = run(&[
        "active",
        "--strategy",
        "hybrid",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        active_out.to_str().unwrap(),
    ]);
    assert_success(&out, "active");
    let csv = std::fs::read_to_string(&active_out).unwrap();
    assert!(csv.starts_with("strategy,seed,budget_pct,rmse"));
    assert!(csv.lines().count() >= 3, "{csv}");

    let temporal_out = dir.join("temporal.csv");
    let out = run(&[
        "temporal",
        "--variant",
        "adaptive",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        temporal_out.to_str().unwrap(),
    ]);
    assert_success(&out, "temporal");
    let csv = std::fs::read_to_string(&temporal_out).unwrap();
    assert!(csv.starts_with("variant,seed,completion_pct,rmse"));
    assert!(csv.lines().count() >= 3, "{csv}");
}

#[test]
fn tgn_training_roundtrips_through_checkpoint() {
    let dir = tempdir("tgn");
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    for k in 0..3u64 {
        let inst = pnf_core::synthgen::generate_project(&pnf_core::synthgen::GenConfig::new(
            8, 0.25, 60 + k,
        ))
        .unwrap();
        std::fs::write(
            data.join(format!("i{k}.json")),
            pnf_core::ingest::write_canonical(&inst).unwrap(),
        )
        .unwrap();
    }
    let cfg = dir.join("tgn.json");
    std::fs::write(
        &cfg,
        r#"{
            "model": {"layers": 0, "hidden": 8, "dropout": 0.0,
                      "layer_norm": false, "residual": false, "head_hidden": [8],
                      "temporal": {"memory_dim": 6, "time_dim": 4, "time_scale": 1000.0}},
            "train": {"max_epochs": 2, "warmup_epochs": 1, "patience": 5, "sampled": false}
        }"#,
    )
    .unwrap();
    let model_dir = dir.join("model");
    let out = run(&[
        "train",
        "--model",
        "tgn",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        model_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "train tgn");
    let metrics = dir.join("tgn_eval.csv");
    let out = run(&[
        "eval",
        "--checkpoint",
        model_dir.join("checkpoint.json").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        metrics.to_str().unwrap(),
    ]);
    assert_success(&out, "eval tgn");
    let csv = std::fs::read_to_string(&metrics).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("tgn,")), "{csv}");
}
