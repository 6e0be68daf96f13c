//! Binary-level contract: exit codes, artifact layout, seed propagation,
//! and the echoed-config round trip. Every test drives the real executable
//! on a throwaway cohort small enough to train in seconds.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn base_config(root: &Path) -> Value {
    json!({
        "dataset": {
            "path": root.join("cohort"),
            "phantom": {
                "patients": 8,
                "both_fraction": 1.0,
                "spec": {
                    "height": 40,
                    "width": 72,
                    "bands": 3,
                    "separation": 1.0,
                    "region_size": 32,
                    "specular_spots": 0,
                    "seed": 5
                }
            }
        },
        "preprocess": { "patch": { "size": 16, "source_size": 20, "stride": 8 } },
        "model": {
            "variant": "densenet2d",
            "bands": 3,
            "patch_size": 16,
            "initial_channels": 2,
            "growth_rate": 2,
            "layers_per_block": [1, 1, 1],
            "seed": 3
        },
        "train": { "iterations": 4, "batch": 6, "seed": 2 },
        "cv": { "folds": 2, "seed": 9 },
        "output": root.join("out")
    })
}

fn write_config(dir: &Path, config: &Value) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn run(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hsinet"));
    cmd.args(args);
    if let Some(path) = config {
        cmd.arg("--config").arg(path);
    }
    cmd.output().expect("launch hsinet")
}

fn assert_code(output: &Output, expected: i32) {
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert_eq!(
        output.status.code(),
        Some(expected),
        "unexpected exit code; stderr:\n{stderr}"
    );
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn full_flow_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &base_config(dir.path()));
    let out = dir.path().join("out");

    assert_code(&run(&["generate"], Some(&config)), 0);
    assert!(dir.path().join("cohort/manifest.jsonl").is_file());

    assert_code(&run(&["preprocess"], Some(&config)), 0);
    let index: Value =
        serde_json::from_slice(&std::fs::read(out.join("cache/index.json")).unwrap()).unwrap();
    let entries = index.as_array().expect("index is an array");
    assert!(!entries.is_empty());
    for entry in entries {
        for key in ["eval_file", "train_file"] {
            let rel = entry[key].as_str().expect("cache path");
            assert!(out.join("cache").join(rel).is_file(), "missing {rel}");
        }
    }

    assert_code(&run(&["train", "--fold", "0"], Some(&config)), 0);
    let checkpoint = out.join("checkpoint-fold0.hsim");
    assert!(checkpoint.is_file());
    assert!(out.join("trace-fold0.json").is_file());

    let eval = run(
        &["evaluate", "--fold", "0", "--checkpoint", checkpoint.to_str().unwrap()],
        Some(&config),
    );
    assert_code(&eval, 0);
    let report: Value =
        serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["folds"].as_array().map(Vec::len), Some(1));

    assert_code(&run(&["cv"], Some(&config)), 0);
    for artifact in ["report.json", "report.csv", "roc.csv", "effective-config.json", "run.log"] {
        assert!(out.join(artifact).is_file(), "missing {artifact}");
    }
    let report: Value =
        serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["folds"].as_array().map(Vec::len), Some(2));
    assert_eq!(report["patients"].as_u64(), Some(8));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &base_config(dir.path()));
    let out = dir.path().join("out");

    assert_code(&run(&["generate"], Some(&config)), 0);
    assert_code(&run(&["cv"], Some(&config)), 0);
    let first = std::fs::read(out.join("report.json")).unwrap();

    // The echoed config is a complete, loadable description of the run.
    let echoed = out.join("effective-config.json");
    assert_code(&run(&["cv"], Some(&echoed)), 0);
    let second = std::fs::read(out.join("report.json")).unwrap();
    assert_eq!(first, second, "report.json changed under the echoed config");
}

#[test]
fn seed_flag_reseeds_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &base_config(dir.path()));

    assert_code(&run(&["generate", "--seed", "1234"], Some(&config)), 0);
    let echoed: Value = serde_json::from_slice(
        &std::fs::read(dir.path().join("out/effective-config.json")).unwrap(),
    )
    .unwrap();
    for seed in [
        &echoed["dataset"]["phantom"]["spec"]["seed"],
        &echoed["model"]["seed"],
        &echoed["train"]["seed"],
        &echoed["cv"]["seed"],
    ] {
        assert_eq!(seed.as_u64(), Some(1234));
    }
}

#[test]
fn oversized_fold_count_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config(dir.path());
    config["cv"]["folds"] = json!(9);
    let config = write_config(dir.path(), &config);

    assert_code(&run(&["generate"], Some(&config)), 0);
    let output = run(&["cv"], Some(&config));
    assert_code(&output, 1);
    assert!(
        stderr_of(&output).contains("cv.folds"),
        "error does not name cv.folds: {}",
        stderr_of(&output)
    );
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config(dir.path());
    config["outpt"] = json!("typo");
    let config = write_config(dir.path(), &config);

    let output = run(&["cv"], Some(&config));
    assert_code(&output, 1);
    assert!(stderr_of(&output).contains("outpt"));
}

#[test]
fn missing_manifest_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &base_config(dir.path()));

    // No generate step: the cohort directory does not exist yet.
    assert_code(&run(&["cv"], Some(&config)), 2);
}

#[test]
fn mismatched_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &base_config(dir.path()));
    assert_code(&run(&["generate"], Some(&config)), 0);
    assert_code(&run(&["train", "--fold", "0"], Some(&config)), 0);
    let checkpoint = dir.path().join("out/checkpoint-fold0.hsim");

    let mut widened = base_config(dir.path());
    widened["model"]["growth_rate"] = json!(3);
    let widened = write_config(&dir.path().join("out"), &widened);
    let output = run(
        &["evaluate", "--fold", "0", "--checkpoint", checkpoint.to_str().unwrap()],
        Some(&widened),
    );
    assert_code(&output, 2);
}

#[test]
fn fold_flag_out_of_range_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &base_config(dir.path()));
    assert_code(&run(&["generate"], Some(&config)), 0);

    let output = run(&["train", "--fold", "5"], Some(&config));
    assert_code(&output, 1);
    assert!(stderr_of(&output).contains("--fold 5"));
}

#[test]
fn help_and_bad_usage_exit_codes() {
    assert_code(&run(&["--help"], None), 0);
    assert_code(&run(&["frobnicate"], None), 1);
}
