//! End-to-end command-line behavior: exit codes, validation messages, and
//! replay determinism.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lysim"))
}

fn base_config(experiment: &str) -> serde_json::Value {
    serde_json::json!({
        "model": {
            "g": {"family": "linear", "params": [0.3], "role": "growth-g"},
            "sigma2": {"family": "constant", "params": [0.0], "role": "diffusion-sigma2"},
            "p": {"family": "constant", "params": [0.0], "role": "jump-rate-p"},
            "lambda": {"family": "constant", "params": [0.0], "role": "reservoir-rate-lambda"},
            "r": {"family": "constant", "params": [0.0], "role": "lysis-rate-r"},
            "pi": {"family": "point-mass", "params": [1.0], "role": "parasite-jump-pi"},
            "dose-reservoir": {"family": "point-mass", "params": [1.0], "role": "reservoir-dose"},
            "dose-lysis": {"family": "point-mass", "params": [1.0], "role": "lysis-dose"},
            "kappa": {"family": "uniform01", "params": []},
            "b": 1.0,
            "d": 0.5,
            "x0": 1.0
        },
        "numerics": {"dt": 0.02, "horizon": 1.0, "replicates": 200, "master-seed": 11},
        "experiment": experiment,
        "t-list": [1.0]
    })
}

fn write_config(dir: &Path, value: &serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

#[test]
fn run_produces_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &base_config("many-to-one-suite"));
    let out = dir.path().join("out");
    let status = bin().arg("run").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    for name in ["manifest.json", "mean_field.csv", "stats.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = base_config("many-to-one-suite");
    value["mystery"] = serde_json::json!(true);
    let cfg = write_config(dir.path(), &value);
    let output = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn pinned_hypothesis_violation_exits_2_with_clause() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = base_config("coming-down");
    value["model"]["r"] = serde_json::json!({
        "family": "constant", "params": [0.4], "role": "lysis-rate-r"
    });
    let cfg = write_config(dir.path(), &value);
    let output = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("coming-down"), "stderr: {stderr}");
    assert!(stderr.contains("lysis"), "stderr: {stderr}");
}

#[test]
fn invalid_model_exits_2_with_clause() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = base_config("many-to-one-suite");
    value["model"]["b"] = serde_json::json!(0.0);
    let cfg = write_config(dir.path(), &value);
    let output = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn cap_flagged_partial_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = base_config("many-to-one-suite");
    value["numerics"]["max-cells"] = serde_json::json!(2);
    value["numerics"]["replicates"] = serde_json::json!(50);
    value["model"]["d"] = serde_json::json!(0.0);
    value["t-list"] = serde_json::json!([4.0]);
    let cfg = write_config(dir.path(), &value);
    let out = dir.path().join("out");
    let output = bin().arg("run").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["partial"], serde_json::json!(true));
}

#[test]
fn replay_is_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &base_config("many-to-one-suite"));
    let out = dir.path().join("out");
    let status = bin()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--workers")
        .arg("1")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    for workers in ["2", "8"] {
        let replay_out = dir.path().join(format!("replay-{workers}"));
        let output = bin()
            .arg("replay")
            .arg(out.join("manifest.json"))
            .arg("--out")
            .arg(&replay_out)
            .arg("--workers")
            .arg(workers)
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(0));
        let stdout = String::from_utf8_lossy(&output.stdout);
        assert!(stdout.contains("byte-identical"), "stdout: {stdout}");
    }
}

#[test]
fn replay_of_edited_manifest_reports_fresh_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &base_config("many-to-one-suite"));
    let out = dir.path().join("out");
    bin().arg("run").arg(&cfg).arg("--out").arg(&out).status().unwrap();

    let manifest_path = out.join("manifest.json");
    let mut manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    manifest["config"]["numerics"]["master-seed"] = serde_json::json!(999);
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

    let output = bin()
        .arg("replay")
        .arg(&manifest_path)
        .arg("--out")
        .arg(dir.path().join("replay"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("fresh run"), "stdout: {stdout}");
}

#[test]
fn replay_refuses_version_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &base_config("many-to-one-suite"));
    let out = dir.path().join("out");
    bin().arg("run").arg(&cfg).arg("--out").arg(&out).status().unwrap();

    let manifest_path = out.join("manifest.json");
    let mut manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    manifest["version"] = serde_json::json!("0.0.0-other");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

    let output = bin().arg("replay").arg(&manifest_path).output().unwrap();
    assert_ne!(output.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("0.0.0-other"), "stderr: {stderr}");
    assert!(stderr.contains(env!("CARGO_PKG_VERSION")), "stderr: {stderr}");
}

#[test]
fn csv_outputs_have_single_header_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &base_config("many-to-one-suite"));
    let out = dir.path().join("out");
    bin().arg("run").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    for entry in std::fs::read_dir(&out).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.chars().all(|c| c.is_ascii_alphanumeric() || ",_".contains(c)));
        for line in lines {
            assert_eq!(
                line.split(',').count(),
                header.split(',').count(),
                "ragged row in {}",
                path.display()
            );
        }
    }
}
