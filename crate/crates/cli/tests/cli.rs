use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_safemap");

const SMALL: &str = r#"
seed = 3
budget = 25
start = [0.0, 0.0]
grid_points_per_axis = 30
snapshot_every = 5
require_mean_evidence = true

[mode]
kind = "planned"

[field]
preset = "sim2d"
noise_std = 0.01
f_bar = 0.7

[kernel]
alpha = 1.0
length_scale = 0.15

[schedule]
delta = 0.05
"#;

fn safemap(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn plan_with_zero_budget_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("budget = 25", "budget = 0"));
    let out = dir.path().join("plan");
    let o = safemap(&["plan", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("plan.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "header only");
    let geo: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("geometry.json")).unwrap()).unwrap();
    assert_eq!(geo["m"], 900);
}

#[test]
fn budget_beyond_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("budget = 25", "budget = 901"));
    let o = safemap(&[
        "plan",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("alpha = 1.0", "alpha = \"one\""));
    let o = safemap(&[
        "run",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kernel.alpha"), "{}", stderr(&o));

    let o = safemap(&[
        "run",
        "--config",
        "/nonexistent/exp.toml",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = safemap(&[
        "run",
        "--config",
        "preset:nope",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_output_directory_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = safemap(&["plan", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn run_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let run_dir = out.to_str().unwrap();
    let o = safemap(&["run", "--config", &cfg, "--out", run_dir, "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in [
        "manifest.json",
        "config.toml",
        "measurements.csv",
        "steps.jsonl",
        "snapshots.jsonl",
        "regions.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let steps = fs::read_to_string(out.join("steps.jsonl")).unwrap();
    assert_eq!(steps.lines().count(), 25);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);

    let o = safemap(&["analyze", run_dir]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let info: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("analysis/info.json")).unwrap()).unwrap();
    let (g, s, d) = (
        info["gamma_g"].as_f64().unwrap(),
        info["gamma_s"].as_f64().unwrap(),
        info["delta_gamma"].as_f64().unwrap(),
    );
    assert!((g - s - d).abs() < 1e-9);
    assert!(out.join("analysis/convergence.json").is_file());
    assert!(out.join("analysis/rmse.csv").is_file());
}

#[test]
fn repeated_runs_give_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut manifests = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = safemap(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        manifests.push(fs::read(out.join("manifest.json")).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn tampered_or_missing_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let run_dir = out.to_str().unwrap();
    assert_eq!(
        safemap(&["run", "--config", &cfg, "--out", run_dir])
            .status
            .code(),
        Some(0)
    );

    let meas = out.join("measurements.csv");
    let mut bytes = fs::read(&meas).unwrap();
    bytes.push(b'\n');
    fs::write(&meas, bytes).unwrap();
    assert_eq!(safemap(&["analyze", run_dir]).status.code(), Some(2));

    fs::write(out.join("manifest.json"), b"{ not json").unwrap();
    assert_eq!(safemap(&["analyze", run_dir]).status.code(), Some(2));

    fs::remove_file(out.join("manifest.json")).unwrap();
    assert_eq!(safemap(&["analyze", run_dir]).status.code(), Some(2));
}

#[test]
fn planner_failure_aborts_with_exit_three() {
    // A one-iteration planner cannot reach the first plan point.
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.to_string() + "\n[rrt]\nmax_iterations = 1\n";
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("run");
    let o = safemap(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(out.join("abort.json").is_file());
    assert!(out.join("manifest.json").is_file());
}
