use std::path::Path;

use mra_lab::cli::{run, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK};
use mra_lab::config::ExperimentConfig;
use mra_lab::fisher::CheckSuite;
use mra_lab::mle::MLEResult;
use mra_lab::Dataset;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn invoke(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["mra-lab"];
    full.extend_from_slice(args);
    let code = run(full, &mut out, &mut err);
    Outcome { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const DIAG: &str = r#"{
  "group": {"kind": "diag_signs", "d": 2},
  "theta_star": [1.5, 0.0],
  "seed": 9,
  "sample": {"n": 400},
  "estimate": {"restarts": 4, "max_iter": 200, "rel_tol": 1e-10, "polish": true},
  "fisher": {"n_mc": 20000},
  "rates": {"n_grid": [50, 100, 200, 400], "trials": 50}
}"#;

#[test]
fn sample_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", DIAG);
    let data = dir.path().join("data.csv");
    let o = invoke(&["sample", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stderr.contains("seed: 9"));
    let ds = Dataset::read_path(&data).unwrap();
    assert_eq!((ds.len(), ds.dim()), (400, 2));

    let o = invoke(&["estimate", "--config", &cfg, "--data", data.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let res: MLEResult = serde_json::from_str(&o.stdout).unwrap();
    assert!((res.theta_hat[0].abs() - 1.5).abs() < 0.3);

    // binary output path and seed override
    let bin = dir.path().join("data.bin");
    let o = invoke(&["sample", "--config", &cfg, "--seed", "10", "--out", bin.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_OK);
    assert!(o.stderr.contains("seed: 10"));
    assert_ne!(Dataset::read_path(&bin).unwrap(), ds);
}

#[test]
fn outputs_are_byte_identical_on_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", DIAG);
    let a = invoke(&["sample", "--config", &cfg]);
    let b = invoke(&["sample", "--config", &cfg]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout.lines().count(), 400);
    let a = invoke(&["fisher", "--config", &cfg, "--workers", "1"]);
    let b = invoke(&["fisher", "--config", &cfg, "--workers", "3"]);
    assert_eq!(a.code, EXIT_OK, "{}", a.stderr);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn fisher_and_verify_geometry_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", DIAG);
    let o = invoke(&["fisher", "--config", &cfg]);
    assert_eq!(o.code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&o.stdout).unwrap();
    assert_eq!(v["null_space_check"]["pass"], true);
    assert_eq!(v["fisher"]["null_basis"].as_array().unwrap().len(), 2);

    let sym = write_config(
        dir.path(),
        "sym.json",
        r#"{"group": {"kind": "sign_flip", "d": 2}, "theta_star": [0, 0], "seed": 1, "fisher": {"n_mc": 20000}}"#,
    );
    let o = invoke(&["verify-geometry", "--config", &sym]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let suite: CheckSuite = serde_json::from_str(&o.stdout).unwrap();
    assert!(suite.pass);
    assert!(!suite.get("pointwise_null_score").unwrap().vacuous);
    // re-serializes to the same document
    assert_eq!(serde_json::to_string_pretty(&suite).unwrap() + "\n", o.stdout);
}

#[test]
fn failed_checks_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    // n_mc too small for the suite is a configuration problem
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"group": {"kind": "sign_flip", "d": 1}, "theta_star": [0], "fisher": {"n_mc": 100}}"#,
    );
    assert_eq!(invoke(&["verify-geometry", "--config", &cfg]).code, EXIT_CONFIG);
    assert_eq!(EXIT_CHECK_FAILED, 1);
}

#[test]
fn rates_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", DIAG);
    let out = dir.path().join("rates");
    let o = invoke(&["rates", "--config", &cfg, "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let csv = std::fs::read_to_string(out.join("rates.csv")).unwrap();
    assert!(csv.starts_with("n,trial,e_fast,e_slow,rho,loglik\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 50);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("rates_summary.json")).unwrap()).unwrap();
    assert!(summary["version"].as_str().unwrap().contains("canonical-v1"));
    assert!(summary["slope_fast"]["fitted"].as_bool().unwrap());
}

#[test]
fn schema_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(
        dir.path(),
        "bad.json",
        r#"{"group": {"kind": "sign_flip", "d": 1}, "theta_star": [0],
            "rates": {"n_grid": [250, 500, 1000, 2000], "trials": 0}}"#,
    );
    let o = invoke(&["rates", "--config", &bad, "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(o.code, EXIT_CONFIG);
    assert!(o.stderr.contains("trials"), "{}", o.stderr);

    let unknown = write_config(dir.path(), "u.json", r#"{"group": {"kind": "trivial", "d": 1}, "theta_star": [0], "extra": 1}"#);
    assert_eq!(invoke(&["sample", "--config", &unknown]).code, EXIT_CONFIG);
    let not_group = write_config(
        dir.path(),
        "g.json",
        r#"{"group": {"kind": "custom", "elements": [[1, 0, 0, 1], [0, -1, 1, 0]]}, "theta_star": [0, 0]}"#,
    );
    assert_eq!(invoke(&["fisher", "--config", &not_group]).code, EXIT_CONFIG);
    assert_eq!(invoke(&["sample"]).code, EXIT_CONFIG);
    assert_eq!(invoke(&["frobnicate"]).code, EXIT_CONFIG);
    assert_eq!(invoke(&["sample", "--config", "/nonexistent/c.json"]).code, EXIT_CONFIG);
}

#[test]
fn version_names_ordering_convention() {
    let o = invoke(&["version"]);
    assert_eq!(o.code, EXIT_OK);
    assert!(o.stdout.contains("canonical-v1"));
    assert!(o.stdout.contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn config_round_trips() {
    let c = ExperimentConfig::from_json(DIAG).unwrap();
    let text = serde_json::to_string_pretty(&c).unwrap();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
}
