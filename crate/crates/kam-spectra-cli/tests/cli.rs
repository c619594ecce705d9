//! End-to-end tests driving the built binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_kam-spectra")
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("kam-spectra-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_in(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(binary())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn strip_timing(report: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(report).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn maryland_run_exits_zero_and_converges() {
    let dir = temp_dir("maryland");
    let config = config_dir().join("maryland.json");
    let (code, stdout, stderr) = run_in(&dir, &["run", "--config", config.to_str().unwrap()]);
    assert_eq!(code, 0, "stderr: {stderr}");
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["schema"], "kam-spectra/1");
    assert_eq!(report["run"]["converged"], true);
    assert_eq!(report["run"]["mode"], "rigorous");
    assert_eq!(report["diophantine"]["all_pass"], true);
    assert_eq!(report["localization"]["all_pass"], true);
    assert_eq!(report["unitarity"]["pass"], true);
    assert!(report["match"]["max_delta_lambda"].as_f64().unwrap() <= 1e-8);

    // artifacts landed next to the working directory
    let on_disk = std::fs::read_to_string(dir.join("maryland_report.json")).unwrap();
    assert_eq!(strip_timing(&on_disk), strip_timing(&stdout));
    let csv = std::fs::read_to_string(dir.join("maryland_eigenvalues.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n,lambda,lambda_eps_re,lambda_eps_im,oracle_theta"
    );
    assert_eq!(lines.count(), 81);
}

#[test]
fn reports_are_bit_stable() {
    let dir_a = temp_dir("stable-a");
    let dir_b = temp_dir("stable-b");
    let config = config_dir().join("linear_diagonal.json");
    let (code_a, out_a, _) = run_in(&dir_a, &["run", "--config", config.to_str().unwrap()]);
    let (code_b, out_b, _) = run_in(&dir_b, &["run", "--config", config.to_str().unwrap()]);
    assert_eq!(code_a, 0);
    assert_eq!(code_b, 0);
    let a = strip_timing(&out_a);
    let b = strip_timing(&out_b);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn rigor_gate_exits_three() {
    let dir = temp_dir("rigor");
    let config = r#"{
      "model": {
        "dimension": 1,
        "omega": [0.6180339887498949],
        "transform": { "kind": "tan_pi" },
        "gamma": 1.0,
        "c": { "scan": {} }
      },
      "perturbation": { "kind": { "kind": "laplacian" }, "alpha": 2.0 },
      "run": { "epsilon": 0.5, "radius": 10, "mode": "rigorous" }
    }"#;
    let path = dir.join("too_big.json");
    std::fs::write(&path, config).unwrap();
    let (code, _, stderr) = run_in(&dir, &["run", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 3, "stderr: {stderr}");
    assert!(stderr.contains("admissible"), "stderr: {stderr}");
}

#[test]
fn zero_epsilon_run() {
    let dir = temp_dir("zero-eps");
    let config = r#"{
      "model": {
        "dimension": 1,
        "omega": [1.0],
        "transform": { "kind": "identity" },
        "gamma": 1.0,
        "c": { "declared": 1.0 }
      },
      "perturbation": { "kind": { "kind": "laplacian" }, "alpha": 1.0 },
      "run": { "epsilon": 0.0, "radius": 8, "mode": "rigorous" }
    }"#;
    let path = dir.join("zero.json");
    std::fs::write(&path, config).unwrap();
    let (code, stdout, stderr) = run_in(&dir, &["run", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 0, "stderr: {stderr}");
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["run"]["converged"], true);
    assert_eq!(report["run"]["steps"], 0);
    assert_eq!(report["run"]["residual"], 0.0);
}

#[test]
fn config_errors_exit_two() {
    let dir = temp_dir("bad-config");
    // unknown field
    let path = dir.join("bad.json");
    std::fs::write(&path, r#"{ "modle": {} }"#).unwrap();
    let (code, _, _) = run_in(&dir, &["run", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    // missing file
    let (code, _, _) = run_in(&dir, &["run", "--config", "does-not-exist.json"]);
    assert_eq!(code, 2);
    // invalid mode
    let path2 = dir.join("bad_mode.json");
    std::fs::write(
        &path2,
        r#"{
          "model": { "dimension": 1, "omega": [1.0], "transform": {"kind":"identity"}, "gamma": 1.0 },
          "perturbation": { "kind": {"kind":"laplacian"}, "alpha": 1.0 },
          "run": { "epsilon": 0.0, "radius": 4, "mode": "sloppy" }
        }"#,
    )
    .unwrap();
    let (code, _, _) = run_in(&dir, &["run", "--config", path2.to_str().unwrap()]);
    assert_eq!(code, 2);
}

#[test]
fn numerical_divergence_exits_four() {
    let dir = temp_dir("diverge");
    let config = r#"{
      "model": {
        "dimension": 1,
        "omega": [0.6180339887498949],
        "transform": { "kind": "tan_pi" },
        "gamma": 1.0,
        "c": { "scan": {} }
      },
      "perturbation": { "kind": { "kind": "laplacian" }, "alpha": 2.0 },
      "run": { "epsilon": 0.8, "radius": 10, "mode": "empirical", "max_steps": 10 }
    }"#;
    let path = dir.join("big.json");
    std::fs::write(&path, config).unwrap();
    let (code, _, stderr) = run_in(&dir, &["run", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 4, "stderr: {stderr}");
}

#[test]
fn sweep_residual_monotone_in_epsilon() {
    let dir = temp_dir("sweep");
    let config = r#"{
      "model": {
        "dimension": 1,
        "omega": [0.6180339887498949],
        "transform": { "kind": "tan_pi" },
        "gamma": 1.0,
        "c": { "scan": {} }
      },
      "perturbation": { "kind": { "kind": "laplacian" }, "alpha": 2.0 },
      "run": {
        "epsilon": 0.0,
        "epsilon_sweep": [0.0, 0.0001, 0.001, 0.01],
        "radius": 12,
        "mode": "empirical",
        "max_steps": 12
      },
      "outputs": { "sweep_csv": "sweep.csv" }
    }"#;
    let path = dir.join("sweep.json");
    std::fs::write(&path, config).unwrap();
    let (code, stdout, stderr) = run_in(&dir, &["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 0, "stderr: {stderr}");
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let mut prev = -1.0;
    for row in rows {
        assert_eq!(row["status"], "ok");
        assert_eq!(row["converged"], true);
        let resid = row["residual"].as_f64().unwrap();
        assert!(resid >= prev, "residual not monotone: {resid} after {prev}");
        prev = resid;
    }
    let csv = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert!(
        csv.starts_with("param,converged,steps,residual,worst_dio_margin,fitted_loc_rate,status")
    );
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn omega_sweep_over_quadratic_irrationals() {
    let dir = temp_dir("omega-sweep");
    // (sqrt(5)-1)/2, sqrt(2)-1, sqrt(3)-1, (sqrt(13)-3)/2, sqrt(7)-2
    let config = r#"{
      "model": {
        "dimension": 1,
        "omega": [0.6180339887498949],
        "transform": { "kind": "tan_pi" },
        "gamma": 1.0,
        "c": { "scan": {} }
      },
      "perturbation": { "kind": { "kind": "laplacian" }, "alpha": 2.0 },
      "run": {
        "epsilon": 0.001,
        "omega_sweep": [
          [0.6180339887498949],
          [0.41421356237309515],
          [0.7320508075688772],
          [0.30277563773199456],
          [0.6457513110645906]
        ],
        "radius": 12,
        "mode": "empirical",
        "max_steps": 12
      }
    }"#;
    let path = dir.join("omega.json");
    std::fs::write(&path, config).unwrap();
    let (code, stdout, stderr) = run_in(&dir, &["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 0, "stderr: {stderr}");
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    for row in rows {
        assert_eq!(row["status"], "ok", "row: {row}");
        assert_eq!(row["converged"], true, "row: {row}");
    }
}

#[test]
fn empty_sweep_is_a_config_error() {
    let dir = temp_dir("empty-sweep");
    let config = r#"{
      "model": { "dimension": 1, "omega": [1.0], "transform": {"kind":"identity"}, "gamma": 1.0 },
      "perturbation": { "kind": {"kind":"laplacian"}, "alpha": 1.0 },
      "run": { "epsilon": 0.0, "epsilon_sweep": [], "radius": 4, "mode": "rigorous" }
    }"#;
    let path = dir.join("empty.json");
    std::fs::write(&path, config).unwrap();
    let (code, _, _) = run_in(&dir, &["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 2);
}

#[test]
fn sweep_respects_thread_cap() {
    let dir = temp_dir("sweep-threads");
    let config = r#"{
      "model": {
        "dimension": 1,
        "omega": [1.0],
        "transform": { "kind": "identity" },
        "gamma": 1.0,
        "c": { "declared": 1.0 }
      },
      "perturbation": { "kind": { "kind": "laplacian" }, "alpha": 1.0 },
      "run": { "epsilon": 0.0, "epsilon_sweep": [0.0, 1e-6], "radius": 6, "mode": "rigorous" }
    }"#;
    let path = dir.join("cfg.json");
    std::fs::write(&path, config).unwrap();
    let out = Command::new(binary())
        .args(["sweep", "--config", path.to_str().unwrap()])
        .env("KAM_SPECTRA_THREADS", "1")
        .current_dir(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(report["workers"], 1);
}

#[test]
fn scan_and_constants_and_oracle_verbs() {
    let dir = temp_dir("verbs");
    let config = config_dir().join("maryland.json");
    let cfg = config.to_str().unwrap();

    let (code, stdout, _) = run_in(&dir, &["scan", "--config", cfg, "--radius", "20"]);
    assert_eq!(code, 0);
    let scan: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(scan["certification"]["c"].as_f64().unwrap() >= 1.0);
    assert!(scan["h_conditions"]["a"].as_f64().unwrap() > 3.0);
    assert!(scan["a4"]["v_alpha_norm"].as_f64().unwrap() > 7.0);

    let (code, stdout, _) = run_in(&dir, &["constants", "--config", cfg, "--radius", "20"]);
    assert_eq!(code, 0);
    let consts: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let eps_star = consts["constants"]["eps_star"].as_f64().unwrap();
    assert!(eps_star > 0.0 && eps_star < 1e-3);
    assert_eq!(consts["epsilon_resolved"].as_f64().unwrap(), eps_star);

    let (code, stdout, _) = run_in(&dir, &["oracle", "--config", cfg, "--radius", "25"]);
    assert_eq!(code, 0);
    let oracle: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(oracle["matrix_side"], 51);
    assert_eq!(oracle["eigenvalues"].as_array().unwrap().len(), 51);
}

#[test]
fn trace_emits_ledger_jsonl() {
    let dir = temp_dir("trace");
    let config = r#"{
      "model": {
        "dimension": 1,
        "omega": [0.6180339887498949],
        "transform": { "kind": "tan_pi" },
        "gamma": 1.0,
        "c": { "scan": {} }
      },
      "perturbation": { "kind": { "kind": "laplacian" }, "alpha": 2.0 },
      "run": { "epsilon": { "cap": 0.001 }, "radius": 12, "mode": "rigorous" },
      "outputs": { "ledger": "steps.jsonl", "vectors_csv": "vectors.csv" }
    }"#;
    let path = dir.join("cfg.json");
    std::fs::write(&path, config).unwrap();
    let (code, _, stderr) = run_in(
        &dir,
        &["run", "--config", path.to_str().unwrap(), "--trace"],
    );
    assert_eq!(code, 0, "stderr: {stderr}");
    let ledger = std::fs::read_to_string(dir.join("steps.jsonl")).unwrap();
    assert!(!ledger.is_empty());
    for line in ledger.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(rec["wall_time_ms"].as_f64().is_some());
        assert!(rec["cond_a"].as_bool().unwrap());
    }
    let vectors = std::fs::read_to_string(dir.join("vectors.csv")).unwrap();
    let mut lines = vectors.lines();
    assert_eq!(lines.next().unwrap(), "n,j,re,im");
    assert!(lines.count() > 0);
}
