use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bcbf"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

/// A shortened copy of a bundled configuration.
fn short_config(dir: &Path, name: &str, duration: f64) -> PathBuf {
    let mut cfg = bcbf::config::ScenarioConfig::load(&bundled(name)).unwrap();
    cfg.schedule.duration = duration;
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_json_string()).unwrap();
    path
}

#[test]
fn bundled_configs_match_presets() {
    use bcbf::config::ScenarioConfig;
    assert_eq!(ScenarioConfig::load(&bundled("integrator1d.json")).unwrap(), ScenarioConfig::integrator1d());
    assert_eq!(ScenarioConfig::load(&bundled("unicycle2d.json")).unwrap(), ScenarioConfig::unicycle2d());
}

#[test]
fn run_writes_outputs_and_honours_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "integrator1d.json", 12.0);
    let out = dir.path().join("run");
    let status = bin()
        .args(["run", cfg.to_str().unwrap(), "--estimator", "ekf", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for f in ["trajectory.csv", "measurements.csv", "metrics.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["estimator"], "ekf");
    assert!(metrics["pct_estimated_exceedances"].is_number());
    let header = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(header.starts_with("t,x_true_0,mu_0,sigma_diag_0,u_0,h_b_1,slack,event_flag\n"));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "integrator1d.json", 11.0);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("r{k}"));
        let status = bin()
            .args(["run", cfg.to_str().unwrap(), "--seed", "42", "--out", out.to_str().unwrap()])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        outputs.push(out);
    }
    for f in ["trajectory.csv", "measurements.csv", "metrics.json"] {
        assert_eq!(
            std::fs::read(outputs[0].join(f)).unwrap(),
            std::fs::read(outputs[1].join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn montecarlo_summary_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "integrator1d.json", 11.0);
    let out = dir.path().join("mc");
    let status = bin()
        .args(["montecarlo", cfg.to_str().unwrap(), "--n-runs", "2", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_runs"], 2);
    assert_eq!(std::fs::read_to_string(out.join("runs.csv")).unwrap().lines().count(), 3);

    let zero = bin()
        .args(["montecarlo", cfg.to_str().unwrap(), "--n-runs", "0", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(zero.code(), Some(1));
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(bundled("integrator1d.json")).unwrap();
    std::fs::write(&bad, text.replacen("\"safety_filter\"", "\"safety_filtr\"", 1)).unwrap();
    let output = bin().args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("line") && err.contains("safety_filtr"), "{err}");

    let missing = bin().args(["run", "/does/not/exist.json"]).status().unwrap();
    assert_eq!(missing.code(), Some(1));
    let unknown = bin().args(["frobnicate"]).status().unwrap();
    assert_eq!(unknown.code(), Some(1));
}

#[test]
fn compare_tables_carry_row_names_and_pairing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "integrator1d.json", 11.0);
    let out = dir.path().join("cmp1");
    let status = bin()
        .args(["compare", cfg.to_str().unwrap(), "--n-runs", "2", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let table = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(table.contains("% estimated exceedances per run"));
    assert!(table.contains("Tracking RMSE"));
    let paired = std::fs::read_to_string(out.join("paired_runs.csv")).unwrap();
    assert!(paired.starts_with("seed,gekf_failed,ekf_failed"));
    assert_eq!(paired.lines().count(), 3);

    let cfg2 = short_config(dir.path(), "unicycle2d.json", 2.0);
    let out2 = dir.path().join("cmp2");
    let status = bin()
        .args(["compare", cfg2.to_str().unwrap(), "--n-runs", "1", "--out", out2.to_str().unwrap()])
        .status()
        .unwrap();
    // failures are reported through the exit code, not as a crash
    assert!(matches!(status.code(), Some(0) | Some(2)));
    let text = std::fs::read_to_string(out2.join("comparison.txt")).unwrap();
    assert!(text.contains("Failure rate (%)"));
    assert!(text.contains("% of BCBF 1 violations per run"));
}
