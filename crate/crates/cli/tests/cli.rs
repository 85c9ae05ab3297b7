use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use groupuq::experiments::preset;

fn toy(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy").join(file)
}

fn groupuq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groupuq")).args(args).env("GROUPUQ_LOG", "error").output().unwrap()
}

fn run_ok(args: &[&str]) {
    let out = groupuq(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap();
    serde_json::from_str(line).unwrap()
}

#[test]
fn infer_on_toy_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy("config.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["infer", "--config", config.to_str().unwrap(), "--out", a.to_str().unwrap(), "--workers", "2"]);
    run_ok(&["infer", "--config", config.to_str().unwrap(), "--out", b.to_str().unwrap(), "--workers", "1"]);
    let csv = read(&a, "summary.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("j,T_j,quantile,p,reject,covered"));
    assert_eq!(lines.count(), 4);
    for name in ["summary.csv", "summary.json", "fit.json", "run.json"] {
        assert_eq!(read(&a, name), read(&b, name), "{name} differs");
    }
    let summary: serde_json::Value = serde_json::from_str(&read(&a, "summary.json")).unwrap();
    assert_eq!(summary["groups"].as_array().unwrap().len(), 4);
    assert!(summary["groups"][0]["reject"].as_bool().unwrap());
}

#[test]
fn seed_override_changes_the_bootstrap() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy("config.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["infer", "--config", config.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    run_ok(&["infer", "--config", config.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "99"]);
    assert_ne!(read(&a, "summary.csv"), read(&b, "summary.csv"));
}

#[test]
fn missing_config_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let missing = dir.path().join("missing.json");
    let out = groupuq(&["infer", "--config", missing.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!out_dir.exists());
    let report = error_json(&out);
    assert_eq!(report["error"]["kind"], "io");
    assert_eq!(report["error"]["module"], "cli");
}

#[test]
fn schema_violation_reports_a_json_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"schema_version":1,"settings":[{"name":"x","n":"forty"}]}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = groupuq(&["simulate", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
    let report = error_json(&out);
    assert_eq!(report["error"]["kind"], "config");
    assert_eq!(report["error"]["pointer"], "/settings/0/n");
}

#[test]
fn numeric_failures_name_the_module() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    // Default k_max = 6; the smoke preset has 4 groups.
    let out = groupuq(&["sweep", "--preset", "smoke", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir.exists());
    let report = error_json(&out);
    assert_eq!(report["error"]["module"], "experiments");
}

#[test]
fn simulate_is_identical_across_worker_counts_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["simulate", "--preset", "smoke", "--out", a.to_str().unwrap(), "--workers", "1"]);
    run_ok(&["simulate", "--preset", "smoke", "--out", b.to_str().unwrap(), "--workers", "3"]);
    let names = ["table.csv", "table.txt", "metrics.csv", "datasets.csv", "metrics.json", "run.json", "reference.txt"];
    for name in names {
        assert_eq!(read(&a, name), read(&b, name), "{name} differs");
    }
    let first = read(&a, "metrics.csv");
    run_ok(&["simulate", "--preset", "smoke", "--out", a.to_str().unwrap()]);
    assert_eq!(read(&a, "metrics.csv"), first);
    assert_eq!(read(&a, "datasets.csv").lines().count(), 1 + 4);
}

#[test]
fn sweep_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut suite = preset("smoke").unwrap();
    suite.sweep_k_max = Some(2);
    suite.settings[0].datasets = 2;
    let config = dir.path().join("sweep.json");
    fs::write(&config, serde_json::to_string(&suite).unwrap()).unwrap();
    let out_dir = dir.path().join("out");
    run_ok(&["sweep", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(read(&out_dir, "metrics.csv").lines().count(), 1 + 3);
    let table = read(&out_dir, "sweep.txt");
    assert!(table.contains("k=0") && table.contains("k=2"));
}

#[test]
fn group_corr_emits_a_partition() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy("group_corr.json");
    run_ok(&["group-corr", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let partition = groupuq::GroupPartition::from_json(&read(dir.path(), "partition.json")).unwrap();
    assert_eq!(partition.n_groups(), 4);
    assert_eq!(partition.p(), 20);
}

#[test]
fn rho_check_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("rho.json");
    fs::write(&config, r#"{"schema_version":1,"cases":[{"n":50,"n_groups":5,"p_max":4}],"alpha_star":[1.0,2.0],"reps":200}"#)
        .unwrap();
    let out_dir = dir.path().join("out");
    run_ok(&["rho-check", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    let csv = read(&out_dir, "rho.csv");
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn fit_at_fixed_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("fit.json");
    let toy_dir = toy("");
    let text = format!(
        r#"{{"schema_version":1,"x":"{0}/X.csv","y":"{0}/y.csv","partition":"{0}/partition.json","lambda":0.2}}"#,
        toy_dir.display()
    );
    fs::write(&config, text).unwrap();
    let out_dir = dir.path().join("out");
    run_ok(&["fit", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    let fit: serde_json::Value = serde_json::from_str(&read(&out_dir, "fit.json")).unwrap();
    assert_eq!(fit["fit"]["lambda"], 0.2);
    assert!(fit["fit"]["converged"].as_bool().unwrap());
    assert!(fit.get("cv_errors").is_none());
}

#[test]
fn bundled_example_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/examples");
    let suite: groupuq::experiments::ExperimentSuite =
        serde_json::from_str(&fs::read_to_string(dir.join("suite.json")).unwrap()).unwrap();
    suite.validate().unwrap();
    assert_eq!(suite.sweep_k_max, Some(3));
    let rho: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("rho.json")).unwrap()).unwrap();
    assert_eq!(rho["alpha_star"].as_array().unwrap().len(), 3);
}
