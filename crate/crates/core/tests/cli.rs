use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;
use tempfile::TempDir;

fn maic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maic"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const ALD: &str = r#"{"covariate_means": {"x1": 0.75}, "effect_estimate": -0.2, "effect_variance": 0.05, "sample_size": 300}"#;

fn analyze_json(dir: &Path, ipd: &str, method: &str, extra: &[&str]) -> Value {
    let ipd = write(dir, "ipd.csv", ipd);
    let ald = write(dir, "ald.json", ALD);
    let mut args = vec!["analyze", "--ipd", &ipd, "--ald", &ald, "--method", method];
    args.extend_from_slice(extra);
    let out = maic(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn two_point_fixture_weights() {
    let dir = TempDir::new().unwrap();
    let diag = dir.path().join("diag.csv");
    let json = analyze_json(
        dir.path(),
        "treatment,outcome,x1\n1,2.0,0\n0,3.5,1\n",
        "MAIC",
        &["--bootstrap", "0", "--diagnostics", diag.to_str().unwrap()],
    );
    assert_eq!(json["var_10"], Value::Null);
    assert_eq!(json["delta_10"].as_f64().unwrap(), -1.5);
    assert!((json["delta_12"].as_f64().unwrap() - -1.3).abs() < 1e-12);

    let mut rdr = csv::Reader::from_path(&diag).unwrap();
    let weights: Vec<f64> = rdr.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert!((weights[0] - 0.4387).abs() < 1e-4);
    assert!((weights[1] - 1.3161).abs() < 1e-4);
    let summary = fs::read_to_string(dir.path().join("diag.summary.csv")).unwrap();
    assert!(summary.starts_with("stage,min,max,ess\ntrial,"));
}

#[test]
fn uniform_propensity_leaves_estimate_unchanged() {
    let dir = TempDir::new().unwrap();
    let ipd = "treatment,outcome,x1\n1,2.0,0\n1,4.5,1\n0,3.5,0\n0,1.0,1\n1,2.2,0.5\n0,0.7,0.5\n";
    let one = analyze_json(dir.path(), ipd, "MAIC", &["--bootstrap", "0"]);
    let two = analyze_json(dir.path(), ipd, "2SMAIC", &["--bootstrap", "0"]);
    let a = one["delta_10"].as_f64().unwrap();
    let b = two["delta_10"].as_f64().unwrap();
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    assert!(two["ess_combined"].as_f64().is_some());
}

#[test]
fn bootstrap_output_has_variance_and_interval() {
    let dir = TempDir::new().unwrap();
    let mut ipd = String::from("treatment,outcome,x1\n");
    for i in 0..40 {
        let x = (i % 7) as f64 / 5.0;
        ipd += &format!("{},{},{}\n", i % 2, 1.0 + x + (i % 3) as f64, x);
    }
    let json = analyze_json(dir.path(), &ipd, "T-2SMAIC", &["--bootstrap", "200", "--seed", "3"]);
    let var_12 = json["var_12"].as_f64().unwrap();
    let var_10 = json["var_10"].as_f64().unwrap();
    assert!((var_12 - (var_10 + 0.05)).abs() < 1e-12);
    let ci = json["ci"].as_array().unwrap();
    let d12 = json["delta_12"].as_f64().unwrap();
    assert!(ci[0].as_f64().unwrap() < d12 && d12 < ci[1].as_f64().unwrap());
    assert_eq!(json["bootstrap"]["requested"], 200);
}

#[test]
fn separated_fixture_exits_with_code_2() {
    let dir = TempDir::new().unwrap();
    let ipd = write(dir.path(), "ipd.csv", "treatment,outcome,x1\n1,2.0,0.1\n0,3.5,0.2\n1,1.0,0.3\n");
    let ald = write(dir.path(), "ald.json", ALD);
    let out = maic(&["analyze", "--ipd", &ipd, "--ald", &ald, "--bootstrap", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("all values below target"));

    let out = maic(&["validate", "--ipd", &ipd, "--ald", &ald]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_and_input_errors_exit_with_code_1() {
    assert_eq!(maic(&["simulate", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(maic(&["frobnicate"]).status.code(), Some(1));
    let out = maic(&["analyze", "--ipd", "/nonexistent.csv", "--ald", "/nonexistent.json"]);
    assert_eq!(out.status.code(), Some(1));
    let help = maic(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("Exit codes"));
}

#[test]
fn missing_value_is_reported_with_row() {
    let dir = TempDir::new().unwrap();
    let ipd = write(dir.path(), "ipd.csv", "treatment,outcome,x1\n1,2.0,0.1\n0,,0.9\n");
    let ald = write(dir.path(), "ald.json", ALD);
    let out = maic(&["validate", "--ipd", &ipd, "--ald", &ald]);
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("row 2") && msg.contains("outcome"), "{msg}");
}

fn simulate(dir: &Path, threads: &str) -> Output {
    maic(&[
        "simulate",
        "--replicates",
        "10",
        "--bootstrap",
        "50",
        "--threads",
        threads,
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn simulate_smoke_is_fast_and_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let start = Instant::now();
    let out = simulate(a.path(), "1");
    let elapsed = start.elapsed();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(elapsed.as_secs_f64() < 10.0, "smoke run took {elapsed:?}");
    assert!(simulate(b.path(), "3").status.success());

    let metrics = fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 24);
    for name in ["metrics.csv", "estimates.csv", "discards.csv", "manifest.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
    let manifest: Value = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config"]["scenarios"].as_array().unwrap().len(), 6);
    // no temporary files left behind
    assert!(fs::read_dir(a.path())
        .unwrap()
        .all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));

    let recomputed = a.path().join("recomputed.csv");
    let out = maic(&[
        "metrics",
        "--estimates",
        a.path().join("estimates.csv").to_str().unwrap(),
        "--replicates",
        "10",
        "--out",
        recomputed.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(recomputed).unwrap(), metrics);
}

#[test]
fn simulate_config_file_and_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let config = write(
        dir.path(),
        "grid.toml",
        "n_replicates = 50\nbootstrap_B = 20\n\n[[scenarios]]\nname = \"small\"\nn_index = 60\n",
    );
    let out_dir = dir.path().join("out");
    let out = maic(&[
        "simulate",
        "--config",
        &config,
        "--replicates",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4);
    let estimates = fs::read_to_string(out_dir.join("estimates.csv")).unwrap();
    assert!(estimates.lines().skip(1).all(|l| l.starts_with("small,")));
    assert!(estimates.lines().count() <= 1 + 12);

    let bad = write(dir.path(), "bad.toml", "n_replicate = 5\n");
    let out = maic(&["simulate", "--config", &bad, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_replicate"));
}
