use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn fv_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fv-lab"))
        .args(args)
        .env("FV_LAB_THREADS", "2")
        .output()
        .unwrap()
}

fn json(args: &[&str]) -> Value {
    let out = fv_lab(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn qsd_two_point() {
    let v = json(&["qsd", "--two-point", "1,2,3,1"]);
    let nu: Vec<f64> = serde_json::from_value(v["nu"].clone()).unwrap();
    assert!((nu[0] - 0.5).abs() < 1e-12 && (nu[1] - 0.5).abs() < 1e-12);
    assert!((v["theta"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((v["two_point"]["gap"].as_f64().unwrap() - 3.0).abs() < 1e-12);
}

#[test]
fn verify_complete_graph_passes() {
    let out = fv_lab(&["verify", "--complete-graph", "K=2,p=1", "--N", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 6);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn verify_two_point_with_zero_rho() {
    let out = fv_lab(&["verify", "--two-point", "1,2,3,0", "--N", "5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("PASS hardy-validity"));
    assert!(text.contains("SKIP coupling-drift"));
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = ["a.csv", "b.csv"].iter().map(|f| dir.path().join(f)).collect();
    for p in &paths {
        let out = fv_lab(&[
            "simulate", "--complete-graph", "K=3,p=1", "--N", "10", "--times", "0.5,1", "--replicas", "40", "--seed", "7",
            "--out", p.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(&paths[0]).unwrap();
    assert_eq!(a, fs::read(&paths[1]).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next(), Some("time,k,mean,var,se"));
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    let cov = fs::read_to_string(dir.path().join("a.cov.csv")).unwrap();
    assert_eq!(cov.lines().next(), Some("time,k,l,cov,se"));
    assert_eq!(fs::read(dir.path().join("a.cov.csv")).unwrap(), fs::read(dir.path().join("b.cov.csv")).unwrap());
}

#[test]
fn simulate_single_path_and_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    fs::write(&model, r#"{"K": 3, "Q": [[0, 1, 0.5], [2, 0, 0.1], [0.3, 0.7, 0]], "p0": [1.5, 0.2, 0.8]}"#).unwrap();
    let out = fv_lab(&["simulate", "--model", model.to_str().unwrap(), "--N", "6", "--replicas", "1", "--eta", "6,0,0", "--times", "0,2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[..4], ["time,k,count", "0,0,6", "0,1,0", "0,2,0"]);
    let total: u32 = rows[4..].iter().map(|r| r.rsplit(',').next().unwrap().parse::<u32>().unwrap()).sum();
    assert_eq!(total, 6);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"complete_graph": "K=2,p=1", "N": 101, "times": [0, 1]}"#).unwrap();
    let v = json(&["bounds", "--config", cfg.to_str().unwrap()]);
    assert!((v["uniform_bound"].as_f64().unwrap() - 0.942130).abs() < 1e-6);
    assert_eq!(v["times"][0]["pair_bound"].as_f64(), Some(0.0));
    let v = json(&["bounds", "--config", cfg.to_str().unwrap(), "--two-point", "1,1,2.5,0.5", "--N", "5"]);
    assert!(v["uniform_bound"]["not_applicable"].is_string());
}

#[test]
fn couple_and_spectrum() {
    let out = fv_lab(&["couple", "--complete-graph", "K=3,p=1", "--N", "6", "--times", "0,1", "--replicas", "200", "--seed", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().nth(1), Some("0,6,0"));
    let v = json(&["spectrum", "--complete-graph", "K=2,p=1", "--N", "2"]);
    let ev: Vec<f64> = serde_json::from_value(v["eigenvalues"].clone()).unwrap();
    for (a, b) in ev.iter().zip([0.0, 1.0, 4.0]) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn invariant_complete_graph() {
    let v = json(&["invariant", "--complete-graph", "K=2,p=1", "--N", "2"]);
    let law: Vec<f64> = serde_json::from_value(v["law"].clone()).unwrap();
    assert_eq!(law, vec![0.375, 0.25, 0.375]);
    assert!(v["oracle_gap"].as_f64().unwrap() < 1e-10);
    assert_eq!(v["stationary_moments"]["covariance"].as_f64(), Some(-0.75));
}

#[test]
fn errors_exit_nonzero() {
    let out = fv_lab(&["qsd"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no model"));
    assert!(!fv_lab(&["simulate", "--complete-graph", "K=2,p=1"]).status.success());
    assert!(!fv_lab(&["qsd", "--two-point", "1,2,3"]).status.success());
    assert!(!fv_lab(&["spectrum", "--complete-graph", "K=2,p=1", "--N", "1"]).status.success());
}
