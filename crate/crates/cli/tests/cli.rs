use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_monotone-track"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out-dir").arg(out).output().unwrap()
}

fn demo(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn rlc_value() -> Value {
    serde_json::from_str(&std::fs::read_to_string(configs().join("rlc_demo.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, value: &Value) -> String {
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn simulate_rlc_demo_tracks_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", &demo("rlc_demo.json")], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&std::fs::read(dir.path().join("rlc_demo.summary.json")).unwrap()).unwrap();
    let y = summary["final_output"][0].as_f64().unwrap();
    assert!((y - 2.0).abs() <= 1e-3);
    assert_eq!(summary["steps"], json!(50_000));
    for key in ["final_state", "final_z", "dist_to_star", "wall_time"] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
    assert!(dir.path().join("rlc_demo.csv").exists());
}

#[test]
fn config_flag_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--config", &demo("node_demo.json"), "--horizon", "5"], dir.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn infeasible_reference_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = rlc_value();
    v["controller"]["r"] = json!([7.0]);
    let cfg = write_config(dir.path(), &v);
    assert_eq!(run(&["simulate", &cfg], dir.path()).status.code(), Some(4));
    let out = run(&["feasible", &demo("rlc_demo.json"), "--r", "0.3"], dir.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn configuration_errors_exit_1_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = rlc_value();
    v["integrator"]["solver_tol"] = json!(0.0);
    let cfg = write_config(dir.path(), &v);
    let out = run(&["simulate", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("integrator.solver_tol"));

    let mut v = rlc_value();
    v["controller"]["K"]["lower"] = json!([4.0]);
    let cfg = write_config(dir.path(), &v);
    let out = run(&["simulate", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("controller.K"));

    let mut v = rlc_value();
    v["plant"]["R"] = json!(-2.0);
    let cfg = write_config(dir.path(), &v);
    assert_eq!(run(&["verify", &cfg], dir.path()).status.code(), Some(1));

    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["simulate", missing.to_str().unwrap()], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["simulate", &demo("rlc_demo.json"), "--scheme", "euler"], dir.path()).status.code(), Some(1));
}

#[test]
fn verify_writes_report_and_exit_codes_follow_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["verify", &demo("node_demo.json"), "--horizon", "50"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("node_demo_report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], json!(true));
    assert!(report["records"].as_array().unwrap().iter().all(|r| r["certifies"].as_str().is_some_and(|s| !s.is_empty())));

    // far too short a horizon to converge
    let out = run(&["verify", &demo("node_demo.json"), "--horizon", "0.5"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn splitting_verify_records_informational_contraction() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["verify", &demo("rlc_demo.json"), "--scheme", "splitting", "--step", "0.002"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("rlc_demo_report.json")).unwrap()).unwrap();
    let contraction = report["records"].as_array().unwrap().iter().find(|r| r["name"] == "contraction").unwrap();
    assert_eq!(contraction["informational"], json!(true));
}

#[test]
fn steady_prints_the_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["steady", &demo("rlc_demo.json"), "--u", "-1.5"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let pair: Value = serde_json::from_slice(&out.stdout).unwrap();
    let x: Vec<f64> = serde_json::from_value(pair["x_star"].clone()).unwrap();
    for (got, want) in x.iter().zip([0.0, -1.5, 1.5]) {
        assert!((got - want).abs() <= 1e-12, "{x:?}");
    }
    assert!(pair["output"][0].as_f64().unwrap().abs() <= 1e-12);
}

#[test]
fn sweep_merges_entries_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sweep", &demo("rlc_demo.json"), "--horizon", "30", "--out-dir"])
        .arg(dir.path())
        .env("MONOTONE_TRACK_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("rlc_demo_sweep.csv")).unwrap();
    let codes: Vec<(String, String)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[1].to_string(), r[2].to_string())
        })
        .collect();
    let expected = [("0.3", "4"), ("0.5", "0"), ("2.0", "0"), ("6.0", "0"), ("7.0", "4")];
    assert_eq!(codes.len(), expected.len());
    for ((value, code), (ev, ec)) in codes.iter().zip(expected) {
        assert_eq!((value.as_str(), code.as_str()), (ev, ec));
    }
    assert!(dir.path().join("rlc_demo_002.csv").exists());
}
