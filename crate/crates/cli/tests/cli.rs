//! Exit codes and output files of the command-line tool.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fleet-observer"))
        .args(args)
        .env("FLEET_OBSERVER_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("json on stdout")
}

fn write_scenario(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> String {
    let out = bin(&["simulate", "fig1_4x4", "--out", dir.join("seed").to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let mut v: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("seed/scenario.json")).unwrap()).unwrap();
    v["horizon_steps"] = 200.into();
    edit(&mut v);
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn observability_of_preset() {
    let o = bin(&["check-observability", "fig1_4x4"]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert_eq!(v["report"]["rank"], 32);
    assert_eq!(v["report"]["observable"], true);
}

#[test]
fn gain_synth_reports_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["gain-synth", "fig1_4x4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert!(v["gain"]["rho"].as_f64().unwrap() < 1.0);
    assert_eq!(v["gain"]["ratio"], 0.0);
    assert!(v["bounds"]["theta"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("gain.json").is_file());
}

#[test]
fn simulate_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = bin(&["simulate", "fault_cav2", "--seed", "11", "--out", run.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["seed"], 11);
    for f in ["trace.csv", "alarms.csv", "metrics.json", "gain.json", "layout.json", "scenario.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let o = bin(&["emit-plots", run.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(run.join("plots/manifest.json").is_file());
}

#[test]
fn json_format_writes_json_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "short.json", |_| {});
    let run = dir.path().join("run");
    let o = bin(&["simulate", &path, "--format", "json", "--out", run.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(run.join("trace.json").is_file());
    assert!(!run.join("trace.csv").exists());
}

#[test]
fn montecarlo_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "short.json", |_| {});
    let mc = dir.path().join("mc");
    let o = bin(&["montecarlo", &path, "--trials", "3", "--out", mc.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["trials"], 3);
    assert!(mc.join("montecarlo.json").is_file() && mc.join("trials.csv").is_file());

    let o = bin(&["compare-baseline", &path, "--L", "2,5"]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    let ratios: Vec<f64> = v["observers"].as_array().unwrap().iter().map(|r| r["message_ratio"].as_f64().unwrap()).collect();
    assert_eq!(ratios, vec![1.0, 2.0, 5.0]);
}

#[test]
fn validation_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "bad.json", |v| {
        v.as_object_mut().unwrap().remove("seed");
    });
    let o = bin(&["simulate", &path]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("$.seed"));
    assert_eq!(code(&bin(&["simulate", "fig1_4x4", "--format", "xml"])), 2);
}

#[test]
fn unobservable_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "cut.json", |v| {
        v["network"] = serde_json::json!({"out_neighbors": [[1], [2], [3], []]});
    });
    let o = bin(&["check-observability", &path]);
    assert_eq!(code(&o), 3);
    assert_eq!(stdout_json(&o)["report"]["observable"], false);
    assert_eq!(code(&bin(&["simulate", &path])), 3);
}

#[test]
fn other_errors_exit_1() {
    assert_eq!(code(&bin(&["simulate", "/nonexistent/scenario.json"])), 1);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bin(&["emit-plots", dir.path().to_str().unwrap()])), 1);
}
