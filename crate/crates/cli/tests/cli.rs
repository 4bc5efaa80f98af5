use std::path::Path;
use std::process::{Command, Output};

use sde_core::io::write_activation_file;
use sde_core::synth::{make_synthetic_set, SynthSpec};
use sde_core::ActivationMatrix;

fn sde(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sde")).args(args).current_dir(dir).env_remove("SDE_THREADS").output().unwrap()
}

fn synth(dir: &Path, name: &str, n: usize, s: f64, seed: u64) {
    let m = make_synthetic_set(&SynthSpec { n, d: 8, strength: s, seed }).unwrap();
    write_activation_file(dir.join(name), &m).unwrap();
}

#[test]
fn report_has_stable_schema() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "s.act", 40, 1.0, 1);
    let out = sde(tmp.path(), &["splithalf", "s.act", "-T", "20", "--out", "r.json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["tool_version", "command", "config_echo", "seed", "results", "timing", "warnings"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["command"], "splithalf");
    assert_eq!(v["results"]["values"].as_array().unwrap().len(), 20);
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(written["results"], v["results"]);
}

#[test]
fn missing_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sde(tmp.path(), &["splithalf", "absent.act"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.act"));
}

#[test]
fn malformed_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.act"), b"not an activation file").unwrap();
    assert_eq!(sde(tmp.path(), &["splithalf", "bad.act"]).status.code(), Some(2));
    std::fs::write(tmp.path().join("ragged.csv"), "dim=2\n1,2\n3\n").unwrap();
    let out = sde(tmp.path(), &["splithalf", "ragged.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn degenerate_bandwidth_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let constant = ActivationMatrix::from_flat(10, 3, vec![1.5f64; 30], "").unwrap();
    write_activation_file(tmp.path().join("c.act"), &constant).unwrap();
    assert_eq!(sde(tmp.path(), &["bandwidth", "median", "c.act"]).status.code(), Some(3));
}

#[test]
fn invalid_parameters_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "s.act", 40, 0.0, 1);
    assert_eq!(sde(tmp.path(), &["--sigma", "-1", "splithalf", "s.act"]).status.code(), Some(2));
    assert_eq!(sde(tmp.path(), &["splithalf", "s.act", "-T", "0"]).status.code(), Some(2));
    assert_eq!(sde(tmp.path(), &["toy-experiment", "--points", "64"]).status.code(), Some(2));
}

#[test]
fn evaluate_flags_inseparable_references() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "a.act", 60, 0.0, 1);
    synth(tmp.path(), "b.act", 60, 0.0, 2);
    synth(tmp.path(), "pool.act", 120, 0.0, 3);
    let out = sde(tmp.path(), &["evaluate", "pool.act", "--it", "a.act", "--oot", "b.act", "-n", "60", "-m", "2", "-T", "50"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["results"]["m"], 2);
    assert!(v["timing"].get("targets").is_some());
    assert!(v["results"].get("wall_times").is_none());
    let sanity_passed = v["results"]["sanity"]["passed"].as_bool().unwrap();
    assert_eq!(v["warnings"].as_array().unwrap().is_empty(), sanity_passed);
}

#[test]
fn synth_and_toy_write_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sde(tmp.path(), &["synth", "-n", "50", "-d", "4", "-s", "2.0", "--seed", "1", "-o", "S.act"]);
    assert!(out.status.success());
    let m = sde_core::io::read_activation_file(tmp.path().join("S.act")).unwrap();
    assert_eq!((m.rows(), m.dim()), (50, 4));

    let out = sde(
        tmp.path(),
        &["toy-experiment", "--points", "640", "--hidden", "8", "--epochs", "2", "--same-batches", "2", "-T", "20", "--csv", "curve.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,p_value,mean_h_same,mean_h_cross"));
    assert_eq!(lines.count(), 3);
}
