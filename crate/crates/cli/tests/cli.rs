use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn projlift(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_projlift"));
    c.args(args).env_remove("PROJLIFT_SEED");
    if let Some(s) = env_seed {
        c.env("PROJLIFT_SEED", s);
    }
    c.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn report(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap()
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

const DIAG: &str = r#"{"n": 200, "reps": 3, "ensemble": {"atoms": [{"weight": 1.0, "matrix": [[2, 0], [0, 1]]}], "label": "diag(2,1)"}}"#;

#[test]
fn lyapunov_of_diagonal() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", DIAG);
    let out = tmp.path().join("out");
    let o = projlift(&["lyapunov", "--config", &cfg, "--seed", "11", "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let s: Vec<f64> = serde_json::from_value(r["result"]["spectrum"].clone()).unwrap();
    assert!((s[0] - 2f64.ln()).abs() <= 1e-12, "{s:?}");
    assert!(s[1].abs() <= 1e-12, "{s:?}");
    assert_eq!(r["config"]["seed"], 11);
    assert_eq!(r["config"]["command"], "lyapunov");
    assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
    for f in ["report.json", "rows.csv", "plot.gp"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"n": 3000, "reps": 4, "seed": 5, "ensemble": {"builder": "affine-scalar", "log_mean": -0.2}}"#,
    );
    for cmd in ["lyapunov", "drift", "lift"] {
        let a = tmp.path().join(format!("{cmd}-a"));
        let b = tmp.path().join(format!("{cmd}-b"));
        let oa = projlift(&[cmd, "--config", &cfg, "--out", a.to_str().unwrap(), "--threads", "1"], None);
        let ob = projlift(&[cmd, "--config", &cfg, "--out", b.to_str().unwrap(), "--threads", "4"], None);
        assert!(oa.status.success() && ob.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
        assert_eq!(read_all(&a), read_all(&b), "{cmd}");
    }
}

#[test]
fn grassmannian_k2_is_unique_stationary() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"k": 2, "n": 10000}"#);
    let out = tmp.path().join("out");
    let o = projlift(&["grassmannian", "--config", &cfg, "--out", out.to_str().unwrap()], Some("3"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["result"]["report"]["verdict"], "unique-stationary");
    assert_eq!(r["config"]["seed"], 3);
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    let code = |args: &[&str], seed: Option<&str>| projlift(args, seed).status.code();

    let bad = write_config(tmp.path(), "bad.json", "{ not json");
    assert_eq!(code(&["lyapunov", "--config", &bad, "--seed", "1", "--out", out], None), Some(2));
    let missing = tmp.path().join("nope.json");
    assert_eq!(code(&["lyapunov", "--config", missing.to_str().unwrap(), "--seed", "1"], None), Some(2));
    let diag = write_config(tmp.path(), "diag.json", DIAG);
    // no seed anywhere
    assert_eq!(code(&["lyapunov", "--config", &diag, "--out", out], None), Some(2));
    assert_eq!(code(&["lyapunov", "--config", &diag, "--out", out], Some("x")), Some(2));
    assert_eq!(code(&["lyapunov", "--config", &diag, "--out", out], Some("4")), Some(0));
    assert_eq!(code(&["frobnicate", "--config", &diag], None), Some(2));
    let other = write_config(tmp.path(), "fkh.json", r#"{"command": "fkh", "seed": 1}"#);
    assert_eq!(code(&["lyapunov", "--config", &other, "--out", out], None), Some(2));

    // W = span(e1) is not invariant under a generic pair: found by the numerics
    let generic = write_config(
        tmp.path(),
        "generic.json",
        r#"{"n": 100, "seed": 1, "ensemble": {"builder": "gaussian", "dim": 2, "atoms": 2, "seed": 1}, "block": {"coordinate": 1}}"#,
    );
    assert_eq!(code(&["drift", "--config", &generic, "--out", out], None), Some(3));

    let acc = write_config(tmp.path(), "acc.json", r#"{"seed": 1, "criteria": [1, 6]}"#);
    let o = projlift(&["acceptance", "--config", &acc, "--out", out], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
}

#[test]
fn ensemble_file_is_inlined_into_the_report() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "ens.json", r#"{"builder": "two-block", "w": -0.2, "q": 0.1}"#);
    let cfg = write_config(tmp.path(), "c.json", r#"{"n": 500, "reps": 2, "seed": 2, "ensemble": "ens.json"}"#);
    let out = tmp.path().join("out");
    let o = projlift(&["fkh", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["config"]["ensemble"]["builder"], "two-block");
    assert_eq!(r["result"]["fkh"]["exponents"].as_array().unwrap().len(), 2);
}
