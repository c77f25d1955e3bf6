use std::path::Path;
use std::process::Command;

use evolvebm::io;
use serde_json::Value;

fn evolvebm(args: &[&str], env_seed: Option<&str>) -> (i32, Value) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_evolvebm"));
    cmd.args(args).env_remove("EVOLVEBM_SEED");
    if let Some(s) = env_seed {
        cmd.env("EVOLVEBM_SEED", s);
    }
    let out = cmd.output().unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    let v = if stdout.trim().is_empty() { Value::Null } else { serde_json::from_str(&stdout).unwrap() };
    (out.status.code().unwrap(), v)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SCALAR: [&str; 4] = ["--family", "scalar1d", "--params", "a=1,b=1"];

#[test]
fn minimizer_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let (code, min) = evolvebm(&[&["minimize", "--x1", "1", "--out-dir", d][..], &SCALAR].concat(), None);
    assert_eq!(code, 0);
    assert_eq!(min["converged"], Value::Bool(true));
    let a = min["action"]["value"].as_f64().unwrap();
    assert!((a - 0.5 / std::f64::consts::LN_2).abs() < 1e-4);

    let path = dir.path().join("minimize_path.csv");
    let (code, act) = evolvebm(&[&["action", "--path", s(&path)][..], &SCALAR].concat(), None);
    assert_eq!(code, 0);
    assert_eq!(act["value"].as_f64().unwrap(), a);

    let (code, anti) = evolvebm(&[&["antidevelop", "--path", s(&path), "--out-dir", d][..], &SCALAR].concat(), None);
    assert_eq!(code, 0);
    assert!((anti["control_action"].as_f64().unwrap() - a).abs() < 1e-8);
    let control = dir.path().join("antidevelop_control.csv");
    let (code, dev) = evolvebm(&[&["develop", "--control", s(&control), "--out-dir", d][..], &SCALAR].concat(), None);
    assert_eq!(code, 0);
    assert!((dev["end"][0].as_f64().unwrap() - 1.0).abs() < 1e-5);

    let read = |p: &Path| io::path_from_table(&io::Table::read(p).unwrap(), p).unwrap();
    let back = read(&dir.path().join("develop_path.csv"));
    let orig = read(&path);
    assert!(back.sup_distance(&orig) < 1e-5);
}

#[test]
fn config_file_merges_with_flags_and_seed_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"family": "scalar1d", "params": {"a": 1, "b": 1}, "n_steps": 200, "n_samples": 50}"#).unwrap();
    let flags = ["simulate", "--family", "scalar1d", "--params", "a=1,b=0", "--n-steps", "200", "--n-samples", "50"];

    let (code, from_cfg) = evolvebm(&["simulate", "--config", s(&cfg), "--params", "b=0", "--seed", "9"], None);
    assert_eq!(code, 0);
    let (_, from_flags) = evolvebm(&[&flags[..], &["--seed", "9"]].concat(), None);
    assert_eq!(from_cfg, from_flags);

    // the flag beats the environment, which beats the default
    let (_, env) = evolvebm(&flags, Some("9"));
    assert_eq!(env, from_flags);
    let (_, both) = evolvebm(&[&flags[..], &["--seed", "1"]].concat(), Some("9"));
    assert_ne!(both, from_flags);
    assert_eq!(both["seed"], Value::from(1));
}

#[test]
fn errors_map_to_exit_codes() {
    let (code, _) = evolvebm(&["simulate", "--family", "mobius"], None);
    assert_eq!(code, 2);
    let (code, _) = evolvebm(&[&["action", "--path", "/nonexistent/p.csv"][..], &SCALAR].concat(), None);
    assert_eq!(code, 4);
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("f");
    std::fs::write(&file, "").unwrap();
    // a regular file where a directory is needed
    let (code, _) = evolvebm(&[&["minimize", "--x1", "1", "--out-dir", s(&file.join("x"))][..], &SCALAR].concat(), None);
    assert_eq!(code, 4);
}
