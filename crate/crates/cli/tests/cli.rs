use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn handsoff(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handsoff"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, contents).unwrap();
    p
}

fn csv_column(path: impl AsRef<Path>, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

const SCALAR: &str = r#"{"system": {"A": [[-1]], "B": [[-1]]}, "x0": [1], "T": 2, "N": 400, "objective": "l1"}"#;

#[test]
fn solve_matches_closed_form_support() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "scalar.json", SCALAR);
    let out = handsoff(&["solve", "--config", "scalar.json", "--out", "res/scalar"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let u = csv_column(dir.path().join("res/scalar.csv"), "u_1");
    let dt = 2.0 / 400.0;
    // The last row repeats the final control value.
    let active = u[..400].iter().filter(|v| v.abs() > 1e-6).count() as f64 * dt;
    let tau = (2f64.exp() - 1.0).ln();
    assert!((active - (2.0 - tau)).abs() <= 2.0 * dt, "{active}");
    let cert = read_json(dir.path().join("res/scalar.json"));
    assert_eq!(cert["status"], "Optimal");
}

#[test]
fn solve_four_state_mixed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
        "system": {"A": [[0,-1,0,0],[1,0,0,0],[0,1,0,0],[0,0,1,0]], "B": [[2],[0],[0],[0]]},
        "x0": [1, 1, 1, 1], "T": 10, "N": 500, "objective": "l1"
    }"#;
    write(dir.path(), "cfg.json", cfg);
    let out = handsoff(&["solve", "--config", "cfg.json", "--objective", "l1l2", "--out", "four"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let cert = read_json(dir.path().join("four.json"));
    assert!(cert["certificates"]["terminal_error"].as_f64().unwrap() <= 1e-6);
    assert_eq!(stdout_json(&out)["objective"], "l1l2");
}

#[test]
fn zero_initial_state_gives_zero_control() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "z.json", &SCALAR.replace("\"x0\": [1]", "\"x0\": [0]"));
    let out = handsoff(&["solve", "--config", "z.json", "--out", "z"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(csv_column(dir.path().join("z.csv"), "u_1").iter().all(|&v| v == 0.0));
}

#[test]
fn infeasible_solve_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "short.json", &SCALAR.replace("\"T\": 2", "\"T\": 0.3"));
    let out = handsoff(&["solve", "--config", "short.json", "--out", "short"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout_json(&out)["status"], "infeasible");
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.json", &SCALAR.replace("\"N\": 400", "\"N\": -4"));
    let out = handsoff(&["solve", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`N`"), "{err}");
    let missing = handsoff(&["solve", "--config", "nowhere.json"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
    let usage = handsoff(&["solve"], dir.path());
    assert_eq!(usage.status.code(), Some(1));
}

#[test]
fn mintime_queries() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "scalar.json", SCALAR);
    let out = handsoff(&["mintime", "--config", "scalar.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let t = stdout_json(&out)["T_star"].as_f64().unwrap();
    assert!((t - 2f64.ln()).abs() <= 1e-3, "{t}");
    let zero = handsoff(&["mintime", "--config", "scalar.json", "--x0", "0"], dir.path());
    assert_eq!(stdout_json(&zero)["T_star"], 0.0);
    write(dir.path(), "unstable.json", r#"{"plant": {"scalar": {"a": 1.0}}}"#);
    let out = handsoff(&["mintime", "--config", "unstable.json", "--x0", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout_json(&out)["status"], "unreachable");
    let inside = handsoff(&["mintime", "--config", "unstable.json", "--x0", "-0.5"], dir.path());
    let t = stdout_json(&inside)["T_star"].as_f64().unwrap();
    assert!((t - 2f64.ln()).abs() <= 1e-3, "{t}");
}

#[test]
fn simulate_respects_rate_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(handsoff(&["demo", "scalar-stable", "--out", "d"], dir.path()).status.code(), Some(0));
    for seed in ["3", "11"] {
        let a = handsoff(&["simulate", "--config", "d.config.json", "--seed", seed, "--out", "a"], dir.path());
        let b = handsoff(&["simulate", "--config", "d.config.json", "--seed", seed, "--out", "b"], dir.path());
        assert_eq!(a.status.code(), Some(0));
        assert!(stdout_json(&a)["measured_rate"].as_f64().unwrap() <= 0.6);
        assert_eq!(a.stdout, b.stdout);
        for suffix in [".csv", ".events.jsonl", ".report.json", ".summary.json"] {
            let fa = fs::read(dir.path().join(format!("a{suffix}"))).unwrap();
            let fb = fs::read(dir.path().join(format!("b{suffix}"))).unwrap();
            assert!(fa == fb, "{suffix} differs for seed {seed}");
        }
        assert_eq!(read_json(dir.path().join("a.manifest.json"))["seed"], seed.parse::<u64>().unwrap());
    }
}

#[test]
fn worst_case_samples_stay_within_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let out = handsoff(&["demo", "scalar-worstcase", "--out", "w"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let cfg = read_json(dir.path().join("w.config.json"));
    assert_eq!(cfg["disturbance"]["type"], "worst_case_constant");
    assert_eq!(cfg["delta"], 1.0);
    let gamma = read_json(dir.path().join("w.report.json"))["gamma"].as_f64().unwrap();
    let summary = read_json(dir.path().join("w.summary.json"));
    assert!(summary["max_sampled_norm_after_first"].as_f64().unwrap() <= gamma + 1e-6);
    // Zero control with d = 1 holds the state at 1.
    let x = csv_column(dir.path().join("w.zero.csv"), "x_1");
    assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-9));
}

#[test]
fn demo_configs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(handsoff(&["demo", "fourstate-l1l2"], dir.path()).status.code(), Some(0));
    let cfg = read_json(dir.path().join("fourstate-l1l2.config.json"));
    assert_eq!(cfg["x0"], serde_json::json!([1.0, 1.0, 1.0, 1.0]));
    assert_eq!(cfg["T"], 10.0);
    assert_eq!(cfg["lambda"], serde_json::json!([1.0]));
    assert_eq!(cfg["theta"], serde_json::json!([1.0]));
    assert_eq!(cfg["objective"], "l1l2");
    assert!(dir.path().join("fourstate-l1l2.l1.csv").exists());

    assert_eq!(handsoff(&["demo", "scalar-nonlinear-unstable"], dir.path()).status.code(), Some(0));
    let cfg = read_json(dir.path().join("scalar-nonlinear-unstable.config.json"));
    assert_eq!(cfg["plant"]["scalar"]["a"], 1.0);
    assert_eq!(cfg["plant"]["scalar"]["kind"], "nonlinear_sin");
    assert_eq!(cfg["x0"], serde_json::json!([0.25]));
    assert_eq!(cfg["r"], 0.6);

    let unknown = handsoff(&["demo", "scalar"], dir.path());
    assert_eq!(unknown.status.code(), Some(1));
}

#[test]
fn escaped_episode_exits_3_with_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"plant": {"scalar": {"a": 1.0}}, "x0": [0.9], "r": 0.6, "T_min": 0.1, "delta": 0.5,
        "disturbance": {"type": "worst_case_constant", "direction": [1.0]}, "total_time": 10}"#;
    write(dir.path(), "esc.json", cfg);
    let out = handsoff(&["simulate", "--config", "esc.json", "--out", "esc"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stdout_json(&out)["status"], "escaped");
    for suffix in [".csv", ".events.jsonl", ".report.json", ".summary.json", ".manifest.json"] {
        assert!(dir.path().join(format!("esc{suffix}")).exists(), "{suffix}");
    }
}

#[test]
fn manifest_hash_matches_config_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "scalar.json", SCALAR);
    handsoff(&["solve", "--config", "scalar.json", "--out", "m"], dir.path());
    let manifest = read_json(dir.path().join("m.manifest.json"));
    let expected = hex::encode(Sha256::digest(fs::read(path).unwrap()));
    assert_eq!(manifest["config"]["sha256"], expected);
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["outputs"], serde_json::json!(["m.csv", "m.json"]));
    assert!(manifest["wall_time"].as_f64().unwrap() >= 0.0);
}

#[test]
fn demos_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["scalar-stable", "scalar-worstcase", "scalar-nonlinear-stable", "scalar-nonlinear-unstable", "fourstate-l1l2"] {
        let a = handsoff(&["demo", name, "--seed", "7", "--out", &format!("a/{name}")], dir.path());
        let b = handsoff(&["demo", name, "--seed", "7", "--out", &format!("b/{name}")], dir.path());
        assert_eq!(a.status.code(), Some(0), "{name}");
        assert_eq!(a.stdout, b.stdout);
        let ma = read_json(dir.path().join(format!("a/{name}.manifest.json")));
        let mb = read_json(dir.path().join(format!("b/{name}.manifest.json")));
        assert_eq!(ma["config"], mb["config"]);
        for out in ma["outputs"].as_array().unwrap() {
            let pa = dir.path().join(out.as_str().unwrap());
            let pb = dir.path().join(out.as_str().unwrap().replacen("a/", "b/", 1));
            assert!(fs::read(&pa).unwrap() == fs::read(&pb).unwrap(), "{}", pa.display());
        }
    }
}

#[test]
fn sweep_runs_independent_streams() {
    let dir = tempfile::tempdir().unwrap();
    handsoff(&["demo", "scalar-stable", "--out", "d"], dir.path());
    let out = handsoff(&["simulate", "--config", "d.config.json", "--sweep", "6", "--out", "sw"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let sweep = read_json(dir.path().join("sw.sweep.json"));
    let rates: Vec<f64> = sweep["episodes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["result"]["measured_rate"].as_f64().unwrap())
        .collect();
    assert_eq!(rates.len(), 6);
    assert!(rates.iter().all(|&r| r <= 0.6));
    assert!(rates.windows(2).any(|w| w[0] != w[1]));
    let again = handsoff(&["simulate", "--config", "d.config.json", "--sweep", "6", "--out", "sw2"], dir.path());
    assert_eq!(out.stdout, again.stdout);
}
