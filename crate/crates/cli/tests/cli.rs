use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_semicontract");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn without_timestamp(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timestamp");
    v
}

fn bundled() -> Value {
    serde_json::from_str(semicontract::bundled::TWO_MODE_JSON).unwrap()
}

fn write_config(dir: &Path, v: &Value) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn analyze_bundled_reports_bounds() {
    let out = run(&["analyze"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out);
    assert_eq!(r["pass"], true);
    for b in r["family"]["bounds"].as_array().unwrap() {
        assert!((b["tau_lower"].as_f64().unwrap() - 0.1584).abs() < 1e-4);
        assert!((b["tau_upper"].as_f64().unwrap() - 0.3960).abs() < 1e-4);
    }
    for verdict in r["subspaces"][0]["conditions"].as_array().unwrap() {
        for key in ["value", "bound", "margin", "tolerance"] {
            assert!(verdict.get(key).is_some(), "{verdict}");
        }
    }
}

#[test]
fn analyze_is_deterministic_across_thread_counts() {
    let a = run(&["analyze", "--seed", "3"]);
    let b = Command::new(BIN).args(["analyze", "--seed", "3"]).env("SEMICONTRACT_THREADS", "1").output().unwrap();
    assert_eq!(without_timestamp(json(&a)), without_timestamp(json(&b)));
}

#[test]
fn search_weights_recovers_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: Value = serde_json::from_str(semicontract::bundled::TWO_MODE_UNWEIGHTED_JSON).unwrap();
    let path = write_config(dir.path(), &cfg);
    let out = run(&["analyze", "--config", &path, "--search-weights"]);
    assert_eq!(out.status.code(), Some(0));
    let w = &json(&out)["subspaces"][0]["weights"];
    let ratio = w[1]["scalar"].as_f64().unwrap() / w[0]["scalar"].as_f64().unwrap();
    assert!((ratio - 1.6084).abs() < 1e-3, "{ratio}");

    let missing = run(&["analyze", "--config", &path]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn single_subspace_is_not_separating() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bundled();
    cfg["subspaces"].as_array_mut().unwrap().truncate(1);
    cfg["certificates"].as_array_mut().unwrap().truncate(1);
    let path = write_config(dir.path(), &cfg);
    let out = run(&["analyze", "--config", &path]);
    assert_eq!(out.status.code(), Some(1));
    let r = json(&out);
    assert_eq!(r["family"]["separating"]["pass"], false);
    assert!(String::from_utf8_lossy(&out.stderr).contains("separating"));
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\"dimension\": 2").unwrap();
    let out = run(&["analyze", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn signal_gen_and_check() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let gen = run(&["signal", "gen", "--periodic", "0.35", "--horizon", "10", "--out", d]);
    assert_eq!(gen.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&gen.stderr).contains("29 events, 28 switches"));
    let csv = dir.path().join("signal.csv");
    let rows = std::fs::read_to_string(&csv).unwrap().lines().filter(|l| !l.starts_with('#') && !l.starts_with("time")).count();
    assert_eq!(rows, 29);

    let check = run(&["signal", "check", "--signal", csv.to_str().unwrap()]);
    assert_eq!(check.status.code(), Some(0), "{}", String::from_utf8_lossy(&check.stderr));
    let r = json(&check);
    assert_eq!(r["pass"], true);
    assert!(r["modes"][0]["tightest"]["tau_lower"].is_number());

    let slow = tempfile::tempdir().unwrap();
    run(&["signal", "gen", "--periodic", "1.0", "--out", slow.path().to_str().unwrap()]);
    let bad = run(&["signal", "check", "--signal", slow.path().join("signal.csv").to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("activation 0"));
}

#[test]
fn signal_check_rejects_infeasible_bounds() {
    let dir = tempfile::tempdir().unwrap();
    run(&["signal", "gen", "--periodic", "0.35", "--out", dir.path().to_str().unwrap()]);
    let csv = dir.path().join("signal.csv");
    let out = run(&["signal", "check", "--signal", csv.to_str().unwrap(), "--tau-lower", "1=0.5", "--tau-upper", "1=0.4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_traces_and_flags_violations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let ok = run(&["simulate", "--periodic", "0.35", "--plot", "--out", d]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    for f in ["trajectory_a.csv", "trajectory_b.csv", "distance.csv", "projected.csv", "signal.csv", "report.json", "distance.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let projected = std::fs::read_to_string(dir.path().join("projected.csv")).unwrap();
    assert!(projected.starts_with("time,norm_full,norm_V1,norm_V2\n"));

    let neg = tempfile::tempdir().unwrap();
    let bad = run(&["simulate", "--periodic", "1.0", "--out", neg.path().to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bounds violated by signal"));
}

#[test]
fn reproduce_seeds_change_only_the_random_signal() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&["reproduce", "--seed", "7", "--out", a.path().to_str().unwrap()]);
    run(&["reproduce", "--seed", "8", "--out", b.path().to_str().unwrap()]);
    let read = |d: &Path, f: &str| std::fs::read_to_string(d.join(f)).unwrap();
    let (ra, rb): (Value, Value) = (serde_json::from_str(&read(a.path(), "report.json")).unwrap(), serde_json::from_str(&read(b.path(), "report.json")).unwrap());
    assert_eq!(ra["subspaces"], rb["subspaces"]);
    assert_eq!(ra["family"], rb["family"]);
    assert_ne!(read(a.path(), "random/signal.csv"), read(b.path(), "random/signal.csv"));
    assert_eq!(read(a.path(), "periodic/signal.csv"), read(b.path(), "periodic/signal.csv"));
    assert!(a.path().join("periodic/distance.svg").exists());
}

#[test]
fn reproduce_exit_code_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["reproduce", "--out", dir.path().to_str().unwrap()]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let pass = report["pass"].as_bool().unwrap();
    assert_eq!(out.status.code(), Some(if pass { 0 } else { 1 }));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("FAIL")).count() == 0, pass);
}

#[test]
fn strict_reproduce_reports_open_bounds() {
    let dir = tempfile::tempdir().unwrap();
    run(&["reproduce", "--strict", "--out", dir.path().to_str().unwrap()]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["family"]["inclusive"], false);
    let rel = report["family"]["bounds"][0]["relation"].as_str().unwrap();
    assert!(rel.contains('>') && rel.contains('<'), "{rel}");
}
