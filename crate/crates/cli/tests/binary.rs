use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scene(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contactdiff")).args(args).output().unwrap()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_trajectory_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", path(&scene("thin_wall")), "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    assert_eq!(summary["max_penetration_m"], 0.0);
    assert_eq!(summary["collisions"], 1);
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 102);
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["rows"].as_array().unwrap().len(), 101);
}

#[test]
fn no_ccd_tunnels_through_the_wall() {
    let o = run(&["simulate", "--no-ccd", path(&scene("thin_wall"))]);
    assert!(o.status.success());
    let summary = stdout_json(&o);
    assert_eq!(summary["collisions"], 0);
    assert!(summary["final_q"][0].as_f64().unwrap() > 1.0);
}

#[test]
fn gradcheck_reports_and_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gradcheck", path(&scene("bounce")), "--out", path(dir.path())]);
    assert!(o.status.success());
    let report = stdout_json(&o);
    let dy = report["entries"].as_array().unwrap().iter().find(|e| e["param"] == "q[1]").unwrap();
    assert!((dy["analytic"].as_f64().unwrap() + 1.0).abs() <= 1e-6);
    assert!((dy["numeric"].as_f64().unwrap() + 1.0).abs() <= 1e-6);
    assert!(dir.path().join("fd_report.json").exists());

    assert!(run(&["gradcheck", path(&scene("pendulum"))]).status.success());

    let o = run(&["gradcheck", path(&scene("grazing"))]);
    assert!(o.status.success());
    let report = stdout_json(&o);
    assert!(report["boundary"].as_bool().unwrap() || report["grazing"].as_bool().unwrap());
}

#[test]
fn legacy_push_exits_with_validation_failure() {
    let o = run(&["experiment", "push", path(&scene("push"))]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["experiment", "push", "--legacy-maxstep", path(&scene("push"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout_json(&o)["lcp_failures"].as_u64().unwrap() >= 1);
}

#[test]
fn optimize_writes_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["optimize", "two-ball", path(&scene("two_ball")), "--epochs", "5", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("zero gravity"));
    let epochs = std::fs::read_to_string(dir.path().join("epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 6);
    let summary = stdout_json(&o);
    assert!(summary["error_m"].as_f64().unwrap() < 0.25);
}

#[test]
fn lcp_solve_and_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.txt");
    std::fs::write(&file, "2\n1 0\n0 1\n-1 0.5\nfriction 1 0 0.5\n").unwrap();
    let o = run(&["lcp", "solve", path(&file), "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_json(&o);
    assert_eq!(r["valid"], true);
    assert!((r["f"][0].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((r["f"][1].as_f64().unwrap() + 0.5).abs() < 1e-12);
    assert!(dir.path().join("solution.json").exists());

    std::fs::write(&file, "2\n1 0\n0 x\n").unwrap();
    let o = run(&["lcp", "solve", path(&file)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn malformed_scene_exits_with_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.json");
    std::fs::write(&file, "{\n  \"name\": \"bad\",\n  \"dt_s\": ,\n}").unwrap();
    let o = run(&["simulate", path(&file)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.json:3:"));
}
