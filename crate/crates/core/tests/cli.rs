use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use etpt::cli::{compare_cases, validate, CliError};
use etpt::scenario::Scenario;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn etpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etpt")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn run_into(scenario: &Path, out: &Path) -> Output {
    etpt(&["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(&scenario_path("desk.toml"), dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    for f in ["trajectory.csv", "events.csv", "metrics.json", "scenario.toml"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "t,layer,agent,objective,var,value");
    let events = fs::read_to_string(dir.path().join("events.csv")).unwrap();
    assert_eq!(events.lines().next().unwrap(), "t,layer,agent,objective,broadcast_value");
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["total"].as_u64().unwrap() > 0);
}

#[test]
fn saved_scenario_reproduces_the_run() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    assert!(run_into(&scenario_path("desk.toml"), first.path()).status.success());
    assert!(run_into(&first.path().join("scenario.toml"), second.path()).status.success());
    for f in ["trajectory.csv", "events.csv"] {
        let a = fs::read(first.path().join(f)).unwrap();
        let b = fs::read(second.path().join(f)).unwrap();
        assert!(a == b, "{f} differs after the round trip");
    }
}

#[test]
fn oracle_prints_the_compromise() {
    let out = etpt(&["oracle", "--scenario", scenario_path("desk.toml").to_str().unwrap()]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&text(&out.stdout)).unwrap();
    let x = doc["report"]["compromise"]["x_star"].as_array().unwrap();
    assert!((x[0].as_f64().unwrap() - 4.43654).abs() < 1e-4);
}

#[test]
fn duplicated_case_gives_identical_rows() {
    let s = Scenario::load(&scenario_path("desk.toml")).unwrap();
    let rows = compare_cases(&s, &["case1".into(), "case1".into()]).unwrap();
    assert_eq!(rows[0], rows[1]);
}

#[test]
fn compare_needs_two_cases() {
    let s = Scenario::load(&scenario_path("desk.toml")).unwrap();
    assert!(matches!(compare_cases(&s, &["case1".into()]), Err(CliError::Usage(_))));
    assert!(matches!(compare_cases(&s, &[]), Err(CliError::Usage(_))));
    let out = etpt(&["compare", "--scenario", scenario_path("desk.toml").to_str().unwrap(), "--case", "case2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_case_is_an_error() {
    let out = etpt(&["run", "--scenario", scenario_path("desk.toml").to_str().unwrap(), "--case", "case9"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("case"));
}

#[test]
fn load_failure_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(scenario_path("desk.toml")).unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, base.replacen("step = ", "step = -", 1)).unwrap();
    let out = etpt(&["run", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("integrator.step"), "{}", text(&out.stderr));
}

#[test]
fn validate_rejects_trigger_constants_at_the_scenario_check() {
    let mut s = Scenario::load(&scenario_path("desk.toml")).unwrap();
    // alpha must exceed (1 - delta)/phi = 1
    s.etm.compromise.alpha = 0.5;
    let report = validate(&s);
    assert!(!report.passed());
    assert_eq!(report.checks.len(), 1);
    assert!(!report.get("scenario").unwrap().passed);
}

#[test]
fn validate_flags_step_doubling_on_a_coarse_grid() {
    let mut s = Scenario::load(&scenario_path("desk.toml")).unwrap();
    s.integrator.step = 0.1;
    let report = validate(&s);
    assert!(!report.get("step doubling").unwrap().passed, "{report}");
}

#[test]
fn validate_exit_code_reflects_the_report() {
    let path = scenario_path("desk.toml");
    let out = etpt(&["validate", "--scenario", path.to_str().unwrap(), "--step", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stdout).contains("FAIL step doubling"));
}
