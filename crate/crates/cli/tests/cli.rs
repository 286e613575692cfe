use std::path::Path;
use std::process::{Command, Output};

use cdqmc::cdalg::Plan;

fn cdqmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdqmc")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn plan_prints_valid_json() {
    let o = cdqmc(&["plan", "--weights", "finite-order:beta=2,a=3", "--epsilon", "0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let plan = Plan::from_json(&stdout(&o)).unwrap();
    assert!(plan.allocations.iter().all(|a| a.set.len() <= 2));
    assert_eq!(plan.constants.epsilon, 0.5);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "weights = \"finite-order:beta=1,a=3\"\nepsilon = 0.5\nbase = 3\n").unwrap();
    let cfg = cfg.to_str().unwrap();

    let from_file = Plan::from_json(&stdout(&cdqmc(&["--config", cfg, "plan"]))).unwrap();
    assert_eq!(from_file.template.base, 3);
    assert!(from_file.allocations.iter().all(|a| a.set.len() <= 1));

    let overridden = Plan::from_json(&stdout(&cdqmc(&["--config", cfg, "plan", "--base", "2", "--epsilon", "0.3"]))).unwrap();
    assert_eq!(overridden.template.base, 2);
    assert_eq!(overridden.constants.epsilon, 0.3);
    assert!(overridden.allocations.iter().all(|a| a.set.len() <= 1));
}

#[test]
fn study_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = cdqmc(&[
        "study",
        "--weights",
        "fi-pairs:J=8,a=3",
        "--eps-grid",
        "1,0.5,0.25",
        "--reps",
        "4",
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("study.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("epsilon,cost,sets,d_eps"));
    assert_eq!(lines.count(), 3);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("study.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["seed"], 9);
    assert!(meta["version"].is_string());

    // same seed, same bytes
    let again = dir.path().join("again");
    let o = cdqmc(&[
        "study", "--weights", "fi-pairs:J=8,a=3", "--eps-grid", "1,0.5,0.25", "--reps", "4", "--seed", "9", "--out",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(out.join("study.csv")).unwrap(), std::fs::read(again.join("study.csv")).unwrap());
}

#[test]
fn estimate_reports_each_replication() {
    let dir = tempfile::tempdir().unwrap();
    let o = cdqmc(&[
        "estimate", "--integrand", "constant:v=2", "--epsilon", "0.5", "--reps", "3", "--rule", "mc", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("estimate.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("2.0")));
    assert!(Path::new(&dir.path().join("estimate.json")).exists());
}

#[test]
fn points_are_digit_strings() {
    let o = cdqmc(&["points", "--m", "2", "--dim", "1", "--alpha", "1", "--identity"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "# b=2 m=2 s=1 alpha=1 seed=none\n00\n01\n11\n10\n");
    let a = stdout(&cdqmc(&["points", "--m", "3", "--dim", "2", "--seed", "4"]));
    let b = stdout(&cdqmc(&["points", "--m", "3", "--dim", "2", "--seed", "4"]));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 9);
}

#[test]
fn selftest_passes() {
    let o = cdqmc(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn bad_input_fails_cleanly() {
    for args in [
        vec!["plan", "--weights", "spiral"],
        vec!["plan", "--cost", "cubic"],
        vec!["plan", "--base", "4"],
        vec!["study", "--reps", "1"],
    ] {
        let o = cdqmc(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    }
}
