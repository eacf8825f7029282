use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;
use serde_json::Value;

fn stormbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stormbench")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    stormbench(args).status.code().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = stormbench(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// skill.csv rows; `run` keeps registration order while `score` sorts by id.
fn skill(dir: &Path) -> Vec<String> {
    let mut rows: Vec<String> =
        fs::read_to_string(dir.join("skill.csv")).unwrap().lines().map(str::to_string).collect();
    rows.sort();
    rows
}

fn season(dir: &Path, days: &str) -> String {
    ok(&["gen", "--out", s(dir), "--days", days, "--history-days", "40"]);
    s(&dir.join("config.json")).to_string()
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["run", "--help"]), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["score", "--mode", "ternary", "--forecasts", "f", "--obs", "o"]), 1);
    assert_eq!(code(&["gen", "--out", "/nonexistent", "--base-rates", "0.1,0.2"]), 1);
    assert_eq!(code(&["gen", "--out", "/nonexistent", "--shift-at", "3"]), 1);
}

#[test]
fn data_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&["run", "--config", s(&tmp.path().join("missing.json"))]), 2);
    let cfg = season(tmp.path(), "2");
    assert_eq!(code(&["explain", "--config", &cfg, "--forecaster", "nobody", "--date", "1989-06-01"]), 2);
    fs::write(tmp.path().join("scenarios/1989-06-01.json"), "{ not json").unwrap();
    let out = stormbench(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1989-06-01.json"));
}

#[test]
fn run_then_score_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = season(tmp.path(), "5");
    let out = tmp.path().join("out");
    let table = ok(&["run", "--config", &cfg, "--out", s(&out)]);
    assert!(table.starts_with("forecaster"));
    for f in ["forecasts.csv", "observations.csv", "skill.csv", "ledger.csv", "timings.csv", "briefings/1989-06-05.txt"]
    {
        assert!(out.join(f).exists(), "{f}");
    }
    let rescored = tmp.path().join("rescored");
    let history = tmp.path().join("history.csv");
    let forecasts = out.join("forecasts.csv");
    ok(&[
        "score",
        "--forecasts",
        s(&forecasts),
        "--obs",
        s(&out.join("observations.csv")),
        "--history",
        s(&history),
        "--out",
        s(&rescored),
    ]);
    assert_eq!(skill(&out), skill(&rescored));

    // the raw ledger aggregates to the same table
    let from_ledger = tmp.path().join("ledger");
    ok(&[
        "score",
        "--forecasts",
        s(&forecasts),
        "--obs",
        s(&tmp.path().join("reports.csv")),
        "--history",
        s(&history),
        "--out",
        s(&from_ledger),
    ]);
    assert_eq!(skill(&out), skill(&from_ledger));
}

#[test]
fn score_options_change_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = season(tmp.path(), "4");
    let out = tmp.path().join("out");
    ok(&["run", "--config", &cfg, "--out", s(&out)]);
    let forecasts = out.join("forecasts.csv");
    let obs = out.join("observations.csv");
    let text = ok(&[
        "score",
        "--forecasts",
        s(&forecasts),
        "--obs",
        s(&obs),
        "--exclude-zone",
        "Z1",
        "--mode",
        "multi",
        "--merge-12",
    ]);
    assert!(!text.lines().any(|l| l.split_whitespace().nth(1) == Some("Z1")));
    assert!(text.lines().any(|l| l.split_whitespace().nth(1) == Some("Z2")));
}

#[test]
fn replay_continues_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = season(tmp.path(), "6");
    let full = tmp.path().join("full");
    ok(&["run", "--config", &cfg, "--out", s(&full)]);
    let snapshot = full.join("snapshots/state_1989-06-03.json");
    let replay = tmp.path().join("replay");
    ok(&["replay", "--from-snapshot", s(&snapshot), "--config", &cfg, "--out", s(&replay)]);
    let tail = |dir: &Path| -> Vec<String> {
        fs::read_to_string(dir.join("forecasts.csv"))
            .unwrap()
            .lines()
            .filter(|l| l.as_bytes() > b"1989-06-03~".as_slice() && l.starts_with("1989"))
            .map(str::to_string)
            .collect()
    };
    let want = tail(&full);
    assert!(!want.is_empty());
    assert_eq!(tail(&replay), want);
}

#[test]
fn explain_shows_the_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = season(tmp.path(), "3");
    let text = ok(&["explain", "--config", &cfg, "--forecaster", "willard", "--date", "1989-06-02"]);
    assert!(text.starts_with("willard 1989-06-02 Overall"));
    assert!(text.contains("asked moisture"));
    let z2 = ok(&["explain", "--config", &cfg, "--forecaster", "alps", "--date", "1989-06-02", "--zone", "Z2"]);
    assert!(z2.lines().next().unwrap().contains("Z2"));
    assert_eq!(code(&["explain", "--config", &cfg, "--forecaster", "oci", "--date", "1989-06-02", "--zone", "Z1"]), 2);
}

#[test]
fn divergence_lists_every_forecaster() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["gen", "--out", s(tmp.path()), "--days", "8", "--operators", "3", "--operator-disagreement", "0.6"]);
    let cfg = tmp.path().join("config.json");
    let text = ok(&["divergence", "--config", s(&cfg)]);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("forecaster,comparisons,mean,max"));
    let registered = serde_json::from_str::<Value>(&fs::read_to_string(&cfg).unwrap()).unwrap()["forecasters"]
        .as_array()
        .unwrap()
        .len();
    assert_eq!(lines.count(), registered);
}

#[test]
fn gen_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        ok(&["gen", "--out", s(dir.path()), "--days", "3", "--seed", "8", "--base-rates", "0.1,0.2,0.3,0.4"]);
    }
    for f in ["reports.csv", "history.csv", "scenarios/1989-06-02.json", "config.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn out_of_range_rates_are_usage_errors(bad in prop_oneof![-5.0..-0.001f64, 1.001..5.0f64], at in 0usize..4) {
        let mut rates = vec!["0.2".to_string(); 4];
        rates[at] = bad.to_string();
        let joined = rates.join(",");
        prop_assert_eq!(code(&["gen", "--out", "/nonexistent", "--base-rates", &joined]), 1);
    }
}
