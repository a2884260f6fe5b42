use std::path::Path;
use std::process::{Command, Output};

use topodeg::degree::Method;
use topodeg_cli::{ConfigError, RunConfig};

fn topodeg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topodeg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn prefix(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn lines(path: &str) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn degree_config_has_three_methods() {
    let cfg = RunConfig::from_args([
        "topodeg", "degree", "--map", "zpow:2", "--domain", "disk:1", "--y", "0.25,0", "--method", "all",
    ])
    .unwrap();
    assert_eq!(cfg.methods, Method::ALL.to_vec());
    assert_eq!(cfg.y, vec![vec![0.25, 0.0]]);
}

#[test]
fn low_resolution_is_a_usage_error() {
    let err = RunConfig::from_args(["topodeg", "degree", "--map", "identity", "--res", "4"]).unwrap_err();
    assert!(matches!(err, ConfigError::Usage(_)));
    let out = topodeg(&["degree", "--map", "identity", "--res", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(topodeg(&["degree", "--map", "identity", "--bogus"]).status.code(), Some(2));
}

#[test]
fn config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_args([
        "topodeg", "vmodegree", "--map", "zpow:2", "--y", "0.25,0", "--res", "64", "--seed", "9",
    ])
    .unwrap();
    let text = cfg.to_json();
    assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    let path = dir.path().join("run.json");
    std::fs::write(&path, &text).unwrap();
    let again = RunConfig::from_args(["topodeg", "--config", path.to_str().unwrap()]).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn degree_run_reports_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = prefix(dir.path(), "deg");
    let run = topodeg(&[
        "degree", "--map", "zpow:2", "--domain", "disk:1", "--y", "0.25,0", "--method", "all", "--res", "96", "--out", &out,
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stdout));
    let records = lines(&format!("{out}.jsonl"));
    assert_eq!(records[0]["topodeg"], topodeg::VERSION);
    assert_eq!(records.len(), 4);
    for r in &records[1..] {
        assert_eq!(r["value"], 2);
    }
}

#[test]
fn escan_writes_a_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let out = prefix(dir.path(), "e");
    let run = topodeg(&["escan", "--map", "identity", "--res", "32", "--y-res", "64", "--out", &out]);
    assert_eq!(run.status.code(), Some(0));
    let bytes = std::fs::read(format!("{out}.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5\n# topodeg "));
    let csv = std::fs::read_to_string(format!("{out}.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("# config {"));
}

#[test]
fn cov_with_overlapping_bump_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let out = prefix(dir.path(), "cov");
    let run = topodeg(&["cov", "--map", "identity", "--y", "1,0", "--res", "32", "--out", &out]);
    assert_eq!(run.status.code(), Some(1));
    let records = lines(&format!("{out}.jsonl"));
    assert_eq!(records[1]["error"], "support");
}

#[test]
fn io_failure_exits_three() {
    let run = topodeg(&["zoo", "list", "--out", "/dev/null/zoo"]);
    assert_eq!(run.status.code(), Some(3));
}

#[test]
fn zoo_list_prints_the_catalogue() {
    let run = topodeg(&["zoo", "list"]);
    assert_eq!(run.status.code(), Some(0));
    let text = String::from_utf8(run.stdout).unwrap();
    assert_eq!(text.lines().count(), topodeg::mapzoo::catalogue().len());
    for l in text.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["name"].is_string());
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let out = prefix(dir.path(), &format!("b{i}"));
            let run = topodeg(&["bmo", "--map", "angle", "--res", "32", "--seed", "11", "--out", &out]);
            assert_eq!(run.status.code(), Some(0));
            let mut bytes = std::fs::read(format!("{out}.csv")).unwrap();
            bytes.extend(std::fs::read(format!("{out}.jsonl")).unwrap());
            bytes
        })
        .collect();
    // The prefixes differ, and the configuration echo records them.
    let strip = |b: &[u8], i: usize| String::from_utf8_lossy(b).replace(&format!("b{i}"), "b");
    assert_eq!(strip(&runs[0], 0), strip(&runs[1], 1));
}
