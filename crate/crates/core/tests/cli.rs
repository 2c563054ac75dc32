mod common;

use std::fs;
use std::process::Command;

use v6iot::model::Protocol;

fn v6iot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_v6iot"))
}

#[test]
fn run_writes_report_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_campaign(dir.path(), 2, &Protocol::ALL, &[], "out");
    let out = v6iot().arg("--config").arg(&cfg).arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("out/report/summary.csv")).unwrap();
    assert!(summary.starts_with("protocol,valid,"));
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn missing_blocklist_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_campaign(dir.path(), 2, &[Protocol::Mqtt], &[], "out");
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    json["blocklist"] = "absent.txt".into();
    fs::write(&cfg, json.to_string()).unwrap();
    let out = v6iot().arg("--config").arg(&cfg).arg("scan").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.txt"));
    assert!(!dir.path().join("out/probes.jsonl").exists());
}

#[test]
fn dry_run_prints_plan_without_probing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_campaign(dir.path(), 2, &[Protocol::Mqtt], &[], "out");
    let out = v6iot().args(["--dry-run", "--config"]).arg(&cfg).arg("scan").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<serde_json::Value> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines.len() >= 1000 * 8);
    assert!(!dir.path().join("out/probes.jsonl").exists());
}

#[test]
fn rng_seed_override_changes_the_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_campaign(dir.path(), 2, &[Protocol::Mqtt], &[], "out");
    let plan = |seed: &str| {
        let out = v6iot().args(["--dry-run", "--rng-seed", seed, "--config"]).arg(&cfg).arg("scan").output().unwrap();
        String::from_utf8(out.stdout).unwrap()
    };
    assert_eq!(plan("1"), plan("1"));
    assert_ne!(plan("1"), plan("2"));
}

#[test]
fn report_on_an_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = v6iot().arg("report").arg("--dir").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let summary = fs::read_to_string(dir.path().join("report/summary.csv")).unwrap();
    assert!(summary.contains("MQTT,0,0,0,0,0,0,0"));
}

#[test]
fn harness_build_writes_truth() {
    let dir = tempfile::tempdir().unwrap();
    let spec = common::spec(3, &Protocol::ALL);
    let spec_path = dir.path().join("u.json");
    fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let truth = dir.path().join("truth.jsonl");
    let out = v6iot().args(["harness", "build", "--spec"]).arg(&spec_path).arg("--truth").arg(&truth).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&truth).unwrap().lines().count(), 1000);
}
