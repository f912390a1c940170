use std::path::Path;
use std::process::{Command, Output};

fn stp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stp")).args(args).current_dir(dir).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn run_replay_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(&stp(&["run", "--scenario", "contact_form", "--seed", "2", "--out", "t.jsonl"], d));
    assert!(out.contains("success=true"), "{out}");
    assert!(d.join("t.timing.jsonl").exists());
    let out = ok(&stp(&["replay", "--trajectory", "t.jsonl"], d));
    assert!(out.contains(", 0 divergences"), "{out}");
    let json = ok(&stp(&["report", "--in", "t.jsonl"], d));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["episodes"][0]["scenario"], "contact_form");
    let csv = ok(&stp(&["report", "--in", ".", "--format", "csv"], d));
    assert!(csv.lines().count() >= 2);
}

#[test]
fn beliefs_off_fails_the_crash_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&stp(&["run", "--scenario", "contact_form", "--belief", "off"], dir.path()));
    assert!(out.contains("success=false"), "{out}");
    assert!(dir.path().join("contact_form__program_guided__beliefs_off__seed0.jsonl").exists());
}

#[test]
fn suite_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("suite.json"),
        r#"{"scenarios": ["calendar_add_3"], "strategies": ["program_guided", "full_history"], "seeds": [0, 1]}"#,
    )
    .unwrap();
    let out = ok(&stp(&["suite", "--config", "suite.json", "--out", "runs"], d));
    assert!(out.contains("wrote 4 trajectories"), "{out}");
    assert!(d.join("runs/report.json").exists() && d.join("runs/report.csv").exists());
    let out = ok(&stp(&["curve", "--in", "runs", "--out", "curve.csv", "--steps", "10"], d));
    assert!(out.contains("wrote 20 rows"), "{out}");
    let csv = std::fs::read_to_string(d.join("curve.csv")).unwrap();
    assert!(csv.starts_with("step,strategy,mean,min,max"), "{csv}");
}

#[test]
fn parse_prints_kinds_and_edges() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.stp"), "Set {n} to 2\nRepeat {n} times:\n    Tap \"OK\"\nAnswer {n}\n").unwrap();
    let out = ok(&stp(&["parse", "--stp", "p.stp"], dir.path()));
    assert!(out.contains("2        repeat_n") && out.contains("2.1      action_step"), "{out}");
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = stp(&["run", "--scenario", "nope"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
    let out = stp(&["run", "--scenario", "note_reply", "--backend", "http"], dir.path());
    assert!(!out.status.success());
}
