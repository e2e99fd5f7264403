use std::path::Path;
use std::process::{Command, Output};

fn fuhst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuhst")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fuhst(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn scenarios_lists_every_preset() {
    let text = ok(&["scenarios"]);
    assert_eq!(text.lines().count(), 8);
    assert!(text.lines().next().unwrap().starts_with("s1"));
    assert!(text.contains("IPM-100"));
}

#[test]
fn run_preset_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let text = ok(&["run", "--preset", "s4", "--seed", "3", "--mitigation", "mit", "--coordination-log", "--out", p(&out)]);
    assert!(text.starts_with("seed=3 MIT"));
    let csv = std::fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["seed"], 3);
    assert!(out.join("coordination.ndjson").exists());
}

#[test]
fn several_seeds_get_their_own_directories() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["run", "--preset", "s1", "--seeds", "2", "--rounds", "4", "--mitigation", "na", "--out", p(dir.path())]);
    assert!(dir.path().join("seed-0/run.json").exists());
    assert!(dir.path().join("seed-1/rounds.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 2);
}

#[test]
fn config_file_runs_and_unknown_keys_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    let body = "rounds = 3\nattack = { kind = \"sign_flip\" }\nplacement = \"random\"\nmalicious = 2\n\n[graph]\nkind = \"regular\"\nn = 12\nk = 4\n";
    std::fs::write(&cfg, body).unwrap();
    ok(&["run", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    std::fs::write(&cfg, format!("surprise = true\n{body}")).unwrap();
    let out = fuhst(&["run", "--config", p(&cfg), "--out", p(&dir.path().join("o2"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("surprise"));
}

#[test]
fn bad_arguments_are_rejected() {
    assert!(!fuhst(&["run", "--preset", "s1", "--mitigation", "maybe"]).status.success());
    assert!(!fuhst(&["run", "--preset", "s42"]).status.success());
    assert!(!fuhst(&["run"]).status.success());
}

#[test]
fn pretrained_state_can_be_reused() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("det.json");
    ok(&["pretrain", "--seed", "2", "--out", p(&state)]);
    let snapshot: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&state).unwrap()).unwrap();
    assert_eq!(snapshot["format"], "fuhst-detector");
    let text = ok(&["run", "--preset", "s3", "--seed", "2", "--detector-state", p(&state), "--out", p(&dir.path().join("o"))]);
    assert!(text.contains("f1="));
}

#[test]
fn small_sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    std::fs::write(&grid, "trees = [60]\ndepth = [2, 3]\ntau = [0.55]\nwindow = [60]\nseeds = [0]\n").unwrap();
    let text = ok(&["sweep", "--grid", p(&grid), "--out", p(&dir.path().join("sw"))]);
    assert!(text.contains("best: trees=60"));
    let csv = std::fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("sw/best.json").exists());
}
