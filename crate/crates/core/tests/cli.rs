use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbm")).args(args).output().expect("binary runs")
}

fn asset(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join(name).display().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gendata(dir: &Path, n: usize, variance: f64) -> PathBuf {
    let out = dir.join("gen");
    let o = pbm(&["gendata", "--n", &n.to_string(), "--variance", &variance.to_string(), "--seed", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("data.csv")
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = pbm(&["validate", &asset("watertanks.pbl"), "--scenario", &asset("single_stage.pbs")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("9 candidate structures"));

    let bad = dir.path().join("bad.pbl");
    std::fs::write(&bad, "template Tank {").unwrap();
    let o = pbm(&["validate", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.pbl:1:"));

    let o = pbm(&["validate", s(&dir.path().join("missing.pbl"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dump_ast_lists_templates_and_hierarchies() {
    let o = pbm(&["validate", &asset("watertanks.pbl"), "--dump-ast"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["library"]["entity_templates"].as_array().unwrap().len(), 2);
    assert_eq!(v["library"]["process_hierarchies"].as_array().unwrap().len(), 3);
}

#[test]
fn gendata_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = gendata(a.path(), 200, 0.05);
    let db = gendata(b.path(), 200, 0.05);
    assert_eq!(std::fs::read(da).unwrap(), std::fs::read(db).unwrap());
}

#[test]
fn simulate_ground_truth_reproduces_clean_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = gendata(dir.path(), 2500, 0.0);
    let out = dir.path().join("sim");
    let o = pbm(&[
        "simulate",
        "--library",
        &asset("watertanks.pbl"),
        "--scenario",
        &asset("single_stage.pbs"),
        "--data",
        s(&data),
        "--ground-truth",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    for line in text.lines().filter(|l| l.contains("RRMSE full")) {
        let full: f64 = line.split_whitespace().nth(3).unwrap().trim_end_matches(',').parse().unwrap();
        assert!(full < 1e-3, "{line}");
    }
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn missing_data_creates_no_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = pbm(&[
        "identify",
        "--library",
        &asset("watertanks.pbl"),
        "--scenario",
        &asset("single_stage.pbs"),
        "--data",
        s(&dir.path().join("absent.csv")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn identify_artifacts_and_replay_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = gendata(dir.path(), 300, 0.01);
    let run = dir.path().join("run");
    let o = pbm(&[
        "identify",
        "--library",
        &asset("watertanks.pbl"),
        "--scenario",
        &asset("single_stage.pbs"),
        "--data",
        s(&data),
        "--budget",
        "40",
        "--jobs",
        "1",
        "--out",
        s(&run),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "results.txt", "results.json", "results.csv", "series_rank1.csv", "models/S-S.txt", "traces/S-S.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let results: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("results.json")).unwrap()).unwrap();
    assert_eq!(results["results"].as_array().unwrap().len(), 9);

    let again = pbm(&["identify", "--library", &asset("watertanks.pbl"), "--data", s(&data), "--out", s(&run)]);
    assert_eq!(again.status.code(), Some(2), "a non-empty run directory is refused");

    let replay = dir.path().join("replay");
    let o = pbm(&["replay", s(&run), "--jobs", "8", "--out", s(&replay)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.json", "results.csv", "series_rank1.csv"] {
        assert_eq!(std::fs::read(run.join(f)).unwrap(), std::fs::read(replay.join(f)).unwrap(), "{f}");
    }

    std::fs::write(&data, "t,u,h1,h2\n0,1,1,1\n").unwrap();
    let o = pbm(&["replay", s(&run), "--out", s(&dir.path().join("stale"))]);
    assert_eq!(o.status.code(), Some(2), "changed inputs are detected");
}

#[test]
fn multi_stage_identify_writes_stage_directories() {
    let dir = tempfile::tempdir().unwrap();
    let data = gendata(dir.path(), 300, 0.0);
    let run = dir.path().join("run");
    let o = pbm(&[
        "identify",
        "--mode",
        "multi",
        "--library",
        &asset("watertanks.pbl"),
        "--data",
        s(&data),
        "--budget",
        "40",
        "--out",
        s(&run),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["stage1/results.json", "stage2/results.json", "stages.json", "results.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let stages: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("stages.json")).unwrap()).unwrap();
    assert!(stages["stage1"]["promoted"]["valve"].is_object());
}

#[test]
fn parameter_recovery_summary() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("exp");
    let o = pbm(&[
        "experiment",
        "parameter-recovery",
        "--variance",
        "0,0.05",
        "--reps",
        "2",
        "--n",
        "200",
        "--budget",
        "30",
        "--out",
        s(&run),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(run.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("variance,reps,a1/A1,k/A1,a2/A2,a1/A2"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("2")));
    assert_eq!(std::fs::read_to_string(run.join("reps.csv")).unwrap().lines().count(), 5);
}
