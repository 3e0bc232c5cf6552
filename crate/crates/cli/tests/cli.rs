use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const MCD: &str = env!("CARGO_BIN_EXE_mcd");

fn mcd(cwd: &Path, args: &[&str]) -> Output {
    Command::new(MCD)
        .args(args)
        .current_dir(cwd)
        .env("MCD_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Benchmark files plus a config with a small optimizer budget.
fn setup(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let o = mcd(dir, &["bench2d", "--out", "bench"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(dir.join("bench/config.json")).unwrap()).unwrap();
    cfg["optimizer"]["population_size"] = json!(40);
    cfg["optimizer"]["generations"] = json!(25);
    edit(&mut cfg);
    let path = dir.join("bench/small.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn run(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", "bench/small.json", "--out", out];
    args.extend_from_slice(extra);
    mcd(dir, &args)
}

#[test]
fn run_then_resample_without_new_evaluations() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, |_| {});
    let o = run(dir, "r", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let archive: Value = serde_json::from_str(&fs::read_to_string(dir.join("r/archive.json")).unwrap()).unwrap();
    assert!(!archive["entries"].as_array().unwrap().is_empty());
    let manifest_before = fs::read(dir.join("r/manifest.json")).unwrap();

    let balanced = [
        "sample", "--archive", "r/archive.json", "--count", "5",
        "--w-proximity", "0.5", "--w-sparsity", "0.2", "--w-manifold", "0.5", "--w-diversity", "0.2",
    ];
    let o = mcd(dir, &balanced);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = stdout(&o);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "x1,x2,f_pr,f_sp,f_mp,quality");
    assert_eq!(lines.count(), 5);
    assert_eq!(fs::read_to_string(dir.join("r/samples.csv")).unwrap(), csv);
    let doc: Value = serde_json::from_str(&fs::read_to_string(dir.join("r/samples.json")).unwrap()).unwrap();
    assert_eq!(doc["entries"].as_array().unwrap().len(), 5);

    let o = mcd(dir, &["sample", "--archive", "r/archive.json", "--count", "1", "--w-proximity", "1", "--w-diversity", "5"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 2);
    assert_eq!(fs::read(dir.join("r/manifest.json")).unwrap(), manifest_before);
}

#[test]
fn csv_config_matches_generated_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, |_| {});
    let with_csv = run(dir, "a", &[]);
    assert_eq!(code(&with_csv), 0);
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(dir.join("bench/small.json")).unwrap()).unwrap();
    cfg["dataset"] = json!({"kind": "bench2d"});
    fs::write(dir.join("bench/generated.json"), cfg.to_string()).unwrap();
    let o = mcd(dir, &["run", "--config", "bench/generated.json", "--out", "b"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(dir.join("a/archive.json")).unwrap(), fs::read(dir.join("b/archive.json")).unwrap());
}

#[test]
fn seeded_runs_are_byte_identical_and_seed_matters() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, |_| {});
    for out in ["s1", "s2"] {
        assert_eq!(code(&run(dir, out, &["--seed", "9"])), 0);
    }
    assert_eq!(code(&run(dir, "s3", &["--seed", "10"])), 0);
    let read = |d: &str| fs::read(dir.join(d).join("archive.json")).unwrap();
    assert_eq!(read("s1"), read("s2"));
    assert_ne!(read("s1"), read("s3"));
}

#[test]
fn malformed_config_exits_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, |c| c["optimizer"]["populaton_size"] = json!(10));
    let o = run(dir, "bad", &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("populaton_size"), "{}", stderr(&o));
    assert!(!dir.join("bad").exists());

    fs::write(dir.join("broken.json"), "{ not json").unwrap();
    assert_eq!(code(&mcd(dir, &["run", "--config", "broken.json", "--out", "bad"])), 2);
    assert_eq!(code(&mcd(dir, &["run", "--config", "missing.json", "--out", "bad"])), 2);
    assert!(!dir.join("bad").exists());
}

#[test]
fn unreachable_predictor_exits_3_and_keeps_partial_archive() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, |c| {
        c["predictors"][0]["backend"] = json!({"subprocess": {"command": ["/nonexistent/predictor"], "deterministic": true}});
    });
    let o = run(dir, "p", &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(dir.join("p/archive.json").exists());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.join("p/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["state"], "failed");
}

#[test]
fn subprocess_worker_reproduces_builtin_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, |_| {});
    assert_eq!(code(&run(dir, "builtin", &[])), 0);
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(dir.join("bench/small.json")).unwrap()).unwrap();
    cfg["predictors"][0]["backend"] = json!({"subprocess": {"command": [MCD, "worker"], "deterministic": true}});
    fs::write(dir.join("bench/worker.json"), cfg.to_string()).unwrap();
    let o = mcd(dir, &["run", "--config", "bench/worker.json", "--out", "worker"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let entries = |d: &str| {
        let v: Value = serde_json::from_str(&fs::read_to_string(dir.join(d).join("archive.json")).unwrap()).unwrap();
        v["entries"].clone()
    };
    assert_eq!(entries("builtin"), entries("worker"));
}

#[test]
fn archive_problem_mismatch_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, |_| {});
    assert_eq!(code(&run(dir, "r", &[])), 0);
    let mut other: Value = serde_json::from_str(&fs::read_to_string(dir.join("r/problem.json")).unwrap()).unwrap();
    other["query"] = json!([0.2, 0.3]);
    fs::write(dir.join("other.json"), other.to_string()).unwrap();
    let o = mcd(dir, &["sample", "--archive", "r/archive.json", "--config", "other.json", "--w-proximity", "1"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    let text = fs::read_to_string(dir.join("r/archive.json")).unwrap();
    fs::write(dir.join("r/archive.json"), text.replacen("\"entries\"", "\"entries\" ", 1)).unwrap();
    let o = mcd(dir, &["sample", "--archive", "r/archive.json", "--w-proximity", "1"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn empty_archive_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, |c| {
        c["constraints"]["outputs"][1]["lower"] = json!(5.0);
        c["optimizer"]["generations"] = json!(3);
    });
    assert_eq!(code(&run(dir, "e", &[])), 0);
    let o = mcd(dir, &["sample", "--archive", "e/archive.json", "--count", "3"]);
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("no valid counterfactuals"));
    let o = mcd(dir, &["sweep", "--archive", "e/archive.json", "--rows", "1", "--cols", "1"]);
    assert_eq!(code(&o), 5);
}

#[test]
fn sweep_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, |_| {});
    assert_eq!(code(&run(dir, "r", &[])), 0);
    let o = mcd(
        dir,
        &[
            "sweep", "--archive", "r/archive.json", "--rows", "6", "--cols", "6",
            "--row-schedule", "0.2/2^i", "--col-schedule", "w_d=0.1*1.5^(j-1)",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 37);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..6], ["1", "1", "0.1", "0.1", "0.1", "0.1"]);
    assert!(dir.join("r/sweep.csv").exists());

    let weights = ["--w-proximity", "0.7", "--w-sparsity", "0.1", "--w-manifold", "0.3", "--w-diversity", "0.4"];
    let mut one = vec!["sweep", "--archive", "r/archive.json", "--rows", "1", "--cols", "1"];
    one.extend_from_slice(&weights);
    let o = mcd(dir, &one);
    let grid_row: Vec<String> = stdout(&o).lines().nth(1).unwrap().split(',').map(String::from).collect();
    let mut single = vec!["sample", "--archive", "r/archive.json", "--count", "1"];
    single.extend_from_slice(&weights);
    let o = mcd(dir, &single);
    let sample_row: Vec<String> = stdout(&o).lines().nth(1).unwrap().split(',').map(String::from).collect();
    assert_eq!(&grid_row[6..6 + sample_row.len()], &sample_row[..]);

    let o = mcd(dir, &["sweep", "--archive", "r/archive.json", "--rows", "2", "--cols", "1", "--row-schedule", "w_pr=1-i"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn writes_stay_inside_out() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir, |_| {});
    let before: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(code(&run(dir, "only", &[])), 0);
    let mut after: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    after.retain(|n| !before.contains(n));
    assert_eq!(after, vec![std::ffi::OsString::from("only")]);
    let mut files: Vec<_> = fs::read_dir(dir.join("only")).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files, ["archive.json", "manifest.json", "problem.json"]);
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&mcd(tmp.path(), &["run"])), 2);
    assert_eq!(code(&mcd(tmp.path(), &["sample", "--archive", "x", "--target", "oops"])), 2);
    assert_eq!(code(&mcd(tmp.path(), &["--help"])), 0);
}
