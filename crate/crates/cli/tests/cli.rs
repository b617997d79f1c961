use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const STAGES: [&str; 6] = [
    "encode",
    "train-proxy",
    "build-reprs",
    "train-participation",
    "evaluate",
    "report",
];

fn challenger(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_challenger"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = challenger(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn ingest_prints_counts() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth"]);
    let text = ok(dir.path(), &["ingest"]);
    assert!(text.starts_with("videos: "), "{text}");
    assert!(text.contains("users: 6, challenges: 3"), "{text}");
    assert!(text.contains("challenge challenge00: "));
}

#[test]
fn ingest_names_duplicate_ids() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = PathBuf::from(ok(dir.path(), &["synth"]).trim().strip_prefix("wrote ").unwrap());
    let text = fs::read_to_string(&manifest).unwrap();
    let first_video = text.lines().nth(1).unwrap().to_string();
    fs::write(&manifest, format!("{text}{first_video}\n")).unwrap();
    let o = challenger(dir.path(), &["ingest"]);
    assert_eq!(o.status.code(), Some(1));
    let id = serde_json::from_str::<serde_json::Value>(&first_video).unwrap()["video_id"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(String::from_utf8_lossy(&o.stderr).contains(&id));
}

#[test]
fn ingest_of_missing_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = challenger(dir.path(), &["ingest", "nowhere.jsonl"]);
    assert!(!o.status.success());
    assert!(!o.stderr.is_empty());
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["--seed", "9", "synth"]);
    ok(b.path(), &["--seed", "9", "synth"]);
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn evaluate_before_training_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth"]);
    for stage in &STAGES[..3] {
        ok(dir.path(), &[stage]);
    }
    let o = challenger(dir.path(), &["evaluate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train-participation"));
}

#[test]
fn bad_usage_and_config_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(challenger(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        challenger(dir.path(), &["--backend", "vgg16", "encode"]).status.code(),
        Some(1)
    );
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "folds = 1\n").unwrap();
    assert_eq!(
        challenger(dir.path(), &["--config", cfg.to_str().unwrap(), "synth"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn full_pipeline_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth"]);
    for stage in STAGES {
        ok(dir.path(), &["--baselines", "all", stage]);
    }
    let report = fs::read_to_string(dir.path().join("report/table2.txt")).unwrap();
    for name in [
        "toy-a",
        "toy-a + toy-text",
        "toy-b",
        "toy-b + toy-text",
        "deepChallenger",
    ] {
        assert!(
            report.lines().any(|l| l.trim_start().starts_with(name)),
            "{name} missing from\n{report}"
        );
    }
    assert!(dir.path().join("report/table1.txt").exists());

    let before = snapshot(dir.path());
    for stage in STAGES {
        ok(dir.path(), &["--baselines", "all", stage]);
    }
    let after = snapshot(dir.path());
    assert_eq!(before.keys().collect::<Vec<_>>(), after.keys().collect::<Vec<_>>());
    for (path, bytes) in &before {
        assert!(&after[path] == bytes, "{} changed on rerun", path.display());
    }
}
