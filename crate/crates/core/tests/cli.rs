use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use selbench::engine::DgpCode;
use selbench::evaluation::write_oracle_submission;
use serde_json::Value;

fn selbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selbench"))
        .args(args)
        .env_remove("SELBENCH_SEED")
        .env_remove("SELBENCH_CONFIG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generate(root: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--format", "machine", "generate", "--synthetic", "200", "--replicates", "3", "--out"];
    args.push(root.to_str().unwrap());
    args.extend_from_slice(extra);
    let o = selbench(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    o
}

fn count_files(root: &Path) -> usize {
    let mut n = 0;
    for entry in fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        n += if p.is_dir() { count_files(&p) } else { 1 };
    }
    n
}

fn code(family: &str, bits: &str) -> DgpCode {
    DgpCode {
        family: family.parse().unwrap(),
        bits: bits.parse().unwrap(),
    }
}

fn oracle(root: &Path, sub: &Path) {
    for family in ["iid", "group_corr", "heteroskedastic", "non-additive"] {
        for case in 0..8 {
            write_oracle_submission(root, sub, code(family, &format!("{case:03b}")), &[1, 2, 3], 0.5).unwrap();
        }
    }
}

#[test]
fn generate_writes_requested_layout() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("c");
    let o = generate(&root, &["--families", "iid"]);
    let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["dgps"], 8);
    assert_eq!(count_files(&root), 8 * 4 + 2);
    assert!(root.join("iid/110/3.csv").is_file());
    assert!(!root.join("group_corr").exists());

    let again = dir.path().join("d");
    let second: Value = serde_json::from_str(&stdout(&generate(&again, &["--families", "iid"]))).unwrap();
    assert_eq!(summary["manifest_digest"], second["manifest_digest"]);
    let other: Value =
        serde_json::from_str(&stdout(&generate(&dir.path().join("e"), &["--families", "iid", "--seed", "5"]))).unwrap();
    assert_ne!(summary["manifest_digest"], other["manifest_digest"]);
}

#[test]
fn score_oracle_submission_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("c");
    let sub = dir.path().join("s");
    generate(&root, &[]);
    oracle(&root, &sub);
    let o = selbench(&["--format", "machine", "score", "--out", root.to_str().unwrap(), "--submission", sub.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<Value> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows.len(), 32);
    for r in &rows {
        assert_eq!(r["rmse_att"], 0.0);
        assert_eq!(r["rmse_cate"], 0.0);
        assert_eq!(r["cover_att"], 1.0);
        assert_eq!(r["cover_cate"], 1.0);
        assert_eq!(r["cover_catt"], 1.0);
    }
    let csv = fs::read_to_string(sub.join("scores.csv")).unwrap();
    assert_eq!(csv.lines().count(), 33);
}

#[test]
fn missing_cate_files_leave_cate_metrics_empty() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("c");
    let sub = dir.path().join("s");
    generate(&root, &["--families", "iid", "--settings", "000"]);
    write_oracle_submission(&root, &sub, code("iid", "000"), &[1, 2, 3], 0.5).unwrap();
    for r in 1..=3 {
        fs::remove_file(sub.join(format!("iid/000/{r}.cate.csv"))).unwrap();
    }
    let report = dir.path().join("scores.csv");
    let o = selbench(&[
        "score",
        "--out",
        root.to_str().unwrap(),
        "--submission",
        sub.to_str().unwrap(),
        "--families",
        "iid",
        "--settings",
        "000",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(report).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..4], ["iid", "000", "3", "0.0"]);
    assert_eq!(row[4], "");
    assert_eq!(row[6], "");
}

#[test]
fn short_cate_file_is_rejected_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("c");
    let sub = dir.path().join("s");
    generate(&root, &["--families", "iid", "--settings", "000"]);
    write_oracle_submission(&root, &sub, code("iid", "000"), &[1, 2, 3], 0.5).unwrap();
    let path = sub.join("iid/000/2.cate.csv");
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    fs::write(&path, lines[..lines.len() - 1].join("\n") + "\n").unwrap();
    let o = selbench(&["score", "--out", root.to_str().unwrap(), "--submission", sub.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("2.cate.csv"), "{}", stderr(&o));
}

#[test]
fn verify_passes_and_detects_a_mutated_transform() {
    let ok = selbench(&["verify", "--mc-draws", "100000"]);
    assert_eq!(ok.status.code(), Some(0), "{}{}", stdout(&ok), stderr(&ok));
    assert!(stdout(&ok).contains("PASS"));

    let bad = selbench(&["verify", "--mc-draws", "100000", "--debug-b-scale", "1.1"]);
    assert_eq!(bad.status.code(), Some(5));
    assert!(stdout(&bad).contains("FAIL"));

    let tiny = selbench(&["--format", "machine", "verify", "--mc-draws", "1000"]);
    assert_eq!(tiny.status.code(), Some(2));
    let err: Value = serde_json::from_str(stderr(&tiny).trim()).unwrap();
    assert_eq!(err["exit_code"], 2);
}

#[test]
fn verify_checks_a_built_tree() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("c");
    generate(&root, &[]);
    let o = selbench(&["verify", "--mc-draws", "100000", "--build", root.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("tree_nonadditive_range"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("selbench.toml");
    let root = dir.path().join("from-config");
    fs::write(
        &cfg,
        format!("out = {:?}\nsynthetic_units = 100\nreplicates = 2\nfamilies = [\"non-additive\"]\n", root.to_str().unwrap()),
    )
    .unwrap();
    let o = selbench(&["--config", cfg.to_str().unwrap(), "generate", "--replicates", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(count_files(&root), 8 * 2 + 2);

    fs::write(&cfg, "bogus_key = 1\n").unwrap();
    let bad = selbench(&["--config", cfg.to_str().unwrap(), "generate"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn help_lists_defaults() {
    let o = selbench(&["generate", "--help"]);
    let text = stdout(&o);
    for needle in ["[default: 2017]", "[default: 250]", "[default: challenge]", "[default: fixed]", "SELBENCH_SEED"] {
        assert!(text.contains(needle), "help lacks {needle}");
    }
}
