use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textsql"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn demo() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["demo-data", "--out", "."]);
    dir
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn write_benchmark(dir: &Path, name: &str, items: &[(&str, &str, &str)]) -> PathBuf {
    let items: Vec<Value> = items
        .iter()
        .map(|(db_id, question, query)| serde_json::json!({"db_id": db_id, "question": question, "query": query}))
        .collect();
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&items).unwrap()).unwrap();
    path
}

#[test]
fn prompt_file_has_one_record_per_example() {
    let dir = demo();
    write_benchmark(
        dir.path(),
        "two.json",
        &[
            ("network_1", "How many high schoolers are there?", "SELECT count(*) FROM Highschooler"),
            ("orchestra", "How many conductors are there?", "SELECT count(*) FROM conductor"),
        ],
    );
    ok(dir.path(), &["prompt", "--benchmark", "two.json", "--out", "p.jsonl"]);
    let records = jsonl(&dir.path().join("p.jsonl"));
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["example_id"], "e0000");
    assert_eq!(records[1]["db_id"], "orchestra");
    assert!(records[1]["prompt"].as_str().unwrap().ends_with("SELECT"));
    assert!(dir.path().join("p.jsonl.manifest.json").exists());
}

#[test]
fn create_select_prompt_matches_reference_text() {
    let dir = demo();
    write_benchmark(
        dir.path(),
        "kyle.json",
        &[("network_1", "What is Kyle's id?", "SELECT ID FROM Highschooler WHERE name = 'Kyle'")],
    );
    ok(
        dir.path(),
        &["prompt", "--benchmark", "kyle.json", "--prompt", "create+select:3", "--out", "p.jsonl"],
    );
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/create_select3.txt");
    let records = jsonl(&dir.path().join("p.jsonl"));
    assert_eq!(records[0]["prompt"].as_str().unwrap(), std::fs::read_to_string(golden).unwrap());
}

#[test]
fn over_budget_example_is_skipped() {
    let dir = demo();
    let long_question = "which student is it ".repeat(2000);
    write_benchmark(
        dir.path(),
        "long.json",
        &[
            ("network_1", "How many high schoolers are there?", "SELECT count(*) FROM Highschooler"),
            ("network_1", &long_question, "SELECT count(*) FROM Highschooler"),
        ],
    );
    let out = run(dir.path(), &["prompt", "--benchmark", "long.json", "--out", "p.jsonl"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("e0001: skipped"));
    let records = jsonl(&dir.path().join("p.jsonl"));
    assert_eq!(records.len(), 1);
    assert_eq!(records[0]["example_id"], "e0000");
}

#[test]
fn replay_round_trip_reproduces_gold() {
    let dir = demo();
    let backend = ["--backend", "replay:replay_oracle.jsonl"];
    let with = |args: &[&'static str]| -> Vec<&str> { args.iter().copied().chain(backend).collect() };
    ok(dir.path(), &with(&["prompt"]));
    ok(dir.path(), &with(&["predict", "--sql-out", "runs/pred.sql"]));
    let stdout = ok(dir.path(), &with(&["eval", "--suite-k", "4"]));
    assert!(stdout.contains("VA 100.0  EX 100.0  TS 100.0"), "{stdout}");
    let sql = std::fs::read_to_string(dir.path().join("runs/pred.sql")).unwrap();
    assert_eq!(sql.lines().count(), 20);
    assert!(sql.lines().all(|l| l.starts_with("SELECT ")));
}

#[test]
fn missing_replay_entry_names_the_example() {
    let dir = demo();
    let full = std::fs::read_to_string(dir.path().join("replay_oracle.jsonl")).unwrap();
    let partial: String = full
        .lines()
        .filter(|l| !l.contains("\"e0003\""))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(dir.path().join("partial.jsonl"), partial).unwrap();
    ok(dir.path(), &["prompt", "--backend", "replay:partial.jsonl"]);
    let out = run(dir.path(), &["predict", "--backend", "replay:partial.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("e0003"));
}

#[test]
fn predictions_for_other_prompts_are_refused() {
    let dir = demo();
    ok(dir.path(), &["prompt", "--prompt", "question"]);
    let out = run(dir.path(), &["predict", "--prompt", "create"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("different prompts"));
}

#[test]
fn cached_suite_is_reused_and_corrupt_manifest_regenerated() {
    let dir = demo();
    let args = ["suite", "--suite-k", "3", "--db-id", "network_1"];
    assert!(ok(dir.path(), &args).contains("network_1: generated"));
    assert!(ok(dir.path(), &args).contains("network_1: cached"));
    let manifest = dir.path().join(".textsql-cache/network_1/0/manifest.json");
    std::fs::write(&manifest, "{ not json").unwrap();
    let out = run(dir.path(), &args);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("network_1: generated"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corrupt suite manifest"));
    assert!(ok(dir.path(), &args).contains("network_1: cached"));
}

#[test]
fn report_is_identical_on_rerun() {
    let dir = demo();
    for (backend, name) in [("replay:replay_oracle.jsonl", "oracle"), ("replay:replay_mutate.jsonl", "mutate")] {
        let out_dir = format!("runs/{name}");
        let common = ["--backend", backend, "--out-dir", out_dir.as_str(), "--suite-k", "4"];
        for stage in ["prompt", "predict", "eval"] {
            let args: Vec<&str> = std::iter::once(stage).chain(common).collect();
            ok(dir.path(), &args);
        }
    }
    let report = |out: &str| {
        ok(
            dir.path(),
            &["report", "metrics", "--runs", "runs/*/outcomes.jsonl", "--format", "csv", "--out", out],
        );
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let first = report("a.csv");
    assert_eq!(first, report("b.csv"));
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
    assert!(text.contains("replay:replay_mutate.jsonl"));
}
