use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clustersend::sim::RunTranscript;
use serde_json::json;

fn clustersend(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clustersend")).args(args).output().expect("spawn clustersend")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_json(dir: &Path, name: &str, value: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path
}

fn c1(i: usize) -> serde_json::Value {
    json!({ "cluster": 1, "index": i })
}

fn c2(i: usize) -> serde_json::Value {
    json!({ "cluster": 2, "index": i })
}

fn system(n1: usize, f1: usize, n2: usize, f2: usize, model: &str, signing: &str) -> serde_json::Value {
    json!({
        "c1": { "n": n1, "f": f1 },
        "c2": { "n": n2, "f": f2 },
        "failure_model": model,
        "signing": signing,
    })
}

#[test]
fn bounds_prints_sigma_and_tau() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "s.json", json!({ "system": system(5, 1, 9, 2, "byzantine", "replica_signing") }));
    let out = clustersend(&["bounds", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("sigma_2 = 4 (q=0 r=3"), "{text}");
    assert!(text.contains("tau_2 = 5 (q=1 r=0"), "{text}");
}

#[test]
fn bijective_example_run_matches_summary_and_transcript() {
    let dir = tempfile::tempdir().unwrap();
    write_json(
        dir.path(),
        "trace.json",
        json!({
            "placement": { "c1": [1, 2, 7], "c2": [0, 2] },
            "actions": [
                { "action": "ignore", "replica": c2(0) },
                { "action": "drop", "envelope": 1 },
                { "action": "drop", "envelope": 2 },
                { "action": "ignore", "replica": c2(2) },
            ],
        }),
    );
    let cfg = write_json(
        dir.path(),
        "scenario.json",
        json!({
            "system": system(8, 3, 7, 2, "byzantine", "cluster_signing"),
            "seeds": [3],
            "adversary": { "scripted": "trace.json" },
        }),
    );
    let transcript_path = dir.path().join("run.json");
    let out = clustersend(&["run", "--config", cfg.to_str().unwrap(), "--out", transcript_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("protocol=bs-bcs"), "{text}");
    assert!(text.contains("msgs=6 receipt=true agreement=true confirmation=true"), "{text}");

    let transcript: RunTranscript = serde_json::from_str(&fs::read_to_string(&transcript_path).unwrap()).unwrap();
    assert_eq!(transcript.metrics.inter_cluster_msgs, 6);
    assert!(transcript.properties.all());
}

#[test]
fn fault_free_run_sends_one_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "s.json", system(4, 0, 4, 0, "crash", "none"));
    let out = clustersend(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("msgs=1 "), "{}", stdout(&out));
}

#[test]
fn scripted_forgery_against_rb_brs_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_json(
        dir.path(),
        "forge.json",
        json!({
            "placement": { "c1": [0, 1], "c2": [] },
            "actions": [{
                "action": "inject",
                "from": c1(1),
                "to": [c2(0), c2(1), c2(2), c2(3)],
                "value": "6f74686572",
                "certs": { "replica_signed": [c1(0), c1(1)] },
            }],
        }),
    );
    let cfg = write_json(
        dir.path(),
        "scenario.json",
        json!({
            "system": system(5, 2, 4, 1, "byzantine", "replica_signing"),
            "adversary": { "scripted": "forge.json" },
        }),
    );
    let out = clustersend(&["run", "--config", cfg.to_str().unwrap(), "--protocol", "rb-brs"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("agreement=true"), "{}", stdout(&out));
}

#[test]
fn verify_passes_and_mutation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "s.json",
        json!({
            "system": system(4, 1, 4, 1, "byzantine", "replica_signing"),
            "seeds": [0, 1, 2],
            "adversary": "exhaustive",
        }),
    );
    let path = cfg.to_str().unwrap();
    let ok = clustersend(&["verify", "--config", path, "--protocol", "rb-brs"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).starts_with("verified "));

    let broken = clustersend(&["verify", "--config", path, "--protocol", "rb-brs", "--mutation", "weak-threshold"]);
    assert_eq!(broken.status.code(), Some(1));
    assert!(stdout(&broken).contains("counterexample"));
}

#[test]
fn verify_refuses_oversized_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "s.json", json!({ "system": system(8, 2, 4, 1, "crash", "none"), "adversary": "exhaustive" }));
    let out = clustersend(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_json(dir.path(), "u.json", json!({ "system": system(4, 1, 4, 1, "crash", "none"), "colour": 1 }));
    assert_eq!(clustersend(&["run", "--config", unknown.to_str().unwrap()]).status.code(), Some(2));

    let invalid = write_json(dir.path(), "i.json", system(2, 1, 4, 1, "crash", "none"));
    assert_eq!(clustersend(&["run", "--config", invalid.to_str().unwrap()]).status.code(), Some(2));

    let missing = dir.path().join("absent.json");
    assert_eq!(clustersend(&["bounds", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(clustersend(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn sweep_writes_csv_and_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let grid = write_json(
        dir.path(),
        "grid.json",
        json!({
            "n1": [4, 5],
            "n2": [4],
            "systems": [{ "failure_model": "crash", "signing": "none" }],
            "faults": "robust",
        }),
    );
    let csv_path = dir.path().join("out.csv");
    let out = clustersend(&["sweep", "--config", grid.to_str().unwrap(), "--out", csv_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(headers.get(0), Some("n1"));
    let msgs = headers.iter().position(|h| h == "msgs").unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    // (4,0,4,0), (4,0,4,1), (4,1,4,0), (4,1,4,1), then the same f values for n1 = 5.
    assert_eq!(rows.len(), 8);
    assert_eq!(&rows[3][msgs], "3");

    let jsonl_path = dir.path().join("out.jsonl");
    let out = clustersend(&[
        "sweep",
        "--config",
        grid.to_str().unwrap(),
        "--out",
        jsonl_path.to_str().unwrap(),
        "--format",
        "jsonl",
    ]);
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> =
        fs::read_to_string(&jsonl_path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 8);
    assert!(lines.iter().all(|l| l["receipt"] == true));
}

#[test]
fn empty_sweep_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let grid = write_json(dir.path(), "grid.json", json!({ "n1": [], "n2": [4], "systems": [] }));
    let path = dir.path().join("out.csv");
    let out = clustersend(&["sweep", "--config", grid.to_str().unwrap(), "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("n1,f1,n2,f2,"));
}
