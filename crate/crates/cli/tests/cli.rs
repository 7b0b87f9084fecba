use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clinlink_core::export::read_records;
use clinlink_core::synth::negation_export;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clinlink"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "clinlink {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const CONCEPTS: &str = "cui,name,type_ids,name_status
C0018810,heart rate,T201,P
C0018810,HR,T201,A
C2985465,hazard ratio,T081,P
C2985465,HR,T081,A
C0008031,chest pain,T184,P
C0008031,,T184,P
";

const CORPUS: &str = "Resting heart rate was 72 bpm on telemetry.
The adjusted hazard ratio for mortality was 1.4 in the cohort.
Chest pain resolved; heart rate normal.
HR 88 on the bedside monitor with chest pain.
";

fn fixture(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("concepts.csv"), CONCEPTS).unwrap();
    std::fs::write(dir.join("corpus.txt"), CORPUS).unwrap();
    run(dir, &["build-vcb", "--corpus", "corpus.txt", "--dim", "32", "--out", "vocab.bin"]);
    let out = run(dir, &["build-cdb", "--concepts", "concepts.csv", "--vocab", "vocab.bin", "--out", "model.bin"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: concepts.csv:7"));
    dir.join("model.bin")
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture(dir);
    run(dir, &["train-self", "--model", "model.bin", "--corpus", "corpus.txt", "--seed", "3", "--stats", "stats.json", "--out", "trained.bin"]);
    let stats: Value = serde_json::from_slice(&std::fs::read(dir.join("stats.json")).unwrap()).unwrap();
    assert!(stats["mentions_trained"].as_u64().unwrap() >= 3);

    run(dir, &["annotate", "--model", "trained.bin", "--in", "corpus.txt", "--out", "anns.jsonl", "--threads", "2"]);
    let recs = read_records(std::fs::File::open(dir.join("anns.jsonl")).map(std::io::BufReader::new).unwrap()).unwrap();
    assert_eq!(recs.len(), 4);
    assert_eq!(recs[0].doc_id, "1");
    assert!(recs[0].mentions.iter().any(|m| m.cui == "C0018810" && (m.start, m.end) == (8, 18)));

    // Before training, unique names link with the untrained flag set.
    run(dir, &["annotate", "--model", "model.bin", "--in", "corpus.txt", "--out", "raw.jsonl"]);
    let raw = read_records(std::fs::File::open(dir.join("raw.jsonl")).map(std::io::BufReader::new).unwrap()).unwrap();
    let unique = raw[2].mentions.iter().find(|m| m.cui == "C0008031").unwrap();
    assert!(unique.untrained && unique.confidence == 0.5);

    // Predictions scored against themselves are perfect.
    run(dir, &["evaluate", "--pred", "anns.jsonl", "--gold", "anns.jsonl", "--out", "report.json"]);
    let report: Value = serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["micro"]["f1"], 1.0);

    std::fs::write(dir.join("groups.cfg"), "CARDIO: C0018810, C2985465\n").unwrap();
    let out = run(dir, &["evaluate", "--pred", "anns.jsonl", "--gold", "anns.jsonl", "--groups", "groups.cfg"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["per_group"]["CARDIO"]["f1"], 1.0);
}

#[test]
fn jsonl_input_and_meta_models() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let export = negation_export(120, 1);
    std::fs::write(dir.join("export.json"), serde_json::to_vec(&export).unwrap()).unwrap();
    let mut csv = String::from("cui,name\n");
    let mut corpus = String::new();
    for d in &export.projects[0].documents {
        let a = &d.annotations[0];
        let name: String = d.text.chars().skip(a.start).take(a.end - a.start).collect();
        csv.push_str(&format!("{},{}\n", a.cui, name));
        corpus.push_str(&serde_json::json!({"doc_id": d.doc_id, "text": d.text}).to_string());
        corpus.push('\n');
    }
    std::fs::write(dir.join("concepts.csv"), csv).unwrap();
    std::fs::write(dir.join("docs.jsonl"), corpus).unwrap();
    run(dir, &["build-vcb", "--corpus", "docs.jsonl", "--dim", "24", "--out", "vocab.bin"]);
    run(dir, &["build-cdb", "--concepts", "concepts.csv", "--vocab", "vocab.bin", "--out", "model.bin"]);
    run(dir, &[
        "train-meta", "--model", "model.bin", "--export", "export.json", "--task", "Negation",
        "--labels", "Affirmed,Negated", "--epochs", "3", "--hidden", "8", "--metrics", "metrics.jsonl",
        "--out", "negation.meta",
    ]);
    let metrics = std::fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 6);
    run(dir, &["annotate", "--model", "model.bin", "--in", "docs.jsonl", "--meta", "negation.meta", "--out", "anns.jsonl", "--include-text"]);
    let recs = read_records(std::fs::File::open(dir.join("anns.jsonl")).map(std::io::BufReader::new).unwrap()).unwrap();
    assert_eq!(recs[0].doc_id, "neg-0");
    assert!(recs[0].text.is_some());
    assert!(recs.iter().flat_map(|r| &r.mentions).all(|m| m.meta.contains_key("Negation")));

    run(dir, &["train-supervised", "--model", "model.bin", "--export", "export.json", "--stats", "s.json", "--out", "sup.bin"]);
    let stats: Value = serde_json::from_slice(&std::fs::read(dir.join("s.json")).unwrap()).unwrap();
    assert_eq!(stats["mentions_trained"], 120);
}

#[test]
fn learning_curve_prints_one_row_per_size() {
    let out = bin().args(["learning-curve", "--sizes", "1,5,10,30", "--trials", "1", "--dim", "64"]).output().unwrap();
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "size\tmean_f1\tsd_f1\truns");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("30\t"));
}

#[test]
fn errors_are_single_lines() {
    let out = bin().args(["annotate", "--model", "missing.bin", "--in", "x", "--out", "y"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: missing.bin"));
    assert_eq!(err.lines().count(), 1);

    let out = bin().args(["annotate", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.bin"), b"CLNKMODL garbage").unwrap();
    let out = bin().current_dir(tmp.path()).args(["annotate", "--model", "bad.bin", "--in", "x", "--out", "y"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flags_fall_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture(dir);
    let out = bin()
        .current_dir(dir)
        .args(["annotate"])
        .env("CLINLINK_MODEL", "model.bin")
        .env("CLINLINK_IN", "corpus.txt")
        .env("CLINLINK_OUT", "env.jsonl")
        .env("CLINLINK_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("env.jsonl").exists());
}
