mod common;

use std::path::Path;
use std::process::{Command, Output};

use evidence_atlas::classify::{Classifier, ClassifierHandle};
use evidence_atlas::normalize::{DictionaryFile, SynonymDictionary};

use common::*;

fn run(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_evidence-atlas"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_eval_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = temp_config(dir.path(), "cli");
    let corpus = fixture("corpus.jsonl");
    let out = run(&["ingest", "--config", s(&cfg), "--feed", s(&corpus)], dir.path());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["received"], 20);
    assert_eq!(report["extracted"], 17);

    let preds = dir.path().join("store/extractions.jsonl");
    let eval_out = dir.path().join("eval.json");
    run(
        &[
            "eval",
            "--corpus",
            s(&corpus),
            "--gold",
            s(&fixture("gold.jsonl")),
            "--predictions",
            s(&preds),
            "--ontology",
            s(&fixture("ontology.tsv")),
            "--synonyms",
            s(&fixture("synonyms.tsv")),
            "--relaxed",
            "--format",
            "json",
            "--out",
            s(&eval_out),
        ],
        dir.path(),
    );
    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&eval_out).unwrap()).unwrap();
    assert_eq!(eval["pico"]["rows"].as_array().unwrap().len(), 3);
    assert!(eval["concepts"]["relaxed"].is_object());

    let md = run(
        &[
            "eval",
            "--corpus",
            s(&corpus),
            "--gold",
            s(&fixture("gold.jsonl")),
            "--predictions",
            s(&preds),
        ],
        dir.path(),
    );
    assert!(String::from_utf8_lossy(&md.stdout).contains("## Evidence sentences"));

    let map = run(
        &[
            "export-map",
            "--config",
            s(&cfg),
            "--query",
            r#"{"outcome": {"concepts": ["M015"], "mode": "or"}}"#,
        ],
        dir.path(),
    );
    let view: serde_json::Value = serde_json::from_slice(&map.stdout).unwrap();
    assert!(view["interventions"].is_array());

    let gate = run(&["gate", "--config", s(&cfg), "--feed", s(&corpus)], dir.path());
    assert_eq!(String::from_utf8_lossy(&gate.stdout).lines().count(), 20);
}

#[test]
fn build_dict_and_train() {
    let dir = tempfile::tempdir().unwrap();
    let dict_path = dir.path().join("dict.json");
    run(
        &[
            "build-dict",
            "--ontology",
            s(&fixture("ontology.tsv")),
            "--synonyms",
            s(&fixture("synonyms.tsv")),
            "--out",
            s(&dict_path),
        ],
        dir.path(),
    );
    let file: DictionaryFile = serde_json::from_str(&std::fs::read_to_string(&dict_path).unwrap()).unwrap();
    let dict = SynonymDictionary::from_file(file);
    assert_eq!(dict.lookup("Migraine").map(|c| c.contains("M015")), Some(true));

    let model = dir.path().join("evidence.json");
    run(
        &[
            "train",
            "--task",
            "evidence",
            "--corpus",
            s(&fixture("corpus.jsonl")),
            "--gold",
            s(&fixture("gold.jsonl")),
            "--out",
            s(&model),
            "--epochs",
            "5",
        ],
        dir.path(),
    );
    let clf = ClassifierHandle::load_path(&model).unwrap();
    assert_eq!(clf.labels(), ["other", "evidence"]);
    let p = clf.predict(&["Pain was lower with the drug than placebo.".to_string()]).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let status = Command::new(env!("CARGO_BIN_EXE_evidence-atlas"))
        .args(["train", "--task", "rct", "--out", s(&dir.path().join("x.json"))])
        .output()
        .unwrap();
    assert!(!status.status.success());
}
