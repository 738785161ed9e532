use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::CommandFactory;
use serde_json::Value;

use ner_mrc::cli::{run, Cli};

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// Runs in-process; returns (exit code, stdout, stderr).
fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("ner-mrc").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn every_flag_is_documented() {
    let root = Cli::command();
    for sub in root.get_subcommands() {
        assert!(sub.get_about().is_some(), "{} has no description", sub.get_name());
        for arg in sub.get_arguments() {
            if matches!(arg.get_id().as_str(), "help" | "version") {
                continue;
            }
            assert!(arg.get_help().is_some(), "{} --{} is undocumented", sub.get_name(), arg.get_id());
        }
    }
    let (code, out, _) = cli(&["train", "--help"]);
    assert_eq!(code, 0);
    for flag in ["--config", "--lr", "--epochs", "--seed", "--variant", "--repair-iob"] {
        assert!(out.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn unknown_subcommand_and_flag_print_usage() {
    for args in [&["frobnicate"][..], &["stats", "--corpus", "x", "--bogus"][..], &[][..]] {
        let (code, _, err) = cli(args);
        assert_ne!(code, 0, "{args:?}");
        assert!(err.contains("Usage"), "{args:?}: {err}");
    }
}

#[test]
fn missing_corpus_exits_with_code_2() {
    let (code, _, err) = cli(&["stats", "--corpus", "/definitely/not/here"]);
    assert_eq!(code, 2);
    assert!(err.contains("/definitely/not/here"));

    let bin = env!("CARGO_BIN_EXE_ner-mrc");
    let status = Command::new(bin)
        .args(["stats", "--corpus", "/definitely/not/here"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    let status = Command::new(bin).arg("nope").output().unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn stats_prints_json_for_a_split_directory() {
    let (code, out, err) = cli(&[
        "stats",
        "--corpus",
        s(&fixture("wnut17")),
        "--catalog",
        s(&repo("configs/catalogs/wnut17_guidelines.json")),
    ]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    let sizes: Vec<u64> = v["split_sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["sentences"].as_u64().unwrap())
        .collect();
    assert_eq!(sizes, [7, 3, 4]);
    assert_eq!(v["n_entity_types"], 6);

    // without a catalog the observed types are counted
    let (code, out, _) = cli(&["stats", "--corpus", s(&fixture("wnut17"))]);
    assert_eq!(code, 0);
    assert_eq!(serde_json::from_str::<Value>(&out).unwrap()["n_entity_types"], 6);
}

#[test]
fn reconstruct_writes_one_record_per_sentence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("triplets.jsonl");
    let (code, _, err) = cli(&[
        "reconstruct",
        "--corpus",
        s(&fixture("wnut17/emerging.dev.conll")),
        "--catalog",
        s(&repo("configs/catalogs/wnut17_name_only.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(&out).unwrap();
    let records: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    let first = &records[0];
    let question: Vec<&str> = first["question"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
    assert_eq!(question.join(" "), "What kind of entity is this?");
    assert_eq!(first["options"].as_array().unwrap().len(), 6);
    // "Virginia Wade won in France": person at rows 0-1, location at row 4
    let rows = first["label_matrix"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0], serde_json::json!([0, 0, 0, 0, 1, 0]));
    assert_eq!(rows[4], serde_json::json!([0, 0, 0, 1, 0, 0]));
    assert_eq!(rows[2], serde_json::json!([0, 0, 0, 0, 0, 0]));
}

#[test]
fn flags_override_the_experiment_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.json");
    fs::write(&path, r#"{"learning_rate": 0.01, "epochs": 4, "seed": 3, "corpus": "data"}"#).unwrap();
    let parsed = <Cli as clap::Parser>::try_parse_from([
        "ner-mrc",
        "train",
        "--config",
        s(&path),
        "--lr",
        "0.005",
    ])
    .unwrap();
    let ner_mrc::cli::Command::Train(args) = parsed.command else {
        panic!("not train")
    };
    let exp = args.overrides.resolve().unwrap();
    assert_eq!(exp.config.learning_rate, 0.005);
    assert_eq!(exp.config.epochs, 4);
    assert_eq!(exp.config.seed, 3);
    assert_eq!(exp.corpus, Some(dir.path().join("data")));

    fs::write(&path, r#"{"learning_rat": 0.01}"#).unwrap();
    let (code, _, err) = cli(&["train", "--config", s(&path), "--out", "x", "--corpus", "y", "--catalog", "z"]);
    assert_eq!(code, 1);
    assert!(err.contains("learning_rat"), "{err}");
}

#[test]
fn train_infer_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let (code, _, err) = cli(&["synth", "--out", s(&data), "--train", "50", "--dev", "20", "--test", "30"]);
    assert_eq!(code, 0, "{err}");
    let exp = dir.path().join("exp.json");
    fs::write(
        &exp,
        r#"{
  "corpus": "data",
  "catalog": "data/catalog.json",
  "out": "run",
  "learning_rate": 0.001,
  "epochs": 12,
  "seed": 1,
  "encoder": {"d_model": 32, "n_heads": 4, "ffn_dim": 64, "max_len": 128},
  "hrca": {"n_heads": 4, "head_dim": 8}
}"#,
    )
    .unwrap();
    let (code, out, err) = cli(&["train", "--config", s(&exp)]);
    assert_eq!(code, 0, "{err}");
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["epochs"], 12);
    let run = dir.path().join("run");
    for f in ["best.ckpt", "last.ckpt", "run.json", "run.jsonl", "timing.jsonl"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    assert_eq!(fs::read_to_string(run.join("run.jsonl")).unwrap().lines().count(), 12);

    let pred = dir.path().join("pred.conll");
    let test = data.join("test.txt");
    let (code, _, err) = cli(&[
        "infer",
        "--checkpoint",
        s(&run.join("best.ckpt")),
        "--corpus",
        s(&test),
        "--out",
        s(&pred),
    ]);
    assert_eq!(code, 0, "{err}");

    let (code, out, err) = cli(&["eval", "--gold", s(&test), "--pred", s(&pred)]);
    assert_eq!(code, 0, "{err}");
    let report: Value = serde_json::from_str(&out).unwrap();
    let f1 = report["f1"].as_f64().unwrap();
    assert!(f1 > 0.8, "end-to-end test F1 {f1}");
    assert!(report["per_type"]["PER"].is_object());

    // scoring the gold file against itself is perfect
    let (_, out, _) = cli(&["eval", "--gold", s(&test), "--pred", s(&test)]);
    assert_eq!(serde_json::from_str::<Value>(&out).unwrap()["f1"], 1.0);
}

#[test]
fn ablate_prints_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(cli(&["synth", "--out", s(&data), "--train", "8", "--dev", "4", "--test", "4"]).0, 0);
    let (code, out, err) = cli(&[
        "ablate",
        "--corpus",
        s(&data),
        "--catalog",
        s(&data.join("catalog.json")),
        "--catalog",
        s(&data.join("catalog_name_only.json")),
        "--seeds",
        "1,2",
        "--epochs",
        "1",
        "--d-model",
        "8",
        "--hrca-heads",
        "2",
        "--hrca-head-dim",
        "4",
        "--out",
        s(&dir.path().join("abl")),
    ]);
    assert_eq!(code, 0, "{err}");
    // header + 2 catalogs × 3 variants × 2 seeds
    assert_eq!(out.lines().count(), 1 + 12);
    assert!(out.contains("annotation_guidelines") && out.contains("name_only"));
    let rows: Vec<Value> = serde_json::from_slice(&fs::read(dir.path().join("abl/ablation.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 12);
}
