//! End-to-end runs of the `ketod` binary on the synthetic fixture.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn ketod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ketod"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("KETOD_DATA_ROOT")
        .env_remove("KETOD_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ketod(args);
    assert!(
        out.status.success(),
        "ketod {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// ingest + augment + build (kb and ke-kb) into `root`.
fn prepare(root: &Path) {
    let (d, a) = (root.join("data"), root.join("aug"));
    ok(&[
        "ingest",
        "--corpus",
        s(&data("dialogues.jsonl")),
        "--kb",
        s(&data("kb.txt")),
        "--out",
        s(&d),
    ]);
    ok(&[
        "augment",
        "--data",
        s(&d),
        "--out",
        s(&a),
        "--budget",
        "60",
        "--seed",
        "3",
    ]);
    ok(&["build", "--data", s(&d), "--mode", "kb", "--out", s(&root.join("kb"))]);
    ok(&[
        "build",
        "--data",
        s(&d),
        "--augmented",
        s(&a),
        "--mode",
        "ke-kb",
        "--out",
        s(&root.join("kekb")),
    ]);
}

fn train_tiny(built: &Path, out: &Path) {
    ok(&[
        "train",
        "--built",
        s(built),
        "--out",
        s(out),
        "--model",
        "tiny",
        "--epochs",
        "1",
        "--lr",
        "1e-3",
    ]);
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    prepare(root);

    let ingest = json(&root.join("data/manifest.json"));
    assert_eq!(ingest["results"]["dialogues"], 40);
    assert_eq!(ingest["results"]["train"], 24);
    assert_eq!(ingest["seeds"]["split"], 0);

    let aug = json(&root.join("aug/manifest.json"));
    assert_eq!(aug["results"]["generated"], 60);
    assert_eq!(aug["results"]["total"], 84);
    assert!(aug["results"]["templates"].as_u64().unwrap() > 0);

    let kekb = json(&root.join("kekb/manifest.json"));
    let kb = json(&root.join("kb/manifest.json"));
    assert!(kekb["results"]["pairs"]["train"].as_u64() > kb["results"]["pairs"]["train"].as_u64());
    assert_eq!(kekb["results"]["pairs"]["valid"], kb["results"]["pairs"]["valid"]);

    let built = root.join("kekb");
    train_tiny(&built, &root.join("model"));
    let trained = json(&root.join("model/manifest.json"));
    assert_eq!(trained["results"]["best_epoch"], 1);
    assert_eq!(
        std::fs::read_to_string(root.join("model/metrics.jsonl"))
            .unwrap()
            .lines()
            .count(),
        1
    );

    let hyp = root.join("gen/test.hyp");
    ok(&[
        "generate",
        "--checkpoint",
        s(&root.join("model/best.ckpt")),
        "--vocab",
        s(&built.join("vocab.txt")),
        "--src",
        s(&built.join("test.src")),
        "--out",
        s(&hyp),
        "--max-len",
        "12",
    ]);
    let lines = std::fs::read_to_string(&hyp).unwrap().lines().count();
    let sources = std::fs::read_to_string(built.join("test.src")).unwrap().lines().count();
    assert_eq!(lines, sources);
    assert!(root.join("gen/test.hyp.manifest.json").is_file());

    let eval = root.join("eval");
    ok(&[
        "evaluate",
        "--hyp",
        s(&hyp),
        "--ref",
        s(&built.join("test.tgt")),
        "--kb",
        s(&built.join("kb.jsonl")),
        "--out",
        s(&eval),
    ]);
    let report = json(&eval.join("report.json"));
    assert!((0.0..=100.0).contains(&report["bleu"].as_f64().unwrap()));
    assert!(report["bleu_definition"].as_str().unwrap().contains("BLEU-4"));
}

#[test]
fn references_score_perfectly_against_themselves() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    prepare(root);
    let built = root.join("kb");
    let tgt = built.join("test.tgt");
    let out = root.join("eval");
    let stdout = ok(&[
        "evaluate",
        "--hyp",
        s(&tgt),
        "--ref",
        s(&tgt),
        "--kb",
        s(&built.join("kb.jsonl")),
        "--out",
        s(&out),
    ]);
    assert!(stdout.contains("BLEU\t100.000"), "{stdout}");
    let report = json(&out.join("report.json"));
    assert!((report["bleu"].as_f64().unwrap() - 100.0).abs() < 1e-9);
    assert_eq!(report["entity_f1"], 1.0);

    // gold entities from the attached KB rows: every stated entity is in a row
    let out = root.join("eval-kb");
    ok(&[
        "evaluate",
        "--hyp",
        s(&tgt),
        "--ref",
        s(&tgt),
        "--kb",
        s(&built.join("kb.jsonl")),
        "--out",
        s(&out),
        "--f1-against",
        "kb",
        "--src",
        s(&built.join("test.src")),
    ]);
    let report = json(&out.join("report.json"));
    assert!(report["entity_precision"].as_f64().unwrap() > 0.9);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for root in [a.path(), b.path()] {
        prepare(root);
        train_tiny(&root.join("kb"), &root.join("model"));
    }
    for file in [
        "data/train.jsonl",
        "data/valid.jsonl",
        "data/test.jsonl",
        "aug/train_ke.jsonl",
        "aug/templates.jsonl",
        "kekb/vocab.txt",
        "kekb/train.src",
        "kekb/train.tgt",
        "kb/valid.src",
        "model/best.ckpt",
    ] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
    let losses = |root: &Path| json(&root.join("model/manifest.json"))["results"]["history"].clone();
    assert_eq!(losses(a.path())[0]["mean_loss"], losses(b.path())[0]["mean_loss"]);
}

#[test]
fn grid_emits_one_manifest_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    ok(&["grid", "--built", "built", "--out", s(&out)]);
    for model in ["small", "large"] {
        let cells: Vec<_> = std::fs::read_dir(&out)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with(model))
            .collect();
        assert_eq!(cells.len(), 4, "{model}");
    }
    let m = json(&out.join("large-b16-lr1e-4/manifest.json"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["config"]["batch_size"], 16);
    assert_eq!(m["config"]["lr"], 1e-4);
    assert_eq!(m["config"]["epochs"], 30);
    assert_eq!(m["config"]["model"], "large");

    let out = dir.path().join("with-seq2seq");
    ok(&[
        "grid",
        "--built",
        "built",
        "--out",
        s(&out),
        "--models",
        "small",
        "--seq2seq",
    ]);
    let m = json(&out.join("small-seq2seq/manifest.json"));
    assert_eq!(m["config"]["steps"], 100_000);
    assert_eq!(m["config"]["lr"], 6.25e-5);
}

#[test]
fn config_file_and_manifest_replay_override_flags() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    prepare(root);
    let config = root.join("config.json");
    std::fs::write(
        &config,
        r#"{"train": {"model": "tiny", "epochs": 1, "batch-size": 4, "lr": 0.002}}"#,
    )
    .unwrap();
    let out = root.join("model");
    ok(&[
        "--config",
        s(&config),
        "train",
        "--built",
        s(&root.join("kb")),
        "--out",
        s(&out),
    ]);
    let first = json(&out.join("manifest.json"));
    assert_eq!(first["config"]["batch_size"], 4);
    assert_eq!(first["config"]["model"], "tiny");

    // replaying the manifest restores its recorded arguments, including the output directory
    let replay = root.join("replay-manifest.json");
    std::fs::copy(out.join("manifest.json"), &replay).unwrap();
    std::fs::remove_file(out.join("best.ckpt")).unwrap();
    ok(&[
        "--config",
        s(&replay),
        "train",
        "--built",
        "elsewhere",
        "--out",
        "elsewhere",
    ]);
    let second = json(&out.join("manifest.json"));
    // metrics.jsonl carries wall times, the checkpoint must match exactly
    assert_eq!(first["outputs"]["best.ckpt"], second["outputs"]["best.ckpt"]);
}

#[test]
fn relative_paths_resolve_against_roots() {
    let dir = tempfile::tempdir().unwrap();
    let out = ketod_with_roots(
        dir.path(),
        &[
            "ingest",
            "--corpus",
            "dialogues.jsonl",
            "--kb",
            "kb.txt",
            "--out",
            "data",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("data/train.jsonl").is_file());
}

fn ketod_with_roots(output_root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ketod"))
        .args(args)
        .env("KETOD_DATA_ROOT", data(""))
        .env("KETOD_OUTPUT_ROOT", output_root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn report_flags_ties_and_reads_likert() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dir.path().join("rows.tsv");
    std::fs::write(&rows, "seq2seq\t10.5\t40.0\nke\t12.0\t55.0\nke+kb\t12.0\t50.0\n").unwrap();
    let means = dir.path().join("means.tsv");
    std::fs::write(&means, "ke\t3.40\nseq2seq\t2.10\n").unwrap();
    let likert = dir.path().join("likert.txt");
    std::fs::write(&likert, "ex1 5 a\nex2 3 a\nex1 1 b\n").unwrap();
    let out = dir.path().join("report");
    let text = ok(&[
        "report",
        "--rows",
        s(&rows),
        "--likert-means",
        s(&means),
        "--likert",
        s(&likert),
        "--out",
        s(&out),
    ]);
    let starred: Vec<&str> = text.lines().filter(|l| l.contains("12.000*")).collect();
    assert_eq!(starred.len(), 2, "{text}");
    assert!(text
        .lines()
        .any(|l| l.starts_with("ke ") && l.contains("55.000*") && l.contains("3.40")));
    assert!(text.contains("Likert mean 3.00 over 3 ratings"), "{text}");
    let report = json(&out.join("report.json"));
    assert_eq!(report["table"]["rows"][1]["best_f1"], true);

    std::fs::write(&likert, "ex1 4\n").unwrap();
    assert!(!ketod(&["report", "--likert", s(&likert)]).status.success());
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    prepare(root);
    let out = ketod(&[
        "build",
        "--data",
        s(&root.join("data")),
        "--mode",
        "ke",
        "--out",
        s(&root.join("x")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--augmented"));

    train_tiny(&root.join("kb"), &root.join("model"));
    let out = ketod(&[
        "generate",
        "--checkpoint",
        s(&root.join("model/best.ckpt")),
        "--vocab",
        s(&root.join("kekb/vocab.txt")),
        "--src",
        s(&root.join("kb/test.src")),
        "--out",
        s(&root.join("h")),
    ]);
    let vocab_differs =
        std::fs::read(root.join("kb/vocab.txt")).unwrap() != std::fs::read(root.join("kekb/vocab.txt")).unwrap();
    if vocab_differs {
        assert!(!out.status.success());
    }

    let out = ketod(&[
        "ingest",
        "--corpus",
        s(&data("dialogues.jsonl")),
        "--kb",
        s(&data("kb.txt")),
        "--out",
        s(&root.join("y")),
        "--split",
        "1,2,3",
    ]);
    assert!(!out.status.success());
}
