use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rebalcl::corpus::load_corpus;
use rebalcl::trainer::{evaluate, SavedModel};
use serde_json::{json, Value};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rebalcl")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&read(p)).unwrap()
}

/// Two classes with disjoint vocabularies.
fn separable_corpus(per_class: usize) -> String {
    let mut out = String::new();
    for i in 0..per_class {
        writeln!(out, "0\talpha{} beta{} gamma", i % 5, (i + 1) % 5).unwrap();
        writeln!(out, "1\tdelta{} eps{} zeta", i % 5, (i + 2) % 5).unwrap();
    }
    out
}

fn write_config(dir: &Path, extra: Value) -> PathBuf {
    std::fs::write(dir.join("train.tsv"), separable_corpus(12)).unwrap();
    std::fs::write(dir.join("test.tsv"), separable_corpus(4)).unwrap();
    let mut cfg = json!({
        "train": "train.tsv",
        "eval": "test.tsv",
        "num_classes": 2,
        "epochs": 2,
        "batch_size": 8,
        "k": 3,
        "m_pos": 4,
        "m_neg": 6,
        "embed_dim": 16,
        "feat_dim": 16,
        "hidden_dim": 16,
        "proj_dim": 8,
        "probe_steps": 20,
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn prepare_identity_and_determinism() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in.tsv");
    let text = separable_corpus(6);
    std::fs::write(&input, &text).unwrap();
    let out = dir.path().join("out");
    ok(&["prepare", "--input", s(&input), "--num-classes", "2", "--ir", "1", "--rate", "0", "--out", s(&out)]);
    let mut want: Vec<&str> = text.lines().collect();
    want.sort();
    for file in ["imbalanced.tsv", "augmented.tsv"] {
        let got = read(&out.join(file));
        let mut got: Vec<&str> = got.lines().collect();
        got.sort();
        assert_eq!(got, want, "{file}");
    }
    let again = dir.path().join("again");
    ok(&["prepare", "--input", s(&input), "--num-classes", "2", "--ir", "1", "--rate", "0", "--out", s(&again)]);
    for file in ["imbalanced.tsv", "augmented.tsv", "counts.json"] {
        assert_eq!(read(&out.join(file)), read(&again.join(file)));
    }
}

#[test]
fn prepare_per_class_example_counts() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in.tsv");
    let mut text = String::new();
    for (label, n) in [(0, 1000), (1, 900), (2, 890)] {
        for i in 0..n {
            writeln!(text, "{label}\tw{i}").unwrap();
        }
    }
    std::fs::write(&input, text).unwrap();
    let out = dir.path().join("out");
    ok(&[
        "prepare",
        "--input",
        s(&input),
        "--num-classes",
        "3",
        "--ir",
        "10",
        "--mode",
        "paper-example",
        "--seed",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(read_json(&out.join("counts.json"))["counts"], json!([1000, 100, 10]));
}

#[test]
fn prepare_reports_line_of_bad_input() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.tsv");
    std::fs::write(&input, "0\tfine\nseven\toops\n").unwrap();
    let out = run(&["prepare", "--input", s(&input), "--num-classes", "2", "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.tsv") && err.contains('2'), "{err}");
}

#[test]
fn train_writes_run_directory() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), json!({"epochs": 1}));
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    let history = read(&out.join("history.csv"));
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,loss_cls,loss_cl,loss_overall,train_acc,eval_acc,eval_macro_f1");
    assert_eq!(lines.len(), 2);
    let manifest = read_json(&out.join("run_manifest.json"));
    assert_eq!(manifest["status"], "completed");
    assert_eq!(manifest["seed"], 0);
    assert!(manifest["finished_at"].is_u64());
    let metrics = read_json(&out.join("metrics.json"));
    assert!(metrics.as_object().unwrap().values().all(|v| v.is_number()));
    assert!(out.join("model.json").exists());
}

#[test]
fn rerun_and_manifest_snapshot_reproduce_history() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), json!({"ablation": "NoSSHM"}));
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["train", "--config", s(&cfg), "--seed", "3", "--out", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--seed", "3", "--out", s(&b)]);
    assert_eq!(std::fs::read(a.join("history.csv")).unwrap(), std::fs::read(b.join("history.csv")).unwrap());

    let snapshot = dir.path().join("snapshot.json");
    let manifest = read_json(&a.join("run_manifest.json"));
    std::fs::write(&snapshot, manifest["config"].to_string()).unwrap();
    ok(&["train", "--config", s(&snapshot), "--out", s(&c)]);
    assert_eq!(std::fs::read(a.join("history.csv")).unwrap(), std::fs::read(c.join("history.csv")).unwrap());

    let other = dir.path().join("d");
    ok(&["train", "--config", s(&cfg), "--seed", "4", "--out", s(&other)]);
    assert_ne!(read(&a.join("history.csv")), read(&other.join("history.csv")));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), json!({"learning_rte": 0.1}));
    let out = run(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rte"));
}

#[test]
fn separable_corpus_is_learned() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        json!({"epochs": 50, "embed_dim": 64, "feat_dim": 64, "hidden_dim": 128, "proj_dim": 64}),
    );
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(read_json(&out.join("metrics.json"))["accuracy"], json!(1.0));
}

#[test]
fn eval_matches_in_process() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), json!({"epochs": 3}));
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    let model = out.join("model.json");
    let test = dir.path().join("test.tsv");
    let eval_dir = dir.path().join("eval");
    ok(&["eval", "--model", s(&model), "--corpus", s(&test), "--out", s(&eval_dir)]);
    let got = read_json(&eval_dir.join("metrics.json"));

    let saved = SavedModel::from_json(&read(&model)).unwrap();
    let data = load_corpus(&test, 2).unwrap();
    let report = evaluate(&saved.state, &data, &saved.vocab).unwrap();
    assert_eq!(got["accuracy"].as_f64().unwrap(), report.accuracy);
    assert_eq!(got["macro_f1"].as_f64().unwrap(), report.macro_f1);
    for c in 0..2 {
        assert_eq!(got[format!("f1_{c}")].as_f64().unwrap(), report.f1[c]);
        for p in 0..2 {
            assert_eq!(got[format!("confusion_{c}_{p}")].as_u64().unwrap() as usize, report.confusion[c][p]);
        }
    }
    // the training run's metrics are the same evaluation
    assert_eq!(got, read_json(&out.join("metrics.json")));

    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    assert!(!run(&["eval", "--model", s(&model), "--corpus", s(&empty), "--out", s(&eval_dir)]).status.success());
}

#[test]
fn ablate_table_shape() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), json!({"epochs": 1}));
    let out = dir.path().join("abl");
    ok(&["ablate", "--config", s(&cfg), "--seeds", "0,1", "--out", s(&out)]);
    let table = read(&out.join("ablation_table.csv"));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "variant,seed,acc,macro_f1");
    let summaries = lines[1..].iter().filter(|l| l.contains("mean±std")).count();
    assert_eq!(lines.len() - 1 - summaries, 20);
    assert_eq!(summaries, 10);

    let again = dir.path().join("abl2");
    ok(&["ablate", "--config", s(&cfg), "--seeds", "0,1", "--out", s(&again)]);
    assert_eq!(table, read(&again.join("ablation_table.csv")));
}

#[test]
fn sweep_k_table_shape() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), json!({"epochs": 1}));
    let out = dir.path().join("k");
    ok(&["sweep-k", "--config", s(&cfg), "--ks", "1,2", "--seeds", "0,1", "--out", s(&out)]);
    assert_eq!(read(&out.join("k_sweep.csv")).lines().count(), 1 + 4);
}

#[test]
fn analyze_ir_reports() {
    let dir = TempDir::new().unwrap();
    let balanced = dir.path().join("bal.tsv");
    let mut text = String::new();
    for i in 0..300 {
        writeln!(text, "{}\tw", i % 3).unwrap();
    }
    std::fs::write(&balanced, text).unwrap();
    let out = dir.path().join("ir");
    // whole-corpus batches make every batch exactly balanced
    ok(&[
        "analyze-ir",
        "--corpus",
        s(&balanced),
        "--num-classes",
        "3",
        "--batch-size",
        "300",
        "--trials",
        "5",
        "--out",
        s(&out),
    ]);
    let r = read_json(&out.join("ir_report.json"));
    assert_eq!(r["dataset_ir"], json!(1.0));
    assert_eq!(r["mean_contrastive_ir_exact"], json!(1.0));

    let skewed = dir.path().join("skew.tsv");
    let mut text = String::new();
    for (label, n) in [(0, 1000), (1, 100), (2, 10)] {
        for _ in 0..n {
            writeln!(text, "{label}\tw").unwrap();
        }
    }
    std::fs::write(&skewed, text).unwrap();
    ok(&["analyze-ir", "--corpus", s(&skewed), "--num-classes", "3", "--trials", "10", "--out", s(&out)]);
    assert_eq!(read_json(&out.join("ir_report.json"))["dataset_ir"], json!(100.0));
}

#[test]
fn export_embeddings_rows_are_unit_norm() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), json!({"epochs": 1}));
    let run_dir = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&run_dir)]);
    let corpus = dir.path().join("test.tsv");
    let model = run_dir.join("model.json");
    let (a, b) = (dir.path().join("z.csv"), dir.path().join("nested/z.csv"));
    ok(&["export-embeddings", "--model", s(&model), "--corpus", s(&corpus), "--out", s(&a)]);
    ok(&["export-embeddings", "--model", s(&model), "--corpus", s(&corpus), "--out", s(&b)]);
    let text = read(&a);
    assert_eq!(text, read(&b));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), read(&corpus).lines().count() + 1);
    assert_eq!(lines[0].split(',').count(), 2 + 8);
    for line in &lines[1..] {
        let z: Vec<f64> = line.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6, "{norm}");
    }
}

#[test]
fn synth_writes_usable_config() {
    let dir = TempDir::new().unwrap();
    ok(&["synth", "--seed", "2", "--out", s(dir.path())]);
    let cfg = read_json(&dir.path().join("config.json"));
    assert_eq!(cfg["num_classes"], 5);
    let train = load_corpus(dir.path().join("train.tsv"), 5).unwrap();
    assert_eq!(train.counts(), &[500, 188, 71, 27, 10]);
}
