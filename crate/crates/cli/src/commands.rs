use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use rebalcl::contrastive::analyze_ir as ir_analysis;
use rebalcl::corpus::{load_corpus, make_imbalanced, word_substitute, Dataset, ImbalanceMode, SynonymLexicon};
use rebalcl::trainer::ablation::{ablation_csv, k_sweep_csv, run_k_sweep, run_variants};
use rebalcl::trainer::benchmark::{self, BenchmarkSpec};
use rebalcl::trainer::{evaluate, history_csv, AblationVariant, Encoded, MetricsReport, SavedModel};
use serde_json::{json, Map, Value};

use crate::config::RunConfig;

fn write(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub struct PrepareArgs {
    pub input: PathBuf,
    pub num_classes: usize,
    pub ir: f64,
    pub mode: ImbalanceMode,
    pub lexicon: Option<PathBuf>,
    pub rate: f64,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    let input = load_corpus(&a.input, a.num_classes)?;
    let lexicon = match &a.lexicon {
        Some(p) => SynonymLexicon::load(p)?,
        None => SynonymLexicon::default(),
    };
    let imbalanced = make_imbalanced(&input, a.ir, a.mode, a.seed)?;
    let augmented = word_substitute(&imbalanced, &lexicon, a.rate, a.seed)?;
    ensure_dir(&a.out)?;
    write(&a.out.join("imbalanced.tsv"), &imbalanced.to_corpus_string())?;
    write(&a.out.join("augmented.tsv"), &augmented.to_corpus_string())?;
    write_json(
        &a.out.join("counts.json"),
        &json!({
            "input_counts": input.counts(),
            "counts": imbalanced.counts(),
            "ir": a.ir,
            "mode": format!("{:?}", a.mode),
            "substitution_rate": a.rate,
            "seed": a.seed,
        }),
    )?;
    println!("{:?}", imbalanced.counts());
    Ok(())
}

/// Flat key-value view of a report.
pub fn metrics_json(m: &MetricsReport, examples: usize) -> Value {
    let mut map = Map::new();
    map.insert("accuracy".into(), json!(m.accuracy));
    map.insert("macro_f1".into(), json!(m.macro_f1));
    map.insert("examples".into(), json!(examples));
    for c in 0..m.f1.len() {
        map.insert(format!("precision_{c}"), json!(m.precision[c]));
        map.insert(format!("recall_{c}"), json!(m.recall[c]));
        map.insert(format!("f1_{c}"), json!(m.f1[c]));
        for (p, n) in m.confusion[c].iter().enumerate() {
            map.insert(format!("confusion_{c}_{p}"), json!(n));
        }
    }
    Value::Object(map)
}

pub fn train(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let run = RunConfig::load(config, seed)?;
    ensure_dir(out)?;
    let manifest_path = out.join("run_manifest.json");
    let outputs = json!({
        "history": out.join("history.csv"),
        "model": out.join("model.json"),
        "metrics": out.join("metrics.json"),
    });
    let mut manifest = json!({
        "config": run.snapshot()?,
        "seed": run.train_config.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "started_at": now(),
        "finished_at": Value::Null,
        "status": "running",
        "outputs": outputs,
    });
    write_json(&manifest_path, &manifest)?;

    let result = (|| -> Result<()> {
        let train_set = run.load_train()?;
        let eval_set = run.load_eval()?;
        let outcome = rebalcl::trainer::train(&run.train_config, &train_set, eval_set.as_ref())?;
        write(&out.join("history.csv"), &history_csv(&outcome.history))?;
        let target = eval_set.as_ref().unwrap_or(&train_set);
        let report = evaluate(&outcome.state, target, &outcome.vocab)?;
        write_json(&out.join("metrics.json"), &metrics_json(&report, target.len()))?;
        let saved = SavedModel {
            config: run.train_config.clone(),
            vocab: outcome.vocab,
            state: outcome.state,
        };
        write(&out.join("model.json"), &saved.to_json()?)?;
        println!("accuracy {:.4} macro_f1 {:.4}", report.accuracy, report.macro_f1);
        Ok(())
    })();

    manifest["finished_at"] = json!(now());
    match &result {
        Ok(()) => manifest["status"] = json!("completed"),
        Err(e) => {
            manifest["status"] = json!("failed");
            manifest["error"] = json!(format!("{e:#}"));
        }
    }
    write_json(&manifest_path, &manifest)?;
    result
}

fn load_model(path: &Path) -> Result<SavedModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    SavedModel::from_json(&text).with_context(|| format!("loading model {}", path.display()))
}

fn load_for_model(model: &SavedModel, corpus: &Path) -> Result<Dataset> {
    Ok(load_corpus(corpus, model.state.num_classes())?)
}

pub fn eval(model: &Path, corpus: &Path, out: &Path) -> Result<()> {
    let m = load_model(model)?;
    let data = load_for_model(&m, corpus)?;
    let report = evaluate(&m.state, &data, &m.vocab)?;
    ensure_dir(out)?;
    write_json(&out.join("metrics.json"), &metrics_json(&report, data.len()))?;
    println!("accuracy {:.4} macro_f1 {:.4}", report.accuracy, report.macro_f1);
    Ok(())
}

fn experiment_inputs(config: &Path) -> Result<(RunConfig, Dataset, Dataset)> {
    let run = RunConfig::load(config, None)?;
    let train_set = run.load_train()?;
    let Some(test) = run.load_eval()? else {
        bail!("config needs an \"eval\" corpus for this command");
    };
    Ok((run, train_set, test))
}

pub fn ablate(config: &Path, seeds: &[u64], variants: &[AblationVariant], out: &Path) -> Result<()> {
    let (run, train_set, test) = experiment_inputs(config)?;
    let variants = if variants.is_empty() { &AblationVariant::ALL[..] } else { variants };
    let rows = run_variants(&run.train_config, &train_set, &test, variants, seeds)?;
    ensure_dir(out)?;
    let csv = ablation_csv(&rows);
    write(&out.join("ablation_table.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn sweep_k(config: &Path, ks: &[usize], seeds: &[u64], out: &Path) -> Result<()> {
    let (run, train_set, test) = experiment_inputs(config)?;
    let rows = run_k_sweep(&run.train_config, &train_set, &test, ks, seeds)?;
    ensure_dir(out)?;
    let csv = k_sweep_csv(&rows);
    write(&out.join("k_sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn analyze_ir(corpus: &Path, num_classes: usize, batch_size: usize, trials: usize, seed: u64, out: &Path) -> Result<()> {
    let data = load_corpus(corpus, num_classes)?;
    let report = ir_analysis(&data.labels(), num_classes, batch_size, trials, seed)?;
    ensure_dir(out)?;
    let mut value = serde_json::to_value(&report)?;
    value["seed"] = json!(seed);
    write_json(&out.join("ir_report.json"), &value)?;
    println!("{}", serde_json::to_string(&value)?);
    Ok(())
}

pub fn export_embeddings(model: &Path, corpus: &Path, out: &Path) -> Result<()> {
    let m = load_model(model)?;
    let data = load_for_model(&m, corpus)?;
    let enc = Encoded::new(&data, &m.vocab);
    let z = m.state.embeddings(&enc.sequences)?;
    let mut csv = String::from("id,label");
    for j in 1..=z.cols() {
        write!(csv, ",z_{j}")?;
    }
    csv.push('\n');
    for (i, row) in z.row_iter().enumerate() {
        write!(csv, "{i},{}", enc.labels[i])?;
        for v in row {
            write!(csv, ",{v:.8e}")?;
        }
        csv.push('\n');
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write(out, &csv)
}

pub fn synth(seed: u64, out: &Path) -> Result<()> {
    let b = benchmark::generate(&BenchmarkSpec::default(), seed)?;
    ensure_dir(out)?;
    write(&out.join("train.tsv"), &b.train.to_corpus_string())?;
    write(&out.join("augmented.tsv"), &b.augmented.to_corpus_string())?;
    write(&out.join("test.tsv"), &b.test.to_corpus_string())?;
    write(&out.join("lexicon.tsv"), &b.lexicon.to_file_string())?;
    let Value::Object(mut cfg) = serde_json::to_value(benchmark::recommended_config())? else {
        unreachable!("TrainConfig serializes to an object");
    };
    cfg.insert("train".into(), json!("train.tsv"));
    cfg.insert("augmented".into(), json!("augmented.tsv"));
    cfg.insert("eval".into(), json!("test.tsv"));
    cfg.insert("num_classes".into(), json!(b.train.num_classes()));
    write_json(&out.join("config.json"), &Value::Object(cfg))?;
    println!("{:?}", b.train.counts());
    Ok(())
}
