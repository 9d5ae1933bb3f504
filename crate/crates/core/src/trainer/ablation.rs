//! Variant-by-seed ablation matrix and the `k` sensitivity sweep. Cells are
//! independent and run on scoped threads; results come back in cell order.

use serde::{Deserialize, Serialize};

use super::config::{AblationVariant, TrainConfig};
use super::{evaluate, train};
use crate::corpus::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: AblationVariant,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Maps `f` over `items` with up to `available_parallelism` threads.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    let f = &f;
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn run_cell(cfg: &TrainConfig, train_set: &Dataset, test: &Dataset) -> Result<(f64, f64)> {
    let outcome = train(cfg, train_set, None)?;
    let report = evaluate(&outcome.state, test, &outcome.vocab)?;
    Ok((report.accuracy, report.macro_f1))
}

/// Trains and evaluates every variant in `variants` under every seed.
pub fn run_variants(
    base: &TrainConfig,
    train_set: &Dataset,
    test: &Dataset,
    variants: &[AblationVariant],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let cells: Vec<(AblationVariant, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    par_map(&cells, |&(variant, seed)| {
        let cfg = TrainConfig {
            ablation: variant,
            seed,
            ..base.clone()
        };
        let (accuracy, macro_f1) = run_cell(&cfg, train_set, test)?;
        log::info!("{variant} seed {seed}: acc {accuracy:.4} macro-F1 {macro_f1:.4}");
        Ok(AblationRow {
            variant,
            seed,
            accuracy,
            macro_f1,
        })
    })
}

/// All ten variants under every seed.
pub fn run_ablation_matrix(base: &TrainConfig, train_set: &Dataset, test: &Dataset, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    run_variants(base, train_set, test, &AblationVariant::ALL, seeds)
}

pub fn run_k_sweep(base: &TrainConfig, train_set: &Dataset, test: &Dataset, ks: &[usize], seeds: &[u64]) -> Result<Vec<KSweepRow>> {
    if seeds.is_empty() || ks.is_empty() {
        return Err(Error::Config("k sweep needs at least one k and one seed".into()));
    }
    let cells: Vec<(usize, u64)> = ks.iter().flat_map(|&k| seeds.iter().map(move |&s| (k, s))).collect();
    par_map(&cells, |&(k, seed)| {
        let cfg = TrainConfig {
            k,
            seed,
            ..base.clone()
        };
        let (accuracy, macro_f1) = run_cell(&cfg, train_set, test)?;
        Ok(KSweepRow {
            k,
            seed,
            accuracy,
            macro_f1,
        })
    })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One summary per variant, in first-appearance order.
pub fn summarize(rows: &[AblationRow]) -> Vec<VariantSummary> {
    let mut order: Vec<AblationVariant> = Vec::new();
    for r in rows {
        if !order.contains(&r.variant) {
            order.push(r.variant);
        }
    }
    order
        .into_iter()
        .map(|variant| {
            let acc: Vec<f64> = rows.iter().filter(|r| r.variant == variant).map(|r| r.accuracy).collect();
            let f1: Vec<f64> = rows.iter().filter(|r| r.variant == variant).map(|r| r.macro_f1).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&acc);
            let (mean_macro_f1, std_macro_f1) = mean_std(&f1);
            VariantSummary {
                variant,
                runs: acc.len(),
                mean_accuracy,
                std_accuracy,
                mean_macro_f1,
                std_macro_f1,
            }
        })
        .collect()
}

/// `variant,seed,acc,macro_f1` rows, then one `mean±std` row per variant.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,seed,acc,macro_f1\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.variant, r.seed, r.accuracy, r.macro_f1));
    }
    for v in summarize(rows) {
        s.push_str(&format!(
            "{},mean±std,{:.4}±{:.4},{:.4}±{:.4}\n",
            v.variant, v.mean_accuracy, v.std_accuracy, v.mean_macro_f1, v.std_macro_f1
        ));
    }
    s
}

pub fn k_sweep_csv(rows: &[KSweepRow]) -> String {
    let mut s = String::from("k,seed,acc,macro_f1\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.k, r.seed, r.accuracy, r.macro_f1));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;
    use std::path::Path;

    fn small() -> (TrainConfig, Dataset) {
        let mut text = String::new();
        for i in 0..10 {
            text.push_str(&format!("0\talpha beta t{}\n", i % 3));
            text.push_str(&format!("1\tgamma delta t{}\n", i % 3));
        }
        for i in 0..3 {
            text.push_str(&format!("2\tomega sigma t{i}\n"));
        }
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 2,
            embed_dim: 6,
            feat_dim: 6,
            hidden_dim: 8,
            proj_dim: 4,
            k: 2,
            m_pos: 3,
            m_neg: 4,
            probe_steps: 20,
            ..TrainConfig::default()
        };
        (cfg, parse_corpus(&text, 3, Path::new("small")).unwrap())
    }

    #[test]
    fn one_seed_gives_ten_rows_and_is_deterministic() {
        let (cfg, ds) = small();
        let a = run_ablation_matrix(&cfg, &ds, &ds, &[7]).unwrap();
        assert_eq!(a.len(), 10);
        let b = run_ablation_matrix(&cfg, &ds, &ds, &[7]).unwrap();
        assert_eq!(ablation_csv(&a), ablation_csv(&b));
        assert!(run_ablation_matrix(&cfg, &ds, &ds, &[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let rows: Vec<AblationRow> = [AblationVariant::Full, AblationVariant::NoCL]
            .iter()
            .flat_map(|&v| {
                (0..2).map(move |s| AblationRow {
                    variant: v,
                    seed: s,
                    accuracy: 0.5 + s as f64 * 0.1,
                    macro_f1: 0.4,
                })
            })
            .collect();
        let csv = ablation_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 4 + 2);
        assert_eq!(lines[5], "Full,mean±std,0.5500±0.0707,0.4000±0.0000");
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn k_sweep_rows() {
        let (cfg, ds) = small();
        let rows = run_k_sweep(&cfg, &ds, &ds, &[1, 2], &[0, 1]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(k_sweep_csv(&rows).lines().count(), 5);
    }
}
