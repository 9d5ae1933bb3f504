//! Contrastive objectives with analytic gradients, and imbalance-ratio analytics.
//!
//! All three losses share one per-anchor kernel. For an anchor `z_i` with
//! targets `z_k` (positives `P` among them), similarities `a_k = z_i · z_k`
//! and a per-anchor scale `s`,
//!
//! ```text
//! L_i = s · Σ_{p∈P} ( logsumexp_k(a_k / τ) − a_p / τ )
//! ∂L_i/∂a_k = (s / τ) · ( |P| · softmax_k − [k ∈ P] )
//! ```
//!
//! so `∂L_i/∂z_i = Σ_k (∂L_i/∂a_k) z_k` and `∂L_i/∂z_k = (∂L_i/∂a_k) z_i`.

use serde::{Deserialize, Serialize};

use crate::classifier::CompensationVector;
use crate::corpus::ClassId;
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};
use crate::rebalance::{ExtendedBatch, RebalancedSets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorWeightMode {
    /// `w_y = -log P_y`: minority anchors weigh more.
    NegLogPrior,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub weight_mode: AnchorWeightMode,
}

impl ContrastiveConfig {
    pub fn new(tau: f64, weight_mode: AnchorWeightMode) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self { tau, weight_mode })
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {tau}")))
    }
}

/// Per-class anchor weights.
pub fn anchor_weights(delta: &CompensationVector, mode: AnchorWeightMode) -> Vec<f64> {
    match mode {
        AnchorWeightMode::NegLogPrior => delta.as_slice().iter().map(|d| -d).collect(),
        AnchorWeightMode::Uniform => vec![1.0; delta.len()],
    }
}

/// Loss terms of one training step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_cl: f64,
    /// `a · l_cls + μ · l_cl` with the variant's `a` and `μ`.
    pub l_overall: f64,
    pub per_anchor: Vec<f64>,
    /// Norms of each branch's gradient w.r.t. the encoder features.
    pub grad_norm_cls: f64,
    pub grad_norm_cl: f64,
    pub skipped_anchors: usize,
    pub shortfall: usize,
}

/// Softmax of `anchor · target / τ` over the targets.
pub fn pair_probabilities(anchor: &[f64], targets: &[&[f64]], tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = targets.iter().map(|t| dot(anchor, t) / tau).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Returns the anchor's loss and `∂L/∂a_k` for every target.
fn anchor_kernel(anchor: &[f64], targets: &[&[f64]], positive: &[bool], tau: f64, scale: f64) -> Result<(f64, Vec<f64>)> {
    let logits: Vec<f64> = targets.iter().map(|t| dot(anchor, t) / tau).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("contrastive similarities"));
    }
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let mut loss = 0.0;
    let coeffs = logits
        .iter()
        .zip(positive)
        .map(|(&l, &is_pos)| {
            let p = (l - lse).exp();
            if is_pos {
                loss += lse - l;
            }
            scale / tau * (n_pos * p - if is_pos { 1.0 } else { 0.0 })
        })
        .collect();
    Ok((scale * loss, coeffs))
}

/// Loss with its gradient w.r.t. the embedding rows.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Matrix,
    pub per_anchor: Vec<f64>,
    /// Anchors left out because they had no positive.
    pub skipped: usize,
}

/// Unsupervised contrastive loss over `(anchor, positive)` index pairs.
///
/// Each anchor contrasts against every other row; the `-1/|B|` factor is kept
/// per anchor and the result is averaged over anchors.
pub fn ucl_loss(z: &Matrix, pairs: &[(usize, usize)], tau: f64) -> Result<LossGrad> {
    check_tau(tau)?;
    let b = z.rows();
    if b < 2 {
        return Err(Error::invalid("contrastive batch needs at least 2 rows"));
    }
    if pairs.is_empty() {
        return Err(Error::invalid("no anchor pairs"));
    }
    let mut grad = Matrix::zeros(b, z.cols());
    let mut per_anchor = Vec::with_capacity(pairs.len());
    let scale = 1.0 / (b as f64 * pairs.len() as f64);
    for &(i, ip) in pairs {
        if i == ip || i >= b || ip >= b {
            return Err(Error::invalid(format!("invalid pair ({i}, {ip})")));
        }
        let others: Vec<usize> = (0..b).filter(|&k| k != i).collect();
        let targets: Vec<&[f64]> = others.iter().map(|&k| z.row(k)).collect();
        let positive: Vec<bool> = others.iter().map(|&k| k == ip).collect();
        let (loss, coeffs) = anchor_kernel(z.row(i), &targets, &positive, tau, scale)?;
        accumulate(&mut grad, i, &others, &coeffs, z);
        per_anchor.push(loss);
    }
    Ok(LossGrad {
        loss: per_anchor.iter().sum(),
        grad,
        per_anchor,
        skipped: 0,
    })
}

/// Supervised contrastive loss: same-label rows are positives.
///
/// Anchors whose class has no other member are skipped; the loss is the mean
/// over the remaining anchors of the per-anchor positive average.
pub fn scl_loss(z: &Matrix, labels: &[ClassId], tau: f64) -> Result<LossGrad> {
    check_tau(tau)?;
    let b = z.rows();
    if labels.len() != b {
        return Err(Error::Shape {
            op: "scl_loss",
            left: z.shape(),
            right: (labels.len(), 1),
        });
    }
    let class_size = |y: ClassId| labels.iter().filter(|&&l| l == y).count();
    let valid: Vec<usize> = (0..b).filter(|&i| class_size(labels[i]) >= 2).collect();
    if valid.is_empty() {
        return Err(Error::invalid("every anchor lacks a positive"));
    }
    let mut grad = Matrix::zeros(b, z.cols());
    let mut per_anchor = Vec::with_capacity(valid.len());
    for &i in &valid {
        let others: Vec<usize> = (0..b).filter(|&k| k != i).collect();
        let targets: Vec<&[f64]> = others.iter().map(|&k| z.row(k)).collect();
        let positive: Vec<bool> = others.iter().map(|&k| labels[k] == labels[i]).collect();
        let scale = 1.0 / ((class_size(labels[i]) - 1) as f64 * valid.len() as f64);
        let (loss, coeffs) = anchor_kernel(z.row(i), &targets, &positive, tau, scale)?;
        accumulate(&mut grad, i, &others, &coeffs, z);
        per_anchor.push(loss);
    }
    Ok(LossGrad {
        loss: per_anchor.iter().sum(),
        grad,
        per_anchor,
        skipped: b - valid.len(),
    })
}

fn accumulate(grad: &mut Matrix, anchor: usize, others: &[usize], coeffs: &[f64], z: &Matrix) {
    let h = z.cols();
    let mut g_anchor = vec![0.0; h];
    let za = z.row(anchor);
    for (&k, &c) in others.iter().zip(coeffs) {
        for (acc, v) in g_anchor.iter_mut().zip(z.row(k)) {
            *acc += c * v;
        }
        for (acc, v) in grad.row_mut(k).iter_mut().zip(za) {
            *acc += c * v;
        }
    }
    for (acc, v) in grad.row_mut(anchor).iter_mut().zip(&g_anchor) {
        *acc += v;
    }
}

/// Result of the rebalanced contrastive loss.
#[derive(Debug, Clone)]
pub struct RebalancedLoss {
    pub loss: f64,
    pub per_anchor: Vec<f64>,
    /// Gradient w.r.t. the normalized extended-batch rows, including the paths
    /// through sampled and synthetic targets.
    pub grad_rows: Matrix,
    /// Gradient w.r.t. each class's positive / negative target embeddings.
    pub grad_pos: Vec<Matrix>,
    pub grad_neg: Vec<Matrix>,
    pub skipped: usize,
}

enum Slot {
    Row(usize),
    Pos(usize),
    Neg(usize),
}

struct AnchorTargets<'a> {
    slots: Vec<Slot>,
    vectors: Vec<&'a [f64]>,
    positive: Vec<bool>,
}

fn anchor_targets<'a>(dhat: &'a ExtendedBatch, rebal: &'a RebalancedSets, i: usize) -> AnchorTargets<'a> {
    let y = dhat.labels[i];
    let ct = &rebal.classes[y];
    let mut out = AnchorTargets {
        slots: Vec::new(),
        vectors: Vec::new(),
        positive: Vec::new(),
    };
    for k in (0..dhat.len()).filter(|&k| k != i) {
        out.slots.push(Slot::Row(k));
        out.vectors.push(dhat.row(k));
        out.positive.push(dhat.labels[k] == y);
    }
    for (k, v) in ct.pos.embeddings.row_iter().enumerate() {
        out.slots.push(Slot::Pos(k));
        out.vectors.push(v);
        out.positive.push(true);
    }
    for (k, v) in ct.neg.embeddings.row_iter().enumerate() {
        out.slots.push(Slot::Neg(k));
        out.vectors.push(v);
        out.positive.push(false);
    }
    out
}

/// Rebalanced contrastive loss.
///
/// Every row `i` of the extended batch is an anchor. Its targets are the other
/// extended-batch rows plus its class's rebalanced sets; its positives are the
/// rebalanced positives plus the same-class rows. The per-anchor scale is
/// `w_y / |D̂|`, and the total is the sum over anchors.
pub fn rebalanced_cl_loss(dhat: &ExtendedBatch, rebal: &RebalancedSets, weights: &[f64], tau: f64) -> Result<RebalancedLoss> {
    check_tau(tau)?;
    let c = dhat.num_classes();
    if rebal.num_classes() != c || weights.len() != c {
        return Err(Error::invalid(format!(
            "class count mismatch: batch {c}, targets {}, weights {}",
            rebal.num_classes(),
            weights.len()
        )));
    }
    let h = dhat.dim();
    for ct in &rebal.classes {
        for m in [&ct.pos.embeddings, &ct.neg.embeddings] {
            if m.rows() > 0 && m.cols() != h {
                return Err(Error::Shape {
                    op: "rebalanced_cl_loss",
                    left: dhat.embeddings.shape(),
                    right: m.shape(),
                });
            }
        }
    }
    let n = dhat.len();
    let mut grad_rows = Matrix::zeros(n, h);
    let mut grad_pos: Vec<Matrix> = rebal.classes.iter().map(|ct| Matrix::zeros(ct.pos.len(), h)).collect();
    let mut grad_neg: Vec<Matrix> = rebal.classes.iter().map(|ct| Matrix::zeros(ct.neg.len(), h)).collect();
    let mut per_anchor = vec![0.0; n];
    let mut skipped = 0;
    for i in 0..n {
        let y = dhat.labels[i];
        let at = anchor_targets(dhat, rebal, i);
        if !at.positive.iter().any(|&p| p) {
            skipped += 1;
            continue;
        }
        let scale = weights[y] / n as f64;
        let (loss, coeffs) = anchor_kernel(dhat.row(i), &at.vectors, &at.positive, tau, scale)?;
        per_anchor[i] = loss;
        let anchor = dhat.row(i);
        let mut g_anchor = vec![0.0; h];
        for ((slot, v), &cf) in at.slots.iter().zip(&at.vectors).zip(&coeffs) {
            for (acc, x) in g_anchor.iter_mut().zip(v.iter()) {
                *acc += cf * x;
            }
            let target_grad = match *slot {
                Slot::Row(k) => grad_rows.row_mut(k),
                Slot::Pos(k) => grad_pos[y].row_mut(k),
                Slot::Neg(k) => grad_neg[y].row_mut(k),
            };
            for (acc, x) in target_grad.iter_mut().zip(anchor) {
                *acc += cf * x;
            }
        }
        for (acc, v) in grad_rows.row_mut(i).iter_mut().zip(&g_anchor) {
            *acc += v;
        }
    }
    let loss: f64 = per_anchor.iter().sum();
    if !loss.is_finite() {
        return Err(Error::NonFinite("rebalanced contrastive loss"));
    }
    rebal.backward(dhat, &grad_pos, &grad_neg, &mut grad_rows);
    Ok(RebalancedLoss {
        loss,
        per_anchor,
        grad_rows,
        grad_pos,
        grad_neg,
        skipped,
    })
}

/// Gradient of anchor `i`'s loss term w.r.t. `z_i` alone, targets held fixed.
pub fn anchor_gradient(dhat: &ExtendedBatch, rebal: &RebalancedSets, weights: &[f64], tau: f64, i: usize) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let at = anchor_targets(dhat, rebal, i);
    let scale = weights[dhat.labels[i]] / dhat.len() as f64;
    let (_, coeffs) = anchor_kernel(dhat.row(i), &at.vectors, &at.positive, tau, scale)?;
    let mut g = vec![0.0; dhat.dim()];
    for (v, cf) in at.vectors.iter().zip(coeffs) {
        for (acc, x) in g.iter_mut().zip(v.iter()) {
            *acc += cf * x;
        }
    }
    Ok(g)
}

/// Largest over smallest class count.
pub fn imbalance_ratio(counts: &[usize]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    let max = *counts.iter().max().unwrap() as f64;
    let min = *counts.iter().min().unwrap() as f64;
    Ok(max / min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveIr {
    /// Ratio of same-class ordered pair counts; `None` when some class has
    /// fewer than two members.
    pub exact: Option<f64>,
    /// `(n_max / n_min)²`
    pub approx: f64,
}

/// Imbalance measured over same-class pairs instead of samples.
pub fn contrastive_imbalance_ratio(counts: &[usize]) -> Result<ContrastiveIr> {
    let ir = imbalance_ratio(counts)?;
    let max = *counts.iter().max().unwrap() as f64;
    let min = *counts.iter().min().unwrap() as f64;
    let exact = (min >= 2.0).then(|| (max * (max - 1.0)) / (min * (min - 1.0)));
    Ok(ContrastiveIr { exact, approx: ir * ir })
}

/// Dataset imbalance next to the contrastive imbalance of random batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrReport {
    pub dataset_ir: f64,
    pub dataset_ir_squared: f64,
    pub batch_size: usize,
    pub trials: usize,
    /// Trials where some class had fewer than two members.
    pub flagged_trials: usize,
    /// Mean exact contrastive ratio over unflagged trials.
    pub mean_contrastive_ir_exact: Option<f64>,
    /// Mean `(n_max / n_min)²` over trials in which every class appeared.
    pub mean_contrastive_ir_approx: Option<f64>,
}

/// Draws `trials` batches of `batch_size` examples without replacement and
/// averages their contrastive imbalance ratios.
pub fn analyze_ir(labels: &[ClassId], num_classes: usize, batch_size: usize, trials: usize, seed: u64) -> Result<IrReport> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 || batch_size > labels.len() || trials == 0 {
        return Err(Error::invalid(format!(
            "need 1 <= batch_size <= {} and trials >= 1",
            labels.len()
        )));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::LabelOutOfRange { label: l, num_classes });
        }
        counts[l] += 1;
    }
    let dataset_ir = imbalance_ratio(&counts)?;
    let stream = crate::numerics::SeedStream::new(seed).child("ir");
    let (mut exact_sum, mut exact_n, mut approx_sum, mut approx_n, mut flagged) = (0.0, 0usize, 0.0, 0usize, 0usize);
    for trial in 0..trials {
        let mut rng = stream.index(trial as u64).rng();
        let mut batch = vec![0usize; num_classes];
        for i in rand::seq::index::sample(&mut rng, labels.len(), batch_size) {
            batch[labels[i]] += 1;
        }
        match contrastive_imbalance_ratio(&batch) {
            Ok(r) => {
                approx_sum += r.approx;
                approx_n += 1;
                match r.exact {
                    Some(e) => {
                        exact_sum += e;
                        exact_n += 1;
                    }
                    None => {
                        flagged += 1;
                        log::debug!("trial {trial}: a class has a single member {batch:?}");
                    }
                }
            }
            Err(_) => {
                flagged += 1;
                log::debug!("trial {trial}: a class is missing {batch:?}");
            }
        }
    }
    Ok(IrReport {
        dataset_ir,
        dataset_ir_squared: dataset_ir * dataset_ir,
        batch_size,
        trials,
        flagged_trials: flagged,
        mean_contrastive_ir_exact: (exact_n > 0).then(|| exact_sum / exact_n as f64),
        mean_contrastive_ir_approx: (approx_n > 0).then(|| approx_sum / approx_n as f64),
    })
}
