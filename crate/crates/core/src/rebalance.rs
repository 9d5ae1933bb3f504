//! Prototype-extended batches and per-class balanced contrastive targets.
//!
//! Every target row remembers where it came from (a sampled row of the
//! extended batch, or a mixup of two such rows) so gradients on the targets
//! can be routed back to the live embeddings.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::corpus::ClassId;
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize, l2_normalize_backward, norm, Matrix, Normalized, SeedStream};

/// Batch embeddings followed by one prototype per class, all L2-normalized.
#[derive(Debug, Clone)]
pub struct ExtendedBatch {
    pub embeddings: Matrix,
    pub labels: Vec<ClassId>,
    pub is_prototype: Vec<bool>,
    num_classes: usize,
    batch_len: usize,
    normalized: Normalized,
}

impl ExtendedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Number of non-prototype rows.
    pub fn batch_len(&self) -> usize {
        self.batch_len
    }

    pub fn prototype_row(&self, c: ClassId) -> usize {
        self.batch_len + c
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    /// Splits a gradient on the normalized rows into gradients on the raw batch
    /// embeddings and the raw prototypes.
    pub fn backward(&self, grad_rows: &Matrix) -> Result<(Matrix, Matrix)> {
        if grad_rows.shape() != self.embeddings.shape() {
            return Err(Error::Shape {
                op: "extended batch backward",
                left: grad_rows.shape(),
                right: self.embeddings.shape(),
            });
        }
        let g = l2_normalize_backward(&self.normalized, grad_rows);
        let n = self.batch_len;
        let batch_idx: Vec<usize> = (0..n).collect();
        let proto_idx: Vec<usize> = (n..self.len()).collect();
        Ok((g.select_rows(&batch_idx), g.select_rows(&proto_idx)))
    }
}

/// Appends the prototypes (prototype `c` labeled `c`) to the batch and
/// L2-normalizes every row.
pub fn extend_with_prototypes(z: &Matrix, labels: &[ClassId], proto: &Matrix) -> Result<ExtendedBatch> {
    if z.rows() != labels.len() {
        return Err(Error::Shape {
            op: "extend_with_prototypes labels",
            left: z.shape(),
            right: (labels.len(), 1),
        });
    }
    let c = proto.rows();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label: bad, num_classes: c });
    }
    let stacked = if z.rows() == 0 {
        proto.clone()
    } else {
        z.vstack(proto)?
    };
    let normalized = l2_normalize(&stacked)?;
    let mut all_labels = labels.to_vec();
    all_labels.extend(0..c);
    let mut is_prototype = vec![false; labels.len()];
    is_prototype.extend(std::iter::repeat_n(true, c));
    Ok(ExtendedBatch {
        embeddings: normalized.output.clone(),
        labels: all_labels,
        is_prototype,
        num_classes: c,
        batch_len: labels.len(),
        normalized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Sampled,
    Synthetic,
}

/// Where a target embedding came from, in terms of extended-batch rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Sampled { row: usize },
    /// `normalize(alpha · row_i + (1 - alpha) · row_j)`
    Synthetic { i: usize, j: usize, alpha: f64 },
}

impl Target {
    pub fn provenance(&self) -> Provenance {
        match self {
            Target::Sampled { .. } => Provenance::Sampled,
            Target::Synthetic { .. } => Provenance::Synthetic,
        }
    }
}

/// Mixes two vectors and returns `(pre-normalization, normalized)`.
pub fn mix(zi: &[f64], zj: &[f64], alpha: f64) -> (Vec<f64>, Option<Vec<f64>>) {
    let pre: Vec<f64> = zi.iter().zip(zj).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
    let n = norm(&pre);
    let unit = (n > 1e-12).then(|| pre.iter().map(|v| v / n).collect());
    (pre, unit)
}

/// An ordered list of targets with their materialized unit embeddings.
#[derive(Debug, Clone)]
pub struct TargetSet {
    pub targets: Vec<Target>,
    pub embeddings: Matrix,
}

impl TargetSet {
    pub fn build(targets: Vec<Target>, rows: &Matrix) -> Result<Self> {
        let embeddings = materialize(&targets, rows)?;
        Ok(Self { targets, embeddings })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.targets.iter().filter(|t| t.provenance() == p).count()
    }

    /// Adds the contribution of `grad` (one row per target) to `grad_rows`.
    pub fn backward(&self, rows: &Matrix, grad: &Matrix, grad_rows: &mut Matrix) {
        for (t, (target, g)) in self.targets.iter().zip(grad.row_iter()).enumerate() {
            match *target {
                Target::Sampled { row } => {
                    for (acc, v) in grad_rows.row_mut(row).iter_mut().zip(g) {
                        *acc += v;
                    }
                }
                Target::Synthetic { i, j, alpha } => {
                    let (pre, _) = mix(rows.row(i), rows.row(j), alpha);
                    let n = norm(&pre);
                    let u = self.embeddings.row(t);
                    let proj = dot(u, g);
                    let g_pre: Vec<f64> = g.iter().zip(u).map(|(gv, uv)| (gv - proj * uv) / n).collect();
                    for (acc, v) in grad_rows.row_mut(i).iter_mut().zip(&g_pre) {
                        *acc += alpha * v;
                    }
                    for (acc, v) in grad_rows.row_mut(j).iter_mut().zip(&g_pre) {
                        *acc += (1.0 - alpha) * v;
                    }
                }
            }
        }
    }
}

/// Computes target embeddings from (possibly perturbed) extended-batch rows.
pub fn materialize(targets: &[Target], rows: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(targets.len(), rows.cols());
    for (t, target) in targets.iter().enumerate() {
        match *target {
            Target::Sampled { row } => out.row_mut(t).copy_from_slice(rows.row(row)),
            Target::Synthetic { i, j, alpha } => {
                let (_, unit) = mix(rows.row(i), rows.row(j), alpha);
                let unit = unit.ok_or(Error::ZeroNorm { row: t })?;
                out.row_mut(t).copy_from_slice(&unit);
            }
        }
    }
    Ok(out)
}

/// Uniform with-replacement draws of rows labeled `c` (positives) and rows
/// labeled otherwise (negatives).
pub fn simple_sample(
    dhat: &ExtendedBatch,
    c: ClassId,
    count_pos: usize,
    count_neg: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let (pos_pool, neg_pool): (Vec<usize>, Vec<usize>) = (0..dhat.len()).partition(|&i| dhat.labels[i] == c);
    if count_pos > 0 && pos_pool.is_empty() {
        return Err(Error::invalid(format!("no rows of class {c} to sample positives from")));
    }
    if count_neg > 0 && neg_pool.is_empty() {
        return Err(Error::invalid(format!(
            "no rows outside class {c} to sample negatives from (single class?)"
        )));
    }
    let pos = (0..count_pos).map(|_| pos_pool[rng.random_range(0..pos_pool.len())]).collect();
    let neg = (0..count_neg).map(|_| neg_pool[rng.random_range(0..neg_pool.len())]).collect();
    Ok((pos, neg))
}

/// Hard positives and negatives of one class, as extended-batch row indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HardSet {
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

/// The `k` class-`c` rows least similar to `proto_c` (own prototype excluded)
/// and the `k` other-class rows most similar to it. Ties go to the smaller row.
pub fn hard_mine(dhat: &ExtendedBatch, proto_c: &[f64], c: ClassId, k: usize) -> HardSet {
    let own = dhat.prototype_row(c);
    let mut pos: Vec<(f64, usize)> = Vec::new();
    let mut neg: Vec<(f64, usize)> = Vec::new();
    for i in 0..dhat.len() {
        let s = dot(proto_c, dhat.row(i));
        if dhat.labels[i] == c {
            if i != own {
                pos.push((s, i));
            }
        } else {
            neg.push((s, i));
        }
    }
    pos.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    neg.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    HardSet {
        pos: pos.into_iter().take(k).map(|(_, i)| i).collect(),
        neg: neg.into_iter().take(k).map(|(_, i)| i).collect(),
    }
}

/// Synthesized targets plus how many could not be made because a hard set was empty.
#[derive(Debug, Clone, Default)]
pub struct MixupOutput {
    pub pos: Vec<Target>,
    pub neg: Vec<Target>,
    pub pos_shortfall: usize,
    pub neg_shortfall: usize,
}

fn mix_from_pool(
    pool: &[usize],
    count: usize,
    beta: &Beta<f64>,
    rows: &Matrix,
    rng: &mut impl Rng,
) -> Vec<Target> {
    if pool.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let a = rng.random_range(0..pool.len());
            let b = if pool.len() >= 2 {
                // uniform over the other members
                let r = rng.random_range(0..pool.len() - 1);
                if r >= a {
                    r + 1
                } else {
                    r
                }
            } else {
                a
            };
            let alpha = beta.sample(rng);
            let (i, j) = (pool[a], pool[b]);
            match mix(rows.row(i), rows.row(j), alpha).1 {
                Some(_) => Target::Synthetic { i, j, alpha },
                // antipodal pair mixed at exactly 1/2
                None => Target::Synthetic { i, j: i, alpha: 1.0 },
            }
        })
        .collect()
}

/// Mixup within the hard sets with coefficients drawn from `Beta(λ, λ)`.
pub fn hard_mixup(
    dhat: &ExtendedBatch,
    hard: &HardSet,
    m_pos: usize,
    m_neg: usize,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<MixupOutput> {
    let beta = Beta::new(lambda, lambda).map_err(|e| Error::invalid(format!("mixup lambda {lambda}: {e}")))?;
    let pos = mix_from_pool(&hard.pos, m_pos, &beta, &dhat.embeddings, rng);
    let neg = mix_from_pool(&hard.neg, m_neg, &beta, &dhat.embeddings, rng);
    Ok(MixupOutput {
        pos_shortfall: m_pos - pos.len(),
        neg_shortfall: m_neg - neg.len(),
        pos,
        neg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub t: u64,
    pub total: u64,
}

impl ScheduleState {
    pub fn new(t: u64, total: u64) -> Result<Self> {
        if total == 0 || t > total {
            return Err(Error::invalid(format!("invalid schedule t={t}, T={total}")));
        }
        Ok(Self { t, total })
    }
}

/// Share of synthetic targets: `0.5 + 0.5 · t / T`.
pub fn syn_fraction(s: ScheduleState) -> f64 {
    0.5 + 0.5 * (s.t as f64 / s.total as f64)
}

/// How the per-class targets are split between sampled and synthetic rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Composition {
    /// Synthetic share follows [`syn_fraction`].
    Scheduled,
    SampledOnly,
    SyntheticOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RebalanceConfig {
    pub k: usize,
    pub m_pos: usize,
    pub m_neg: usize,
    pub lambda: f64,
    pub composition: Composition,
}

#[derive(Debug, Clone)]
pub struct ClassTargets {
    pub pos: TargetSet,
    pub neg: TargetSet,
}

#[derive(Debug, Clone)]
pub struct RebalancedSets {
    pub classes: Vec<ClassTargets>,
    /// Synthetic targets replaced by sampled ones because a hard set was empty.
    pub shortfall: usize,
}

impl RebalancedSets {
    /// No targets for any class.
    pub fn empty(num_classes: usize, dim: usize) -> Self {
        let none = || TargetSet {
            targets: Vec::new(),
            embeddings: Matrix::zeros(0, dim),
        };
        Self {
            classes: (0..num_classes).map(|_| ClassTargets { pos: none(), neg: none() }).collect(),
            shortfall: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Routes per-class target gradients back onto the extended-batch rows.
    pub fn backward(&self, dhat: &ExtendedBatch, grad_pos: &[Matrix], grad_neg: &[Matrix], grad_rows: &mut Matrix) {
        for (c, ct) in self.classes.iter().enumerate() {
            ct.pos.backward(&dhat.embeddings, &grad_pos[c], grad_rows);
            ct.neg.backward(&dhat.embeddings, &grad_neg[c], grad_rows);
        }
    }

    /// Recomputes all target embeddings from perturbed rows, keeping provenance.
    pub fn rematerialize(&self, rows: &Matrix) -> Result<Self> {
        let classes = self
            .classes
            .iter()
            .map(|ct| {
                Ok(ClassTargets {
                    pos: TargetSet::build(ct.pos.targets.clone(), rows)?,
                    neg: TargetSet::build(ct.neg.targets.clone(), rows)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            classes,
            shortfall: self.shortfall,
        })
    }
}

/// Builds `m_pos` positive and `m_neg` negative targets for every class.
///
/// Each class draws from its own child of `stream`, so the result does not
/// depend on class iteration order.
pub fn build_rebalanced(
    dhat: &ExtendedBatch,
    cfg: &RebalanceConfig,
    schedule: ScheduleState,
    stream: SeedStream,
) -> Result<RebalancedSets> {
    if cfg.k == 0 || !(cfg.lambda > 0.0) {
        return Err(Error::invalid("rebalance config needs k >= 1 and lambda > 0"));
    }
    let frac = match cfg.composition {
        Composition::Scheduled => syn_fraction(schedule),
        Composition::SampledOnly => 0.0,
        Composition::SyntheticOnly => 1.0,
    };
    let syn_pos = (frac * cfg.m_pos as f64).round() as usize;
    let syn_neg = (frac * cfg.m_neg as f64).round() as usize;
    let mut shortfall = 0;
    let mut classes = Vec::with_capacity(dhat.num_classes());
    for c in 0..dhat.num_classes() {
        let mut rng = stream.index(c as u64).rng();
        let proto_c = dhat.row(dhat.prototype_row(c));
        let hard = hard_mine(dhat, proto_c, c, cfg.k);
        let mixed = hard_mixup(dhat, &hard, syn_pos, syn_neg, cfg.lambda, &mut rng)?;
        if mixed.pos_shortfall + mixed.neg_shortfall > 0 {
            log::debug!(
                "class {c}: empty hard set, sampling {} pos / {} neg instead of mixing",
                mixed.pos_shortfall,
                mixed.neg_shortfall
            );
        }
        shortfall += mixed.pos_shortfall + mixed.neg_shortfall;
        let (samp_pos, samp_neg) = simple_sample(
            dhat,
            c,
            cfg.m_pos - syn_pos + mixed.pos_shortfall,
            cfg.m_neg - syn_neg + mixed.neg_shortfall,
            &mut rng,
        )?;
        let assemble = |sampled: Vec<usize>, synthetic: Vec<Target>| {
            let mut t: Vec<Target> = sampled.into_iter().map(|row| Target::Sampled { row }).collect();
            t.extend(synthetic);
            TargetSet::build(t, &dhat.embeddings)
        };
        classes.push(ClassTargets {
            pos: assemble(samp_pos, mixed.pos)?,
            neg: assemble(samp_neg, mixed.neg)?,
        });
    }
    Ok(RebalancedSets { classes, shortfall })
}
