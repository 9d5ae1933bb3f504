//! Joint training of the classification and contrastive branches, evaluation,
//! and the ablation / sensitivity harnesses.

pub mod ablation;
pub mod benchmark;
pub mod config;
pub mod metrics;
pub mod probe;

use serde::{Deserialize, Serialize};

use crate::classifier::{logit_compensated_loss, ClassifierParams, CompensationVector};
use crate::contrastive::{anchor_weights, rebalanced_cl_loss, LossBreakdown};
use crate::corpus::{class_priors, iter_batches, ClassId, Dataset, Vocabulary};
use crate::encoder::{Encoder, FeatureProjector, MeanPoolEncoder};
use crate::error::{Error, Result};
use crate::numerics::{l2_normalize, norm, Affine, AdamW, HasParams, Matrix, Param, SeedStream};
use crate::rebalance::{build_rebalanced, extend_with_prototypes, RebalancedSets, ScheduleState};

pub use ablation::{run_ablation_matrix, run_k_sweep, summarize, AblationRow, VariantSummary};
pub use config::{apply_ablation, AblationVariant, PipelineFlags, TrainConfig};
pub use metrics::MetricsReport;
pub use probe::fit_probe;

const EVAL_CHUNK: usize = 512;

/// All trainable state of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub encoder: MeanPoolEncoder,
    pub projector: FeatureProjector,
    pub classifier: ClassifierParams,
    /// Independent `C x h2` prototypes, present only when prototypes are
    /// decoupled from the classifier.
    pub free_prototypes: Option<Param>,
    /// Post-hoc linear probe used for prediction when set.
    pub probe: Option<Affine>,
    pub optimizer: AdamW,
    pub t: u64,
    pub total: u64,
}

impl ModelState {
    pub fn init(cfg: &TrainConfig, vocab_size: usize, num_classes: usize, total: u64) -> Result<Self> {
        cfg.validate()?;
        if num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if total == 0 {
            return Err(Error::Config("total step count must be positive".into()));
        }
        let root = SeedStream::new(cfg.seed).child("init");
        let encoder = MeanPoolEncoder::init(vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.feat_dim, &mut root.child("encoder").rng());
        let projector = FeatureProjector::init(cfg.feat_dim, cfg.hidden_dim, cfg.proj_dim, &mut root.child("projector").rng());
        let classifier = ClassifierParams::init(cfg.feat_dim, num_classes, cfg.hidden_dim, cfg.proj_dim, &mut root.child("classifier").rng());
        let free_prototypes = cfg.flags().free_prototypes.then(|| {
            let bound = 1.0 / (cfg.proj_dim as f64).sqrt();
            Param::uniform(num_classes, cfg.proj_dim, bound, &mut root.child("prototypes").rng())
        });
        Ok(Self {
            encoder,
            projector,
            classifier,
            free_prototypes,
            probe: None,
            optimizer: AdamW::new(cfg.learning_rate, cfg.weight_decay),
            t: 0,
            total,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn vocab_size(&self) -> usize {
        self.encoder.vocab_size()
    }

    fn trainable(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend(self.projector.params_mut());
        v.extend(self.classifier.params_mut());
        if let Some(p) = self.free_prototypes.as_mut() {
            v.push(p);
        }
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.trainable() {
            p.zero_grad();
        }
    }

    /// Encoder features for every sequence.
    pub fn features(&self, sequences: &[Vec<usize>]) -> Result<Matrix> {
        self.chunked(sequences, |s, refs| Ok(s.encoder.encode(refs)?.0))
    }

    /// Unit-norm contrastive embeddings for every sequence.
    pub fn embeddings(&self, sequences: &[Vec<usize>]) -> Result<Matrix> {
        self.chunked(sequences, |s, refs| {
            let (feat, _) = s.encoder.encode(refs)?;
            let (z, _) = s.projector.project(&feat)?;
            Ok(l2_normalize(&z)?.output)
        })
    }

    /// Scores used for prediction: the probe if present, otherwise raw logits.
    pub fn scores(&self, sequences: &[Vec<usize>]) -> Result<Matrix> {
        self.chunked(sequences, |s, refs| {
            let (feat, _) = s.encoder.encode(refs)?;
            match &s.probe {
                Some(p) => p.forward(&feat),
                None => s.classifier.class_logits(&feat),
            }
        })
    }

    pub fn predict(&self, sequences: &[Vec<usize>]) -> Result<Vec<ClassId>> {
        let scores = self.scores(sequences)?;
        Ok(scores.row_iter().map(argmax).collect())
    }

    fn chunked(&self, sequences: &[Vec<usize>], f: impl Fn(&Self, &[&[usize]]) -> Result<Matrix>) -> Result<Matrix> {
        if sequences.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut out: Option<Matrix> = None;
        for chunk in sequences.chunks(EVAL_CHUNK) {
            let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
            let m = f(self, &refs)?;
            out = Some(match out {
                None => m,
                Some(acc) => acc.vstack(&m)?,
            });
        }
        Ok(out.expect("non-empty input"))
    }
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-run constants derived from the class priors and the variant.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub flags: PipelineFlags,
    pub delta_cls: CompensationVector,
    pub anchor_weights: Vec<f64>,
    pub cfg: TrainConfig,
}

impl StepContext {
    pub fn new(cfg: &TrainConfig, priors: &[f64]) -> Result<Self> {
        let flags = cfg.flags();
        let delta = CompensationVector::from_priors(priors)?;
        let weights = anchor_weights(&delta, flags.weight_mode);
        Ok(Self {
            flags,
            delta_cls: if flags.delta_in_cls {
                delta
            } else {
                CompensationVector::zeros(priors.len())
            },
            anchor_weights: weights,
            cfg: cfg.clone(),
        })
    }
}

/// Forward and backward pass on one batch; accumulates gradients into `state`
/// without stepping the optimizer.
pub fn compute_gradients(
    state: &mut ModelState,
    sequences: &[&[usize]],
    labels: &[ClassId],
    ctx: &StepContext,
    stream: SeedStream,
) -> Result<LossBreakdown> {
    if sequences.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let flags = &ctx.flags;
    let (feat, enc_cache) = state.encoder.encode(sequences)?;
    let mut grad_feat = Matrix::zeros(feat.rows(), feat.cols());
    let mut out = LossBreakdown::default();

    if flags.cls_weight > 0.0 {
        let logits = state.classifier.class_logits(&feat)?;
        let (l_cls, mut g_logits) = logit_compensated_loss(&logits, labels, &ctx.delta_cls)?;
        g_logits.scale(flags.cls_weight);
        let g = state.classifier.logits_backward(&feat, &g_logits)?;
        out.l_cls = l_cls;
        out.grad_norm_cls = norm(g.as_slice());
        grad_feat.add_assign(&g)?;
    }

    if flags.uses_cl() {
        let proto_cache = match &state.free_prototypes {
            Some(_) => None,
            None => Some(state.classifier.make_prototypes()?),
        };
        let proto = match (&proto_cache, &state.free_prototypes) {
            (Some((p, _)), _) => p.clone(),
            (None, Some(p)) => p.value.clone(),
            (None, None) => unreachable!(),
        };
        let (z, proj_cache) = state.projector.project(&feat)?;
        let dhat = extend_with_prototypes(&z, labels, &proto)?;
        let rebal = match flags.rebalance_config(&ctx.cfg) {
            None => RebalancedSets::empty(dhat.num_classes(), dhat.dim()),
            Some(rcfg) => {
                let schedule = ScheduleState::new(state.t.min(state.total), state.total)?;
                build_rebalanced(&dhat, &rcfg, schedule, stream.child("rebalance"))?
            }
        };
        let cl = rebalanced_cl_loss(&dhat, &rebal, &ctx.anchor_weights, ctx.cfg.tau)?;
        let mut grad_rows = cl.grad_rows;
        grad_rows.scale(flags.mu);
        let (g_z, g_proto) = dhat.backward(&grad_rows)?;
        let g = state.projector.backward(&proj_cache, &g_z)?;
        match (&proto_cache, state.free_prototypes.as_mut()) {
            (Some((_, cache)), _) => state.classifier.prototypes_backward(cache, &g_proto)?,
            (None, Some(p)) => p.grad.add_assign(&g_proto)?,
            (None, None) => unreachable!(),
        }
        out.l_cl = cl.loss;
        out.per_anchor = cl.per_anchor;
        out.skipped_anchors = cl.skipped;
        out.shortfall = rebal.shortfall;
        out.grad_norm_cl = norm(g.as_slice());
        grad_feat.add_assign(&g)?;
    }

    state.encoder.backward(&enc_cache, &grad_feat)?;
    out.l_overall = flags.cls_weight * out.l_cls + flags.mu * out.l_cl;
    Ok(out)
}

/// One optimizer step on a batch.
pub fn train_step(
    state: &mut ModelState,
    sequences: &[&[usize]],
    labels: &[ClassId],
    ctx: &StepContext,
    stream: SeedStream,
) -> Result<LossBreakdown> {
    state.zero_grad();
    let losses = compute_gradients(state, sequences, labels, ctx, stream)?;
    if !losses.l_overall.is_finite() {
        return Err(Error::Diverged {
            step: state.t,
            detail: format!("loss_cls={} loss_cl={}", losses.l_cls, losses.l_cl),
        });
    }
    let mut opt = state.optimizer.clone();
    opt.step(&mut state.trainable()).map_err(|e| Error::Diverged {
        step: state.t,
        detail: e.to_string(),
    })?;
    state.optimizer = opt;
    state.t += 1;
    Ok(losses)
}

/// Total loss on a batch without changing `state`.
pub fn batch_loss(state: &ModelState, sequences: &[&[usize]], labels: &[ClassId], ctx: &StepContext, stream: SeedStream) -> Result<f64> {
    let mut scratch = state.clone();
    Ok(compute_gradients(&mut scratch, sequences, labels, ctx, stream)?.l_overall)
}

/// Stream for step `t` of a run.
pub fn step_stream(seed: u64, t: u64) -> SeedStream {
    SeedStream::new(seed).child("step").index(t)
}

/// A dataset mapped to token ids.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub sequences: Vec<Vec<usize>>,
    pub labels: Vec<ClassId>,
    pub num_classes: usize,
}

impl Encoded {
    pub fn new(dataset: &Dataset, vocab: &Vocabulary) -> Self {
        Self {
            sequences: dataset.examples().iter().map(|e| vocab.encode(&e.tokens)).collect(),
            labels: dataset.labels(),
            num_classes: dataset.num_classes(),
        }
    }
}

pub fn evaluate_encoded(state: &ModelState, data: &Encoded) -> Result<MetricsReport> {
    let predicted = state.predict(&data.sequences)?;
    MetricsReport::from_predictions(&data.labels, &predicted, data.num_classes)
}

/// Accuracy and macro-F1 of `state` on `dataset`.
pub fn evaluate(state: &ModelState, dataset: &Dataset, vocab: &Vocabulary) -> Result<MetricsReport> {
    if dataset.num_classes() != state.num_classes() {
        return Err(Error::invalid(format!(
            "model has {} classes, dataset {}",
            state.num_classes(),
            dataset.num_classes()
        )));
    }
    evaluate_encoded(state, &Encoded::new(dataset, vocab))
}

/// Refits the linear probe on frozen training features.
pub fn refit_probe(state: &mut ModelState, train: &Encoded, cfg: &TrainConfig, epoch: usize) -> Result<()> {
    let feats = state.features(&train.sequences)?;
    let stream = SeedStream::new(cfg.seed).child("probe").index(epoch as u64);
    state.probe = Some(fit_probe(
        &feats,
        &train.labels,
        train.num_classes,
        cfg.probe_steps,
        cfg.probe_learning_rate,
        cfg.weight_decay,
        stream,
    )?);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss_cls: f64,
    pub loss_cl: f64,
    pub loss_overall: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
    pub eval_macro_f1: Option<f64>,
}

pub const HISTORY_HEADER: &str = "epoch,loss_cls,loss_cl,loss_overall,train_acc,eval_acc,eval_macro_f1";

/// CSV with [`HISTORY_HEADER`]; missing evaluation values are empty fields.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch,
            r.loss_cls,
            r.loss_cl,
            r.loss_overall,
            r.train_acc,
            opt(r.eval_acc),
            opt(r.eval_macro_f1)
        ));
    }
    s
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub vocab: Vocabulary,
    pub state: ModelState,
    pub history: Vec<HistoryRow>,
}

/// Trains from scratch on `train`, evaluating on `eval` after every epoch.
pub fn train(cfg: &TrainConfig, train: &Dataset, eval: Option<&Dataset>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let vocab = Vocabulary::build(train, cfg.min_freq)?;
    let priors = class_priors(train)?;
    let ctx = StepContext::new(cfg, &priors)?;
    let train_enc = Encoded::new(train, &vocab);
    let eval_enc = eval.map(|d| Encoded::new(d, &vocab));
    let per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let total = per_epoch * cfg.epochs as u64;
    let mut state = ModelState::init(cfg, vocab.len(), train.num_classes(), total)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = iter_batches(train, cfg.batch_size, cfg.seed, epoch as u64)?;
        let (mut s_cls, mut s_cl, mut s_all) = (0.0, 0.0, 0.0);
        for batch in &batches {
            let refs: Vec<&[usize]> = batch.indices.iter().map(|&i| train_enc.sequences[i].as_slice()).collect();
            let stream = step_stream(cfg.seed, state.t);
            let l = train_step(&mut state, &refs, &batch.labels, &ctx, stream)?;
            s_cls += l.l_cls;
            s_cl += l.l_cl;
            s_all += l.l_overall;
        }
        if ctx.flags.probe {
            refit_probe(&mut state, &train_enc, cfg, epoch)?;
        }
        let nb = batches.len() as f64;
        let train_acc = evaluate_encoded(&state, &train_enc)?.accuracy;
        let eval_report = eval_enc.as_ref().map(|e| evaluate_encoded(&state, e)).transpose()?;
        let row = HistoryRow {
            epoch: epoch + 1,
            loss_cls: s_cls / nb,
            loss_cl: s_cl / nb,
            loss_overall: s_all / nb,
            train_acc,
            eval_acc: eval_report.as_ref().map(|r| r.accuracy),
            eval_macro_f1: eval_report.as_ref().map(|r| r.macro_f1),
        };
        log::info!(
            "epoch {} loss {:.4} (cls {:.4}, cl {:.4}) train_acc {:.4}",
            row.epoch,
            row.loss_overall,
            row.loss_cls,
            row.loss_cl,
            row.train_acc
        );
        history.push(row);
    }
    Ok(TrainOutcome { vocab, state, history })
}

/// Everything needed to reload a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub state: ModelState,
}

impl SavedModel {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::invalid(format!("serializing model: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut m: SavedModel = serde_json::from_str(s).map_err(|e| Error::Config(format!("model file: {e}")))?;
        m.vocab = m.vocab.reindex();
        if m.vocab.len() != m.state.vocab_size() {
            return Err(Error::invalid(format!(
                "vocabulary has {} entries but the embedding table {}",
                m.vocab.len(),
                m.state.vocab_size()
            )));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, Example, View};
    use std::path::Path;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            epochs: 3,
            embed_dim: 8,
            feat_dim: 8,
            hidden_dim: 12,
            proj_dim: 6,
            k: 3,
            m_pos: 4,
            m_neg: 6,
            probe_steps: 50,
            ..TrainConfig::default()
        }
    }

    fn toy() -> Dataset {
        let mut text = String::new();
        for i in 0..12 {
            text.push_str(&format!("0\tapple pear fig w{}\n", i % 4));
        }
        for i in 0..4 {
            text.push_str(&format!("1\tstone rock sand w{}\n", i % 4));
        }
        parse_corpus(&text, 2, Path::new("toy")).unwrap()
    }

    fn batch(ds: &Dataset, vocab: &Vocabulary) -> (Vec<Vec<usize>>, Vec<usize>) {
        let e = Encoded::new(ds, vocab);
        (e.sequences, e.labels)
    }

    fn setup(cfg: &TrainConfig) -> (ModelState, StepContext, Vec<Vec<usize>>, Vec<usize>) {
        let ds = toy();
        let vocab = Vocabulary::build(&ds, 1).unwrap();
        let state = ModelState::init(cfg, vocab.len(), 2, 10).unwrap();
        let ctx = StepContext::new(cfg, &class_priors(&ds).unwrap()).unwrap();
        let (s, l) = batch(&ds, &vocab);
        (state, ctx, s, l)
    }

    #[test]
    fn overall_is_weighted_sum() {
        for v in AblationVariant::ALL {
            let cfg = TrainConfig {
                ablation: v,
                mu: 0.7,
                ..tiny_cfg()
            };
            let (mut state, ctx, s, l) = setup(&cfg);
            let refs: Vec<&[usize]> = s.iter().map(Vec::as_slice).collect();
            let out = train_step(&mut state, &refs, &l, &ctx, SeedStream::new(1)).unwrap();
            let f = cfg.flags();
            assert!((out.l_overall - (f.cls_weight * out.l_cls + f.mu * out.l_cl)).abs() <= 1e-10, "{v}");
            assert_eq!(state.t, 1);
        }
    }

    /// Classification-only step written out by hand.
    fn manual_cls_step(state: &mut ModelState, seqs: &[&[usize]], labels: &[usize], delta: &CompensationVector) {
        let (feat, cache) = state.encoder.encode(seqs).unwrap();
        let logits = state.classifier.class_logits(&feat).unwrap();
        let (_, g) = logit_compensated_loss(&logits, labels, delta).unwrap();
        let gf = state.classifier.logits_backward(&feat, &g).unwrap();
        state.encoder.backward(&cache, &gf).unwrap();
        let mut params: Vec<&mut Param> = state.encoder.params_mut();
        params.extend(state.projector.params_mut());
        params.extend(state.classifier.params_mut());
        state.optimizer.step(&mut params).unwrap();
    }

    #[test]
    fn mu_zero_matches_classification_only_step() {
        let cfg = TrainConfig { mu: 0.0, ..tiny_cfg() };
        let (mut a, ctx, s, l) = setup(&cfg);
        let mut b = a.clone();
        let refs: Vec<&[usize]> = s.iter().map(Vec::as_slice).collect();
        for t in 0..3 {
            train_step(&mut a, &refs, &l, &ctx, SeedStream::new(t)).unwrap();
            manual_cls_step(&mut b, &refs, &l, &ctx.delta_cls);
        }
        b.t = 3;
        assert_eq!(a, b);
    }

    #[test]
    fn nocls_still_updates_w_through_prototypes() {
        let cfg = TrainConfig {
            ablation: AblationVariant::NoCLS,
            ..tiny_cfg()
        };
        let (mut state, ctx, s, l) = setup(&cfg);
        let refs: Vec<&[usize]> = s.iter().map(Vec::as_slice).collect();
        state.zero_grad();
        let out = compute_gradients(&mut state, &refs, &l, &ctx, SeedStream::new(0)).unwrap();
        assert_eq!(out.l_cls, 0.0);
        assert_eq!(out.l_overall, out.l_cl);
        assert!(norm(state.classifier.w.grad.as_slice()) > 0.0);
    }

    #[test]
    fn nomi_leaves_w_without_contrastive_gradient() {
        let cfg = TrainConfig {
            ablation: AblationVariant::NoMI,
            ..tiny_cfg()
        };
        let (mut state, ctx, s, l) = setup(&cfg);
        let refs: Vec<&[usize]> = s.iter().map(Vec::as_slice).collect();
        state.zero_grad();
        compute_gradients(&mut state, &refs, &l, &ctx, SeedStream::new(0)).unwrap();
        let with_cl = state.classifier.w.grad.clone();
        assert!(norm(state.free_prototypes.as_ref().unwrap().grad.as_slice()) > 0.0);
        assert!(state.classifier.proj_h.params_mut().iter().all(|p| p.grad.as_slice().iter().all(|&g| g == 0.0)));
        // w's gradient comes from the classification loss alone
        let mut cls_only = ctx.clone();
        cls_only.flags.mu = 0.0;
        state.zero_grad();
        compute_gradients(&mut state, &refs, &l, &cls_only, SeedStream::new(0)).unwrap();
        assert_eq!(with_cl, state.classifier.w.grad);
    }

    /// Total-loss gradient w.r.t. every parameter against finite differences,
    /// including the routes through mixup sources and prototypes. Output biases
    /// are set away from zero so no projected row sits near the origin, where
    /// normalization is too curved for a 1e-5 step.
    #[test]
    fn full_gradient_matches_finite_differences() {
        for v in AblationVariant::ALL {
            let cfg = TrainConfig {
                embed_dim: 3,
                feat_dim: 3,
                hidden_dim: 8,
                proj_dim: 3,
                k: 2,
                m_pos: 3,
                m_neg: 3,
                ablation: v,
                ..tiny_cfg()
            };
            let (mut state, ctx, s, l) = setup(&cfg);
            state.projector.head.second.bias.value = Matrix::from_vec(1, 3, vec![0.6, -0.4, 0.5]).unwrap();
            state.classifier.proj_h.second.bias.value = Matrix::from_vec(1, 3, vec![-0.3, 0.5, 0.4]).unwrap();
            let idx = [0usize, 5, 12, 13, 14];
            let refs: Vec<&[usize]> = idx.iter().map(|&i| s[i].as_slice()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| l[i]).collect();
            let mut g = state.clone();
            g.zero_grad();
            compute_gradients(&mut g, &refs, &labels, &ctx, SeedStream::new(3)).unwrap();
            let n_params = g.clone().trainable().len();
            for pi in 0..n_params {
                let analytic = g.clone().trainable()[pi].grad.clone();
                let base = state.clone().trainable()[pi].value.clone();
                let fd = crate::numerics::central_difference(
                    |p| {
                        let mut st = state.clone();
                        st.trainable()[pi].value = Matrix::from_vec(base.rows(), base.cols(), p.to_vec()).unwrap();
                        batch_loss(&st, &refs, &labels, &ctx, SeedStream::new(3)).unwrap()
                    },
                    base.as_slice(),
                    1e-5,
                );
                let err = crate::numerics::max_relative_error(analytic.as_slice(), &fd);
                assert!(err <= 1e-4, "{v} param {pi}: {err}");
            }
        }
    }

    #[test]
    fn descent_on_fixed_batch() {
        let mut held = 0;
        for seed in 0..5 {
            let cfg = TrainConfig { seed, ..tiny_cfg() };
            let (mut state, ctx, s, l) = setup(&cfg);
            let refs: Vec<&[usize]> = s.iter().map(Vec::as_slice).collect();
            let stream = SeedStream::new(seed + 100);
            let before = batch_loss(&state, &refs, &l, &ctx, stream).unwrap();
            train_step(&mut state, &refs, &l, &ctx, stream).unwrap();
            state.t = 0;
            let after = batch_loss(&state, &refs, &l, &ctx, stream).unwrap();
            if after < before {
                held += 1;
            }
        }
        assert!(held >= 3, "descent held in {held}/5");
    }

    #[test]
    fn separable_toy_reaches_full_training_accuracy() {
        let mut ex = Vec::new();
        for i in 0..20 {
            let (label, words) = if i % 2 == 0 { (0, ["red", "blue", "green"]) } else { (1, ["cat", "dog", "cow"]) };
            ex.push(Example {
                tokens: vec![words[i % 3].to_string(), words[(i + 1) % 3].to_string()],
                label,
                view: View::Original,
            });
        }
        let ds = Dataset::new(ex, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            k: 3,
            m_pos: 4,
            m_neg: 6,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &ds, None).unwrap();
        assert!(out.history.iter().any(|r| r.train_acc == 1.0));
        assert_eq!(out.history.last().unwrap().train_acc, 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = toy();
        for v in [AblationVariant::Full, AblationVariant::NoCLS, AblationVariant::NoMI] {
            let cfg = TrainConfig { ablation: v, ..tiny_cfg() };
            let a = train(&cfg, &ds, Some(&ds)).unwrap();
            let b = train(&cfg, &ds, Some(&ds)).unwrap();
            assert_eq!(history_csv(&a.history), history_csv(&b.history));
            assert_eq!(a.state, b.state);
            assert_eq!(a.history.len(), 3);
        }
    }

    #[test]
    fn history_format() {
        let rows = [HistoryRow {
            epoch: 1,
            loss_cls: 0.5,
            loss_cl: 1.25,
            loss_overall: 1.75,
            train_acc: 1.0,
            eval_acc: None,
            eval_macro_f1: Some(0.5),
        }];
        assert_eq!(history_csv(&rows), format!("{HISTORY_HEADER}\n1,0.5,1.25,1.75,1,,0.5\n"));
    }

    #[test]
    fn saved_model_round_trip() {
        let ds = toy();
        let cfg = tiny_cfg();
        let out = train(&cfg, &ds, None).unwrap();
        let saved = SavedModel {
            config: cfg,
            vocab: out.vocab.clone(),
            state: out.state.clone(),
        };
        let back = SavedModel::from_json(&saved.to_json().unwrap()).unwrap();
        assert_eq!(back.vocab.id("apple"), out.vocab.id("apple"));
        let a = evaluate(&out.state, &ds, &out.vocab).unwrap();
        let b = evaluate(&back.state, &ds, &back.vocab).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_first_max() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[-1.0]), 0);
    }
}
