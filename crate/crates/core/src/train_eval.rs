// SPDX-License-Identifier: Apache-2.0

//! Adam training with deterministic gradient reduction, evaluation metrics,
//! and the frame, module, and modality-pair ablation protocols.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamStore};
use crate::corpus::{Label, Taxonomy, VideoPost};
use crate::encoders::seeded_rng;
use crate::error::{Error, Result};
use crate::model::network::{loss_and_grad, loss_only};
use crate::model::{
    explain, Detector, EncodedPost, EncodingConfig, FusionMode, GateMode, Modality, ModelConfig, ModelVariant, Pair,
    Verdict,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_frames: usize,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm ceiling applied before each step; `None` disables.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            epochs: 200,
            max_frames: 18,
            patience: 10,
            max_grad_norm: Some(1.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be non-negative", self.learning_rate)));
        }
        if self.max_frames == 0 || self.batch_size == 0 {
            return Err(Error::Config("max_frames and batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::Config("Adam betas must lie in [0, 1) and epsilon be positive".into()));
        }
        if matches!(self.max_grad_norm, Some(c) if !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("max_grad_norm must be positive".into()));
        }
        Ok(())
    }
}

fn clip_global_norm(g: &mut Gradients, max: f64) {
    let norm = g.values.iter().map(|a| a.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max {
        g.scale(max / norm);
    }
}

/// Adaptive-moment optimizer state aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros = Gradients::zeros_like(params).values;
        Adam { m: zeros.clone(), v: zeros, t: 0, lr: cfg.learning_rate, b1: cfg.beta1, b2: cfg.beta2, eps: cfg.epsilon }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        let names: Vec<String> = params.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            let id = params.id(name).expect("own name");
            let g = &grads.values[i];
            let (b1, b2, lr, eps) = (self.b1, self.b2, self.lr, self.eps);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.value_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub detector: Detector,
    pub curve: Vec<EpochStats>,
    /// Epoch whose parameters were kept; 0 means the initialization.
    pub best_epoch: usize,
    /// Largest absolute gradient seen per parameter group.
    pub grad_max_abs: BTreeMap<String, f64>,
}

/// Mean loss and accuracy over encoded posts, evaluated in parallel.
pub fn loss_and_accuracy(cfg: &ModelConfig, params: &ParamStore, posts: &[EncodedPost]) -> Result<(f64, f64)> {
    if posts.is_empty() {
        return Err(Error::EmptySubset);
    }
    let rows = posts
        .par_iter()
        .map(|p| loss_only(cfg, params, p).map(|(l, v)| (l, v.predicted_label == p.target)))
        .collect::<Result<Vec<_>>>()?;
    let loss = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
    let acc = rows.iter().filter(|r| r.1).count() as f64 / rows.len() as f64;
    Ok((loss, acc))
}

fn batch_gradient(cfg: &ModelConfig, params: &ParamStore, batch: &[&EncodedPost]) -> Result<(f64, Gradients)> {
    let parts =
        batch.par_iter().map(|p| loss_and_grad(cfg, params, p).map(|(l, g, _)| (l, g))).collect::<Result<Vec<_>>>()?;
    let mut total = Gradients::zeros_like(params);
    let mut loss = 0.0;
    // fixed summation order keeps the reduction deterministic
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((loss / batch.len() as f64, total))
}

/// Trains from the seeded initialization of `model`. Keeps the parameters
/// of the best validation epoch (strict improvement) and stops after
/// `patience` epochs without one. With no validation posts every epoch
/// runs and the final parameters are kept.
pub fn train(
    train_posts: &[VideoPost],
    val_posts: &[VideoPost],
    model: &ModelConfig,
    encoding: &EncodingConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if train_posts.is_empty() {
        return Err(Error::EmptySubset);
    }
    let mut det = Detector::init(model.clone(), encoding.clone(), cfg.max_frames)?;
    let enc_train = train_posts.iter().map(|p| det.encode(p)).collect::<Result<Vec<_>>>()?;
    let enc_val = val_posts.iter().map(|p| det.encode(p)).collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(&det.params, cfg);
    let mut grad_max: BTreeMap<String, f64> = det.params.groups().into_iter().map(|g| (g, 0.0)).collect();
    let group_of: Vec<String> = det.params.names().iter().map(|n| ParamStore::group_of(n).to_string()).collect();

    let mut best = det.params.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut curve = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..enc_train.len()).collect();
        order.shuffle(&mut seeded_rng(cfg.seed, &[b"epoch", &(epoch as u64).to_le_bytes()]));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&EncodedPost> = chunk.iter().map(|&i| &enc_train[i]).collect();
            let (loss, mut grads) = batch_gradient(&det.config, &det.params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            for (i, g) in grads.values.iter().enumerate() {
                let m = g.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                let e = grad_max.get_mut(&group_of[i]).expect("known group");
                *e = e.max(m);
            }
            if let Some(c) = cfg.max_grad_norm {
                clip_global_norm(&mut grads, c);
            }
            adam.step(&mut det.params, &grads);
            if !det.params.all_finite() {
                return Err(Error::Divergence { epoch, loss: f64::NAN });
            }
        }
        let (train_loss, train_accuracy) = loss_and_accuracy(&det.config, &det.params, &enc_train)?;
        if !train_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: train_loss });
        }
        let (val_loss, val_accuracy) = if enc_val.is_empty() {
            (None, None)
        } else {
            let (l, a) = loss_and_accuracy(&det.config, &det.params, &enc_val)?;
            (Some(l), Some(a))
        };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5} acc {train_accuracy:.3} val acc {}",
            val_accuracy.map_or("-".to_string(), |a| format!("{a:.3}"))
        );
        curve.push(EpochStats { epoch, train_loss, train_accuracy, val_loss, val_accuracy });
        match val_accuracy {
            Some(score) if score > best_score => {
                best_score = score;
                best = det.params.clone();
                best_epoch = epoch;
                stale = 0;
            }
            Some(_) => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            None => best_epoch = epoch,
        }
    }
    if !enc_val.is_empty() && cfg.epochs > 0 {
        det.params = best;
    }
    Ok(TrainOutcome { detector: det, curve, best_epoch, grad_max_abs: grad_max })
}

/// Binary confusion counts with inconsistent as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = Confusion::default();
        for (truth, pred) in pairs {
            match (truth.is_inconsistent(), pred.is_inconsistent()) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 1.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// 1.0 when nothing was predicted inconsistent and nothing was missed.
    pub fn precision(&self) -> f64 {
        match (self.tp + self.fp, self.fn_) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (d, _) => self.tp as f64 / d as f64,
        }
    }

    /// 1.0 when there are no inconsistent labels and none were predicted.
    pub fn recall(&self) -> f64 {
        match (self.tp + self.fn_, self.fp) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (d, _) => self.tp as f64 / d as f64,
        }
    }

    /// Binary F1 on the inconsistent class; 1.0 when there are no
    /// inconsistent labels and no inconsistent predictions.
    pub fn f1(&self) -> f64 {
        if self.tp + self.fp + self.fn_ == 0 {
            return 1.0;
        }
        if self.tp == 0 {
            return 0.0;
        }
        let (p, r) = (self.precision(), self.recall());
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyStats {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub total: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub per_taxonomy: BTreeMap<String, TaxonomyStats>,
    /// Share of correctly flagged manipulated records whose explanation
    /// names the manipulated modality; 1.0 when there are none.
    pub explanation_accuracy: f64,
    pub explained: usize,
}

/// Metrics from `(record, verdict)` pairs.
pub fn score_verdicts<'a>(rows: impl IntoIterator<Item = (&'a VideoPost, &'a Verdict)>) -> Result<EvalResult> {
    let rows: Vec<(&VideoPost, &Verdict)> = rows.into_iter().collect();
    if rows.is_empty() {
        return Err(Error::EmptySubset);
    }
    let confusion = Confusion::from_pairs(rows.iter().map(|(p, v)| (p.label, v.predicted_label)));
    let mut per: BTreeMap<String, TaxonomyStats> = BTreeMap::new();
    let mut explained = 0;
    let mut explained_ok = 0;
    for (p, v) in &rows {
        let e =
            per.entry(p.taxonomy.as_str().to_string()).or_insert(TaxonomyStats { total: 0, correct: 0, accuracy: 0.0 });
        e.total += 1;
        if v.predicted_label == p.label {
            e.correct += 1;
        }
        if let (Some(truth), true) = (Modality::of_taxonomy(p.taxonomy), v.predicted_label.is_inconsistent()) {
            explained += 1;
            if explain(&v.scores) == truth {
                explained_ok += 1;
            }
        }
    }
    for s in per.values_mut() {
        s.accuracy = s.correct as f64 / s.total as f64;
    }
    Ok(EvalResult {
        total: rows.len(),
        accuracy: confusion.accuracy(),
        precision: confusion.precision(),
        recall: confusion.recall(),
        f1: confusion.f1(),
        confusion,
        per_taxonomy: per,
        explanation_accuracy: if explained == 0 { 1.0 } else { explained_ok as f64 / explained as f64 },
        explained,
    })
}

/// Scores `posts` with `det`, in parallel.
pub fn evaluate(det: &Detector, posts: &[VideoPost]) -> Result<EvalResult> {
    if posts.is_empty() {
        return Err(Error::EmptySubset);
    }
    let verdicts = posts.par_iter().map(|p| det.forward(p)).collect::<Result<Vec<_>>>()?;
    score_verdicts(posts.iter().zip(&verdicts))
}

/// Train, validation, and test records for the ablation protocols.
#[derive(Debug, Clone, Copy)]
pub struct SplitData<'a> {
    pub train: &'a [VideoPost],
    pub val: &'a [VideoPost],
    pub test: &'a [VideoPost],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub result: EvalResult,
    pub best_epoch: usize,
    pub grad_max_abs: BTreeMap<String, f64>,
}

impl AblationRow {
    /// Parameter groups that never received a nonzero gradient.
    pub fn frozen_groups(&self) -> Vec<String> {
        self.grad_max_abs.iter().filter(|(_, v)| **v == 0.0).map(|(k, _)| k.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub kind: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Tab-separated table with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s =
            String::from("model\taccuracy\tf1\texplanation_accuracy\ttest_records\tbest_epoch\tfrozen_groups\n");
        for r in &self.rows {
            let frozen = r.frozen_groups();
            let _ = writeln!(
                s,
                "{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}",
                r.name,
                r.result.accuracy,
                r.result.f1,
                r.result.explanation_accuracy,
                r.result.total,
                r.best_epoch,
                if frozen.is_empty() { "-".to_string() } else { frozen.join(",") }
            );
        }
        s
    }
}

fn run(
    name: String,
    data: SplitData,
    model: &ModelConfig,
    encoding: &EncodingConfig,
    cfg: &TrainConfig,
) -> Result<AblationRow> {
    let out = train(data.train, data.val, model, encoding, cfg)?;
    let result = evaluate(&out.detector, data.test)?;
    Ok(AblationRow { name, result, best_epoch: out.best_epoch, grad_max_abs: out.grad_max_abs })
}

/// One train-and-test run per frame budget, same seeds throughout.
pub fn ablate_frames(
    data: SplitData,
    model: &ModelConfig,
    encoding: &EncodingConfig,
    cfg: &TrainConfig,
    frame_counts: &[usize],
) -> Result<AblationTable> {
    if frame_counts.is_empty() {
        return Err(Error::InvalidArgument("no frame counts given".into()));
    }
    let rows = frame_counts
        .iter()
        .map(|&n| {
            let c = TrainConfig { max_frames: n, ..cfg.clone() };
            run(format!("frames={n}"), data, model, encoding, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { kind: "frames".into(), rows })
}

pub const FULL_ROW: &str = "full";
pub const NO_EVENT_ALERT_ROW: &str = "w/o Event Alert Module";
pub const NO_PCA_ROW: &str = "w/o PCA";

pub fn pair_row_name(p: Pair) -> &'static str {
    match p {
        Pair::VideoClaim => "w/o Pair[Claim,Video]",
        Pair::ClaimSpeech => "w/o Pair[Claim,Speech]",
        Pair::VideoSpeech => "w/o Pair[Speech,Video]",
    }
}

/// Full model, all-ones event-alert gate, and single-stream fusion.
pub fn ablate_modules(
    data: SplitData,
    model: &ModelConfig,
    encoding: &EncodingConfig,
    cfg: &TrainConfig,
) -> Result<AblationTable> {
    let variants = [
        (FULL_ROW, ModelVariant::default()),
        (NO_EVENT_ALERT_ROW, ModelVariant { gate: GateMode::AllOnes, ..ModelVariant::default() }),
        (NO_PCA_ROW, ModelVariant { fusion: FusionMode::SingleStream, ..ModelVariant::default() }),
    ];
    let rows = variants
        .into_iter()
        .map(|(name, variant)| {
            let m = ModelConfig { variant, ..model.clone() };
            run(name.to_string(), data, &m, encoding, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { kind: "modules".into(), rows })
}

/// Full model, then each pair removed from the combiner in turn.
pub fn ablate_modality_pairs(
    data: SplitData,
    model: &ModelConfig,
    encoding: &EncodingConfig,
    cfg: &TrainConfig,
) -> Result<AblationTable> {
    let mut rows = vec![run(
        FULL_ROW.to_string(),
        data,
        &ModelConfig { variant: ModelVariant::default(), ..model.clone() },
        encoding,
        cfg,
    )?];
    for p in [Pair::VideoClaim, Pair::ClaimSpeech, Pair::VideoSpeech] {
        let m = ModelConfig { variant: ModelVariant::without_pair(p), ..model.clone() };
        rows.push(run(pair_row_name(p).to_string(), data, &m, encoding, cfg)?);
    }
    Ok(AblationTable { kind: "pairs".into(), rows })
}

/// Taxonomy mapped to the modality an explanation should name.
pub fn expected_modality(t: Taxonomy) -> Option<Modality> {
    Modality::of_taxonomy(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::tests::sample_post;
    use crate::model::ConsistencyScores;
    use proptest::prelude::*;

    fn tiny_model() -> ModelConfig {
        ModelConfig::tiny(8, 6, 3, 4)
    }

    fn tiny_posts(n: usize) -> Vec<VideoPost> {
        (0..n)
            .map(|i| {
                let mut p = sample_post(&format!("t{i:02}"), 4, 3, 3, i as u64);
                if i % 2 == 0 {
                    p.taxonomy = Taxonomy::Pristine;
                    p.label = Label::Consistent;
                } else {
                    p.taxonomy = Taxonomy::FakeVideo;
                }
                p
            })
            .collect()
    }

    fn quick(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig { epochs, learning_rate: lr, batch_size: 4, max_frames: 3, ..TrainConfig::default() }
    }

    fn labels(truth: &[bool], pred: &[bool]) -> Vec<(Label, Label)> {
        let l = |b: bool| if b { Label::Inconsistent } else { Label::Consistent };
        truth.iter().zip(pred).map(|(t, p)| (l(*t), l(*p))).collect()
    }

    #[test]
    fn hand_computed_confusion() {
        let truth = [true, true, true, false, true, true, false, false, false, false];
        let pred = [true, true, true, true, false, false, false, false, false, false];
        let c = Confusion::from_pairs(labels(&truth, &pred));
        assert_eq!(c, Confusion { tp: 3, fp: 1, fn_: 2, tn: 4 });
        assert!((c.accuracy() - 0.7).abs() < 1e-12);
        assert!((c.precision() - 0.75).abs() < 1e-12);
        assert!((c.recall() - 0.6).abs() < 1e-12);
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_conventions() {
        let c = Confusion::from_pairs(labels(&[false, false], &[false, false]));
        assert_eq!((c.accuracy(), c.precision(), c.recall(), c.f1()), (1.0, 1.0, 1.0, 1.0));
        let c = Confusion::from_pairs(labels(&[true, false], &[true, false]));
        assert_eq!((c.accuracy(), c.f1()), (1.0, 1.0));
        let c = Confusion::from_pairs(labels(&[true, true], &[false, false]));
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
    }

    proptest! {
        #[test]
        fn metrics_match_brute_force(rows in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
            let truth: Vec<bool> = rows.iter().map(|r| r.0).collect();
            let pred: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let c = Confusion::from_pairs(labels(&truth, &pred));
            let n = rows.len() as f64;
            let correct = rows.iter().filter(|(t, p)| t == p).count() as f64;
            prop_assert!((c.accuracy() - correct / n).abs() < 1e-12);
            let tp = rows.iter().filter(|(t, p)| *t && *p).count() as f64;
            let fp = rows.iter().filter(|(t, p)| !*t && *p).count() as f64;
            let fneg = rows.iter().filter(|(t, p)| *t && !*p).count() as f64;
            let f1 = if tp + fp + fneg == 0.0 { 1.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
            prop_assert!((c.f1() - f1).abs() < 1e-12);
            for m in [c.accuracy(), c.precision(), c.recall(), c.f1()] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }
    }

    #[test]
    fn score_verdicts_breakdown_and_explanations() {
        let mut posts = tiny_posts(4);
        posts[1].taxonomy = Taxonomy::FakeClaim;
        posts[3].taxonomy = Taxonomy::FakeVideo;
        let claim_low = ConsistencyScores::from_triple(0.9, 0.1, 0.2);
        let video_low = ConsistencyScores::from_triple(0.1, 0.2, 0.9);
        let v = [
            Verdict::from_parts(0.1, 0.5, video_low),
            Verdict::from_parts(0.9, 0.5, claim_low.clone()),
            Verdict::from_parts(0.8, 0.5, claim_low.clone()),
            Verdict::from_parts(0.9, 0.5, claim_low.clone()),
        ];
        let r = score_verdicts(posts.iter().zip(v.iter())).unwrap();
        assert_eq!(r.confusion, Confusion { tp: 2, fp: 1, fn_: 0, tn: 1 });
        assert_eq!(r.explained, 2);
        assert!((r.explanation_accuracy - 0.5).abs() < 1e-12);
        let total: usize = r.per_taxonomy.values().map(|s| s.total).sum();
        assert_eq!(total, 4);
        assert_eq!(r.per_taxonomy["pristine"].correct, 1);
        assert!(matches!(score_verdicts(std::iter::empty()), Err(Error::EmptySubset)));
    }

    #[test]
    fn zero_epochs_and_zero_lr_keep_initialization() {
        let posts = tiny_posts(8);
        let init = Detector::init(tiny_model(), EncodingConfig::default(), 3).unwrap();
        let out = train(&posts, &posts[..2], &tiny_model(), &EncodingConfig::default(), &quick(0, 5e-4)).unwrap();
        assert_eq!(out.detector.params, init.params);
        assert!(out.curve.is_empty());
        let out = train(&posts, &posts[..2], &tiny_model(), &EncodingConfig::default(), &quick(3, 0.0)).unwrap();
        assert_eq!(out.detector.params, init.params);
    }

    #[test]
    fn training_is_deterministic_and_evaluation_pure() {
        let posts = tiny_posts(8);
        let run = || train(&posts, &posts[..4], &tiny_model(), &EncodingConfig::default(), &quick(4, 1e-2)).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.detector.params, b.detector.params);
        assert_eq!(a.curve, b.curve);
        assert_ne!(a.detector.params, Detector::init(tiny_model(), EncodingConfig::default(), 3).unwrap().params);
        assert_eq!(evaluate(&a.detector, &posts).unwrap(), evaluate(&a.detector, &posts).unwrap());
        assert!(matches!(evaluate(&a.detector, &[]), Err(Error::EmptySubset)));
    }

    #[test]
    fn initial_loss_is_ln2_on_balanced_set() {
        let posts = tiny_posts(8);
        let det = Detector::init(tiny_model(), EncodingConfig::default(), 3).unwrap();
        let enc: Vec<_> = posts.iter().map(|p| det.encode(p).unwrap()).collect();
        let (loss, _) = loss_and_accuracy(&det.config, &det.params, &enc).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() <= 0.05 * std::f64::consts::LN_2);
    }

    #[test]
    fn ablation_tables_have_protocol_rows() {
        let posts = tiny_posts(8);
        let data = SplitData { train: &posts, val: &posts[..2], test: &posts[2..] };
        let cfg = quick(2, 1e-2);
        let enc = EncodingConfig::default();
        let m = ablate_modules(data, &tiny_model(), &enc, &cfg).unwrap();
        let names: Vec<&str> = m.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, [FULL_ROW, NO_EVENT_ALERT_ROW, NO_PCA_ROW]);
        assert_eq!(m.rows[1].grad_max_abs["gate_table"], 0.0);
        assert!(m.rows[0].grad_max_abs["gate_table"] > 0.0);
        let p = ablate_modality_pairs(data, &tiny_model(), &enc, &cfg).unwrap();
        assert_eq!(p.rows.len(), 4);
        for (row, fuser) in p.rows[1..].iter().zip(["fuser_vc", "fuser_cs", "fuser_vs"]) {
            assert_eq!(row.grad_max_abs[fuser], 0.0, "{}", row.name);
        }
        let f = ablate_frames(data, &tiny_model(), &enc, &cfg, &[1, 3]).unwrap();
        assert_eq!(f.rows.iter().map(|r| r.name.as_str()).collect::<Vec<_>>(), ["frames=1", "frames=3"]);
        let tsv = f.to_tsv();
        assert_eq!(tsv.lines().count(), 3);
        assert!(tsv.starts_with("model\taccuracy\tf1"));
        let single = ablate_frames(data, &tiny_model(), &enc, &cfg, &[3]).unwrap();
        let plain =
            evaluate(&train(data.train, data.val, &tiny_model(), &enc, &cfg).unwrap().detector, data.test).unwrap();
        assert_eq!(single.rows[0].result, plain);
    }
}
