//! Downstream classification: frozen linear probing and full finetuning,
//! macro-F1 evaluation, best-epoch selection and the label-efficiency suite.
//!
//! Both modes put a fresh linear classifier on the pooled backbone features;
//! the contrastive projection head is not used downstream. The epoch with
//! the highest validation top-1 accuracy is selected, and its macro-F1 is
//! what gets reported.

mod suite;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::{augment_view, AugmentationConfig};
use crate::dataspec::{stratified_label_subset, ImageRecord, Manifest};
use crate::image::{Image, ImageSource};
use crate::moco::{cosine_lr, EncoderState};
use crate::nn::{linear_backward, linear_forward, Batch, EncoderArch, Param, ParamSet, Sgd};
use crate::rng::{derive_seed, sample_stream, seeded};
use crate::{Error, Result};

pub use suite::{run_label_efficiency_suite, LabelEfficiencyReport, ReplicateResult, SuiteCell, SuiteConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    Frozen,
    Finetune,
}

impl std::fmt::Display for ProbeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProbeMode::Frozen => "frozen",
            ProbeMode::Finetune => "finetune",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub mode: ProbeMode,
    pub head_lr: f64,
    /// Ignored in frozen mode.
    pub backbone_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_fraction: f64,
    /// `None` selects the mode default: random resized crops for frozen
    /// probing, the pretraining pipeline for finetuning.
    pub augmentation: Option<AugmentationConfig>,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self::frozen()
    }
}

impl ProbeConfig {
    pub fn frozen() -> Self {
        Self {
            mode: ProbeMode::Frozen,
            head_lr: 1.0,
            backbone_lr: 0.0,
            weight_decay: 0.0,
            momentum: 0.9,
            epochs: 30,
            batch_size: 64,
            label_fraction: 1.0,
            augmentation: None,
            seed: 0,
        }
    }

    pub fn finetune() -> Self {
        Self {
            mode: ProbeMode::Finetune,
            backbone_lr: 3e-4,
            weight_decay: 1e-4,
            ..Self::frozen()
        }
    }

    pub fn for_mode(mode: ProbeMode) -> Self {
        match mode {
            ProbeMode::Frozen => Self::frozen(),
            ProbeMode::Finetune => Self::finetune(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::Validation(format!(
                "label_fraction must lie in (0, 1], got {}",
                self.label_fraction
            )));
        }
        // Zero learning rates are accepted to allow frozen-dynamics runs.
        if self.head_lr < 0.0 || self.backbone_lr < 0.0 || self.weight_decay < 0.0 || self.momentum < 0.0 {
            return Err(Error::Validation(
                "learning rates, weight decay and momentum must be non-negative".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch_size must be positive".into()));
        }
        if let Some(aug) = &self.augmentation {
            aug.validate()?;
        }
        Ok(())
    }

    /// Training-time augmentation for an encoder with square input `size`.
    pub fn train_augmentation(&self, size: usize) -> AugmentationConfig {
        let mut aug = self.augmentation.clone().unwrap_or_else(|| match self.mode {
            ProbeMode::Frozen => AugmentationConfig::crop_only(size, (0.08, 1.0)),
            ProbeMode::Finetune => AugmentationConfig::moco_v2(size),
        });
        aug.output_size = size;
        aug
    }
}

/// Linear classifier on standardized features: `logits = W ((x - shift)
/// * scale) + b`. `shift` and `scale` are fixed when training starts and
/// are not trained, so the whole head remains one affine map of `x`.
/// `weight` is stored `[C, d]` row-major (one row per class), `bias` `[C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    params: ParamSet,
    in_dim: usize,
    num_classes: usize,
    shift: Vec<f32>,
    scale: Vec<f32>,
}

impl ClassifierHead {
    /// Weights from `N(0, 0.01^2)`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, num_classes: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0f32, 0.01).expect("valid std");
        let weight = (0..in_dim * num_classes).map(|_| normal.sample(rng)).collect();
        Self {
            params: ParamSet::new(vec![
                Param {
                    name: "classifier.weight".into(),
                    shape: vec![num_classes, in_dim],
                    data: weight,
                },
                Param::zeros("classifier.bias", vec![num_classes]),
            ]),
            in_dim,
            num_classes,
            shift: vec![0.0; in_dim],
            scale: vec![1.0; in_dim],
        }
    }

    /// Sets `shift` to the per-dimension mean of `features` (`[n, d]`) and
    /// every `scale` to `1 / sqrt(total variance)`, so standardized vectors
    /// have unit expected squared norm.
    pub fn fit_standardization(&mut self, features: &[f32]) {
        let d = self.in_dim;
        let n = (features.len() / d).max(1) as f64;
        let mut total = 0.0;
        for j in 0..d {
            let col = features.iter().skip(j).step_by(d).map(|v| f64::from(*v));
            let mean = col.clone().sum::<f64>() / n;
            total += col.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            self.shift[j] = mean as f32;
        }
        let scale = (1.0 / total.sqrt().max(1e-12)) as f32;
        self.scale.iter_mut().for_each(|s| *s = scale);
    }

    pub fn standardize(&self, features: &[f32]) -> Vec<f32> {
        let mut x = features.to_vec();
        for row in x.chunks_mut(self.in_dim) {
            for ((v, m), s) in row.iter_mut().zip(&self.shift).zip(&self.scale) {
                *v = (*v - m) * s;
            }
        }
        x
    }

    pub fn from_parts(weight: Vec<f32>, bias: Vec<f32>, in_dim: usize) -> Result<Self> {
        let c = bias.len();
        if c == 0 || in_dim == 0 || weight.len() != c * in_dim {
            return Err(Error::Contract(format!(
                "classifier weight has {} values, expected {c} x {in_dim}",
                weight.len()
            )));
        }
        Ok(Self {
            params: ParamSet::new(vec![
                Param {
                    name: "classifier.weight".into(),
                    shape: vec![c, in_dim],
                    data: weight,
                },
                Param {
                    name: "classifier.bias".into(),
                    shape: vec![c],
                    data: bias,
                },
            ]),
            in_dim,
            num_classes: c,
            shift: vec![0.0; in_dim],
            scale: vec![1.0; in_dim],
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn weight(&self) -> &[f32] {
        &self.params.index(0).data
    }

    pub fn bias(&self) -> &[f32] {
        &self.params.index(1).data
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// `[n, C]` logits for `[n, d]` features.
    pub fn logits(&self, features: &[f32]) -> Vec<f32> {
        let n = features.len() / self.in_dim;
        let x = self.standardize(features);
        linear_forward(&x, n, self.in_dim, self.weight(), self.bias(), self.num_classes)
    }

    pub fn predict(&self, features: &[f32]) -> Vec<usize> {
        self.logits(features).chunks(self.num_classes).map(argmax).collect()
    }
}

/// Index of the first maximum.
fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1_accuracy: f64,
    pub val_macro_f1: f64,
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &[f32], labels: &[usize], num_classes: usize) -> (f64, Vec<f32>) {
    let n = labels.len();
    let mut grad = vec![0.0f32; logits.len()];
    let mut loss = 0.0;
    for ((row, g), &y) in logits.chunks(num_classes).zip(grad.chunks_mut(num_classes)).zip(labels) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(f64::from(*v)));
        let exps: Vec<f64> = row.iter().map(|v| (f64::from(*v) - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() + m - f64::from(row[y]);
        for (j, (gj, e)) in g.iter_mut().zip(&exps).enumerate() {
            let p = e / z - if j == y { 1.0 } else { 0.0 };
            *gj = (p / n as f64) as f32;
        }
    }
    (loss / n as f64, grad)
}

/// Unweighted mean of one-vs-rest F1 over all `num_classes` classes; a
/// class with no true and no predicted instances scores 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::Contract("macro_f1 needs at least one class".into()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut pred = vec![0usize; num_classes];
    let mut actual = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= num_classes || y >= num_classes {
            return Err(Error::Contract(format!("class index out of range [0, {num_classes})")));
        }
        pred[p] += 1;
        actual[y] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    let total: f64 = (0..num_classes)
        .map(|c| {
            // 2PR/(P+R) reduces to 2tp/(pred+actual); 0 when both are empty.
            let denom = pred[c] + actual[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / num_classes as f64)
}

pub fn top1_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::Contract("accuracy needs equal, non-empty sequences".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Highest validation top-1 accuracy; ties go to the earliest entry.
pub fn select_best_epoch(history: &[EpochRecord]) -> Result<&EpochRecord> {
    let mut best = history
        .first()
        .ok_or_else(|| Error::Contract("empty training history".into()))?;
    for r in &history[1..] {
        if r.val_top1_accuracy > best.val_top1_accuracy {
            best = r;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    /// Head from the selected epoch.
    pub head: ClassifierHead,
    pub best: EpochRecord,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Encoder parameters from the selected epoch (projection head untouched).
    pub encoder: ParamSet,
    pub head: ClassifierHead,
    pub best: EpochRecord,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub top1: f64,
    pub macro_f1: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

fn labeled_records(manifest: &Manifest) -> Result<Vec<(&ImageRecord, usize)>> {
    manifest.require_labels()?;
    if manifest.is_empty() {
        return Err(Error::Precondition("manifest has no records".into()));
    }
    Ok(manifest
        .records()
        .map(|(_, r)| (r, r.class_label.expect("checked")))
        .collect())
}

/// Evaluation view: the whole image resized to the encoder input.
fn eval_view(image: Image, size: usize) -> Image {
    if image.width() == size && image.height() == size {
        image
    } else {
        image.resize(size, size)
    }
}

const EVAL_CHUNK: usize = 128;

/// Pooled backbone features of the un-augmented images, `[n, feature_dim]`.
pub fn extract_features(
    arch: &EncoderArch,
    params: &ParamSet,
    records: &[&ImageRecord],
    source: &dyn ImageSource,
) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(records.len() * arch.feature_dim());
    for chunk in records.chunks(EVAL_CHUNK) {
        let imgs = chunk
            .iter()
            .map(|r| source.load(r).map(|i| eval_view(i, arch.input_size)))
            .collect::<Result<Vec<_>>>()?;
        out.extend(arch.features(params, &Batch::from_images(&imgs)?)?);
    }
    Ok(out)
}

/// Accuracy and macro-F1 of `head` on top of `params` over a labeled manifest.
pub fn evaluate(
    arch: &EncoderArch,
    params: &ParamSet,
    head: &ClassifierHead,
    manifest: &Manifest,
    source: &dyn ImageSource,
) -> Result<Evaluation> {
    let recs = labeled_records(manifest)?;
    if manifest.num_classes() != head.num_classes() {
        return Err(Error::Contract(format!(
            "head has {} classes, manifest vocabulary {}",
            head.num_classes(),
            manifest.num_classes()
        )));
    }
    let records: Vec<&ImageRecord> = recs.iter().map(|(r, _)| *r).collect();
    let labels: Vec<usize> = recs.iter().map(|(_, y)| *y).collect();
    let feats = extract_features(arch, params, &records, source)?;
    score(head.predict(&feats), labels, head.num_classes())
}

fn score(predictions: Vec<usize>, labels: Vec<usize>, c: usize) -> Result<Evaluation> {
    Ok(Evaluation {
        top1: top1_accuracy(&predictions, &labels)?,
        macro_f1: macro_f1(&predictions, &labels, c)?,
        predictions,
        labels,
    })
}

fn check_inputs(state: &EncoderState, train: &Manifest, val: &Manifest, cfg: &ProbeConfig, mode: ProbeMode) -> Result<()> {
    cfg.validate()?;
    if cfg.mode != mode {
        return Err(Error::Precondition(format!("config mode is {}, expected {mode}", cfg.mode)));
    }
    state.arch.validate()?;
    if train.class_vocabulary() != val.class_vocabulary() {
        return Err(Error::Precondition("train and validation vocabularies differ".into()));
    }
    Ok(())
}

/// The stratified `label_fraction` subset of the training manifest.
fn training_subset(train: &Manifest, cfg: &ProbeConfig) -> Result<Manifest> {
    train.require_labels()?;
    if cfg.label_fraction >= 1.0 {
        return Ok(train.clone());
    }
    stratified_label_subset(
        train,
        cfg.label_fraction,
        &mut seeded(derive_seed(cfg.seed, "probe-subset")),
    )
}

/// Shared epoch loop. `frozen` keeps the backbone fixed and caches the
/// validation features once.
struct Loop<'a> {
    arch: &'a EncoderArch,
    source: &'a dyn ImageSource,
    cfg: &'a ProbeConfig,
    aug: AugmentationConfig,
    train: Vec<(&'a ImageRecord, usize)>,
    val_records: Vec<&'a ImageRecord>,
    val_labels: Vec<usize>,
    num_classes: usize,
    total_steps: usize,
    step: usize,
}

impl<'a> Loop<'a> {
    fn new(
        arch: &'a EncoderArch,
        train: &'a Manifest,
        val: &'a Manifest,
        source: &'a dyn ImageSource,
        cfg: &'a ProbeConfig,
    ) -> Result<Self> {
        let train_recs = labeled_records(train)?;
        let val_recs = labeled_records(val)?;
        let steps_per_epoch = train_recs.len().div_ceil(cfg.batch_size);
        Ok(Self {
            arch,
            source,
            cfg,
            aug: cfg.train_augmentation(arch.input_size),
            val_records: val_recs.iter().map(|(r, _)| *r).collect(),
            val_labels: val_recs.iter().map(|(_, y)| *y).collect(),
            train: train_recs,
            num_classes: train.num_classes(),
            total_steps: cfg.epochs * steps_per_epoch,
            step: 0,
        })
    }

    fn lr_factor(&self) -> f32 {
        cosine_lr(self.step, self.total_steps, 1.0) as f32
    }

    /// Batches of augmented training views in a per-epoch shuffled order.
    fn epoch_batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut seeded(crate::rng::derive_indexed(
            derive_seed(self.cfg.seed, "probe-order"),
            &[epoch as u64],
        )));
        order.chunks(self.cfg.batch_size).map(<[usize]>::to_vec).collect()
    }

    fn views(&self, idx: &[usize], epoch: usize) -> Result<(Batch, Vec<usize>)> {
        let seed = derive_seed(self.cfg.seed, "probe-views");
        let mut imgs = Vec::with_capacity(idx.len());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let (rec, y) = self.train[i];
            let mut rng = sample_stream(seed, epoch as u64, i as u64);
            imgs.push(augment_view(&self.source.load(rec)?, &self.aug, &mut rng));
            labels.push(y);
        }
        Ok((Batch::from_images(&imgs)?, labels))
    }

    fn plain_train_features(&self, params: &ParamSet) -> Result<Vec<f32>> {
        let recs: Vec<&ImageRecord> = self.train.iter().map(|(r, _)| *r).collect();
        extract_features(self.arch, params, &recs, self.source)
    }

    fn validate_with(&self, params: &ParamSet, head: &ClassifierHead, cached: Option<&[f32]>) -> Result<Evaluation> {
        let owned;
        let feats = match cached {
            Some(f) => f,
            None => {
                owned = extract_features(self.arch, params, &self.val_records, self.source)?;
                &owned
            }
        };
        score(head.predict(feats), self.val_labels.clone(), self.num_classes)
    }
}

fn head_step(
    head: &mut ClassifierHead,
    opt: &mut Sgd,
    feats: &[f32],
    labels: &[usize],
    lr: f32,
    want_feature_grad: bool,
) -> Result<(f64, Option<Vec<f32>>)> {
    let (d, c) = (head.in_dim, head.num_classes);
    let x = head.standardize(feats);
    let logits = linear_forward(&x, labels.len(), d, head.weight(), head.bias(), c);
    let (loss, d_logits) = softmax_cross_entropy(&logits, labels, c);
    let mut grads = head.params.zeros_like();
    let (gw, gb) = {
        let mut it = grads.iter_mut();
        (it.next().expect("weight"), it.next().expect("bias"))
    };
    let d_x = linear_backward(
        &x,
        labels.len(),
        d,
        head.weight(),
        c,
        &d_logits,
        &mut gw.data,
        &mut gb.data,
        want_feature_grad,
    );
    let d_feat = d_x.map(|mut g| {
        for row in g.chunks_mut(d) {
            for (v, s) in row.iter_mut().zip(&head.scale) {
                *v *= s;
            }
        }
        g
    });
    opt.step(&mut head.params, &grads, lr)?;
    Ok((loss, d_feat))
}

/// Trains a linear classifier on frozen features of the query encoder. The
/// encoder parameters are only read.
pub fn linear_probe(
    state: &EncoderState,
    train: &Manifest,
    val: &Manifest,
    source: &dyn ImageSource,
    cfg: &ProbeConfig,
) -> Result<ProbeOutcome> {
    check_inputs(state, train, val, cfg, ProbeMode::Frozen)?;
    let arch = &state.arch;
    let params = &state.query;
    let train = &training_subset(train, cfg)?;
    let mut lp = Loop::new(arch, train, val, source, cfg)?;
    let val_feats = extract_features(arch, params, &lp.val_records, source)?;
    let mut head = ClassifierHead::init(
        arch.feature_dim(),
        lp.num_classes,
        &mut seeded(derive_seed(cfg.seed, "probe-head")),
    );
    head.fit_standardization(&lp.plain_train_features(params)?);
    let mut opt = Sgd::new(&head.params, cfg.momentum as f32, cfg.weight_decay as f32);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(EpochRecord, ClassifierHead)> = None;
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let batches = lp.epoch_batches(epoch);
        for idx in &batches {
            let (batch, labels) = lp.views(idx, epoch)?;
            let feats = arch.features(params, &batch)?;
            let lr = (cfg.head_lr as f32) * lp.lr_factor();
            loss_sum += head_step(&mut head, &mut opt, &feats, &labels, lr, false)?.0;
            lp.step += 1;
        }
        let ev = lp.validate_with(params, &head, Some(&val_feats))?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_top1_accuracy: ev.top1,
            val_macro_f1: ev.macro_f1,
        };
        if best.as_ref().is_none_or(|(b, _)| rec.val_top1_accuracy > b.val_top1_accuracy) {
            best = Some((rec.clone(), head.clone()));
        }
        history.push(rec);
    }
    let (best, head) = best.expect("epochs > 0");
    Ok(ProbeOutcome { head, best, history })
}

/// Trains the backbone and a fresh classifier jointly, with separate
/// learning rates for the two parameter groups.
pub fn finetune(
    state: &EncoderState,
    train: &Manifest,
    val: &Manifest,
    source: &dyn ImageSource,
    cfg: &ProbeConfig,
) -> Result<FinetuneOutcome> {
    check_inputs(state, train, val, cfg, ProbeMode::Finetune)?;
    let arch = &state.arch;
    let mut params = state.query.clone();
    let backbone = arch.backbone_param_range();
    let train = &training_subset(train, cfg)?;
    let mut lp = Loop::new(arch, train, val, source, cfg)?;
    let mut head = ClassifierHead::init(
        arch.feature_dim(),
        lp.num_classes,
        &mut seeded(derive_seed(cfg.seed, "probe-head")),
    );
    head.fit_standardization(&lp.plain_train_features(&params)?);
    let mut head_opt = Sgd::new(&head.params, cfg.momentum as f32, cfg.weight_decay as f32);
    let mut body_opt = Sgd::new(&params, cfg.momentum as f32, cfg.weight_decay as f32);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(EpochRecord, ParamSet, ClassifierHead)> = None;
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let batches = lp.epoch_batches(epoch);
        for idx in &batches {
            let (batch, labels) = lp.views(idx, epoch)?;
            let (feats, cache) = arch.features_train(&params, &batch)?;
            let f = lp.lr_factor();
            let (loss, d_feat) = head_step(&mut head, &mut head_opt, &feats, &labels, cfg.head_lr as f32 * f, true)?;
            let mut grads = params.zeros_like();
            arch.backward_features(&params, &cache, &d_feat.expect("requested"), &mut grads)?;
            body_opt.step_range(&mut params, &grads, cfg.backbone_lr as f32 * f, backbone.clone())?;
            loss_sum += loss;
            lp.step += 1;
        }
        let ev = lp.validate_with(&params, &head, None)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_top1_accuracy: ev.top1,
            val_macro_f1: ev.macro_f1,
        };
        if best.as_ref().is_none_or(|(b, ..)| rec.val_top1_accuracy > b.val_top1_accuracy) {
            best = Some((rec.clone(), params.clone(), head.clone()));
        }
        history.push(rec);
    }
    let (best, encoder, head) = best.expect("epochs > 0");
    Ok(FinetuneOutcome {
        encoder,
        head,
        best,
        history,
    })
}
