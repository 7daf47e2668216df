//! Training loops, augmentation, patient-level folds and the fold ensemble.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Mask};
use crate::losses::{bce_with_logits, LossKind, Reduction, SegLoss};
use crate::models::{
    build_classifier, build_segmenter, load_segmenter, Classifier, ClassifierSpec, SegNetSpec,
    Segmenter, SegmenterInput,
};
use crate::nn::{exponential_lr, sigmoid, Adam, Module, Tensor};
use crate::sampling::{frame_consensus_positive_with, sample_labels, vote_mask, LabelStrategy, SampledLabel};
use crate::screen_eval::dice_coefficient;
use crate::synthdata::FrameRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub seg_initial_lr: f64,
    pub clf_initial_lr: f64,
    /// Per-epoch decay factor of the exponential schedule.
    pub lr_gamma: f64,
    pub epochs: usize,
    /// Classifier epochs; `None` reuses `epochs`.
    pub clf_epochs: Option<usize>,
    pub loss: LossKind,
    pub reduction: Reduction,
    pub swap_wbce_weights: bool,
    pub label_strategy: LabelStrategy,
    /// Draw random/combination labels once instead of every epoch.
    pub freeze_sampling: bool,
    pub min_consensus_pixels: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            seg_initial_lr: 1e-3,
            clf_initial_lr: 1e-4,
            lr_gamma: 0.99,
            epochs: 40,
            clf_epochs: None,
            loss: LossKind::Dice,
            reduction: Reduction::Mean,
            swap_wbce_weights: false,
            label_strategy: LabelStrategy::Vote,
            freeze_sampling: false,
            min_consensus_pixels: 1,
            folds: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.clf_epochs == Some(0) {
            return Err(Error::config("clf_epochs", "must be at least 1"));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::config("lr_gamma", format!("{} outside (0, 1]", self.lr_gamma)));
        }
        for (field, lr) in [("seg_initial_lr", self.seg_initial_lr), ("clf_initial_lr", self.clf_initial_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(field, "must be a positive finite value"));
            }
        }
        if self.folds < 2 {
            return Err(Error::config("folds", "must be at least 2"));
        }
        if let LabelStrategy::Combination { vote_fraction } = self.label_strategy {
            LabelStrategy::combination(vote_fraction)?;
        }
        Ok(())
    }

    pub fn seg_loss(&self) -> SegLoss {
        SegLoss { kind: self.loss, reduction: self.reduction, swap_wbce_weights: self.swap_wbce_weights }
    }

    pub fn classifier_epochs(&self) -> usize {
        self.clf_epochs.unwrap_or(self.epochs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Probability with which each transform fires.
    pub probability: f64,
    pub rotation_deg: f64,
    /// Maximum shift as a fraction of the frame dimension.
    pub max_translation: f64,
    pub scale_range: [f64; 2],
    pub flip: bool,
    /// Fire all transforms together with one draw instead of independently.
    pub augment_as_bundle: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            probability: 0.3,
            rotation_deg: 2.5,
            max_translation: 0.05,
            scale_range: [0.95, 1.0],
            flip: true,
            augment_as_bundle: false,
        }
    }
}

impl AugmentationConfig {
    /// No transform ever fires.
    pub fn disabled() -> Self {
        Self { probability: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::config("probability", format!("{} outside [0, 1]", self.probability)));
        }
        if !(0.0..=180.0).contains(&self.rotation_deg) {
            return Err(Error::config("rotation_deg", format!("{} outside [0, 180]", self.rotation_deg)));
        }
        if !(0.0..=0.5).contains(&self.max_translation) {
            return Err(Error::config("max_translation", format!("{} outside [0, 0.5]", self.max_translation)));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config("scale_range", format!("[{lo}, {hi}] is not a positive range")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub rotation_deg: f64,
    /// Shift as fractions of height and width.
    pub translate_y: f64,
    pub translate_x: f64,
    pub scale: f64,
}

/// The transforms chosen for one sample; applied identically to image and label.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AugmentPlan {
    pub affine: Option<AffineParams>,
    pub flip: bool,
}

impl AugmentPlan {
    pub fn is_identity(&self) -> bool {
        self.affine.is_none() && !self.flip
    }
}

pub fn draw_plan<R: Rng + ?Sized>(config: &AugmentationConfig, rng: &mut R) -> AugmentPlan {
    let p = config.probability.clamp(0.0, 1.0);
    let (fire_affine, fire_flip) = if config.augment_as_bundle {
        let b = rng.random_bool(p);
        (b, b)
    } else {
        (rng.random_bool(p), rng.random_bool(p))
    };
    let affine = fire_affine.then(|| {
        let r = config.rotation_deg;
        let t = config.max_translation;
        let [lo, hi] = config.scale_range;
        AffineParams {
            rotation_deg: rng.random_range(-r..=r),
            translate_y: rng.random_range(-t..=t),
            translate_x: rng.random_range(-t..=t),
            scale: rng.random_range(lo..=hi),
        }
    });
    AugmentPlan { affine, flip: fire_flip && config.flip }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Interp {
    /// Bilinear with edge replication.
    ImageBilinear,
    /// Bilinear, zero outside.
    LabelBilinear,
    /// Nearest, zero outside.
    LabelNearest,
}

fn warp(grid: &Grid<f32>, params: &AffineParams, interp: Interp) -> Grid<f32> {
    let (h, w) = grid.shape();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = params.rotation_deg.to_radians().sin_cos();
    let (ty, tx) = (params.translate_y * h as f64, params.translate_x * w as f64);
    let (hmax, wmax) = ((h - 1) as f64, (w - 1) as f64);
    Grid::from_fn(h, w, |y, x| {
        let vy = y as f64 - cy - ty;
        let vx = x as f64 - cx - tx;
        // inverse rotation, then inverse scale
        let sy = (cos * vy - sin * vx) / params.scale + cy;
        let sx = (sin * vy + cos * vx) / params.scale + cx;
        match interp {
            Interp::ImageBilinear => grid.sample_bilinear(sy.clamp(0.0, hmax) as f32, sx.clamp(0.0, wmax) as f32),
            Interp::LabelNearest => {
                let (ry, rx) = (sy.round(), sx.round());
                if ry < 0.0 || rx < 0.0 || ry > hmax || rx > wmax {
                    0.0
                } else {
                    *grid.get(ry as usize, rx as usize)
                }
            }
            Interp::LabelBilinear => {
                if sy < -0.5 || sx < -0.5 || sy > hmax + 0.5 || sx > wmax + 0.5 {
                    0.0
                } else {
                    grid.sample_bilinear(sy.clamp(0.0, hmax) as f32, sx.clamp(0.0, wmax) as f32)
                }
            }
        }
    })
}

fn flip_columns<T: Clone>(grid: &Grid<T>) -> Grid<T> {
    let w = grid.width();
    Grid::from_fn(grid.height(), w, |y, x| grid.get(y, w - 1 - x).clone())
}

pub fn apply_to_image(image: &Image, plan: &AugmentPlan) -> Image {
    let mut out = match &plan.affine {
        Some(a) => warp(image, a, Interp::ImageBilinear),
        None => image.clone(),
    };
    if plan.flip {
        out = flip_columns(&out);
    }
    out
}

pub fn apply_to_label(label: &SampledLabel, plan: &AugmentPlan) -> SampledLabel {
    let interp = if label.hard { Interp::LabelNearest } else { Interp::LabelBilinear };
    let mut values = match &plan.affine {
        Some(a) => warp(&label.values, a, interp),
        None => label.values.clone(),
    };
    if plan.flip {
        values = flip_columns(&values);
    }
    SampledLabel { values, hard: label.hard }
}

/// Draw a plan and apply it to the image and its label.
pub fn augment<R: Rng + ?Sized>(
    image: &Image,
    label: &SampledLabel,
    config: &AugmentationConfig,
    rng: &mut R,
) -> Result<(Image, SampledLabel)> {
    image.ensure_same_shape(&label.values)?;
    let plan = draw_plan(config, rng);
    Ok((apply_to_image(image, &plan), apply_to_label(label, &plan)))
}

/// Patient-level folds. Fold `i` validates on `folds[i]` and trains on the rest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Vec<String>>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn val_patients(&self, fold: usize) -> &[String] {
        &self.folds[fold]
    }

    pub fn train_patients(&self, fold: usize) -> Vec<String> {
        self.folds.iter().enumerate().filter(|(i, _)| *i != fold).flat_map(|(_, p)| p.iter().cloned()).collect()
    }

    /// Frame indices `(train, val)` of `records` for one fold. Frames of
    /// patients outside every fold are ignored.
    pub fn partition(&self, fold: usize, records: &[FrameRecord]) -> (Vec<usize>, Vec<usize>) {
        let val: BTreeSet<&str> = self.folds[fold].iter().map(String::as_str).collect();
        let all: BTreeSet<&str> = self.folds.iter().flatten().map(String::as_str).collect();
        let mut train_idx = Vec::new();
        let mut val_idx = Vec::new();
        for (i, r) in records.iter().enumerate() {
            if val.contains(r.patient_id.as_str()) {
                val_idx.push(i);
            } else if all.contains(r.patient_id.as_str()) {
                train_idx.push(i);
            }
        }
        (train_idx, val_idx)
    }
}

/// Shuffle the distinct patients with `seed` and deal them round-robin into `k` folds.
pub fn kfold_split(patients: &[String], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::config("folds", "must be at least 2"));
    }
    let mut unique: Vec<String> = patients.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if unique.len() < k {
        return Err(Error::config("folds", format!("{} patients cannot fill {k} folds", unique.len())));
    }
    unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, p) in unique.into_iter().enumerate() {
        folds[i % k].push(p);
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(FoldSplit { folds })
}

/// Independent seeds for separate uses of one top-level seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

pub mod streams {
    pub const KFOLD: u64 = 1;
    pub const SEG_INIT: u64 = 100;
    pub const SEG_TRAIN: u64 = 200;
    pub const CLF_INIT: u64 = 300;
    pub const CLF_TRAIN: u64 = 301;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Validation Dice for the segmenter, accuracy for the classifier.
    pub val_metric: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistoryKind {
    Segmenter,
    Classifier,
}

impl HistoryKind {
    pub fn metric_column(self) -> &'static str {
        match self {
            HistoryKind::Segmenter => "val_dice",
            HistoryKind::Classifier => "val_acc",
        }
    }
}

pub fn write_history(path: &Path, kind: HistoryKind, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "lr", "train_loss", kind.metric_column()])?;
    for r in history {
        w.write_record([r.epoch.to_string(), r.lr.to_string(), r.train_loss.to_string(), r.val_metric.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SegTrainResult {
    /// Parameters from the best-validation epoch.
    pub model: Segmenter,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct ClfTrainResult {
    pub model: Classifier,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn snapshot<M: Module>(model: &M) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    model.visit(&mut |p| out.push(p.value.clone()));
    out
}

fn restore<M: Module>(model: &mut M, values: Vec<Vec<f32>>) {
    let mut it = values.into_iter();
    model.visit_mut(&mut |p| p.value = it.next().expect("snapshot matches model"));
}

/// Mean Dice of binarised predictions against the vote mask, over the
/// consensus-positive frames. `None` when there are no such frames.
pub fn validation_dice(model: &mut Segmenter, frames: &[&FrameRecord], batch_size: usize) -> Result<Option<f64>> {
    let positives: Vec<(&FrameRecord, Mask)> = frames
        .iter()
        .map(|f| Ok((*f, vote_mask(&f.rater_masks)?)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|(_, m)| !m.is_blank())
        .collect();
    if positives.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for chunk in positives.chunks(batch_size.max(1)) {
        let inputs: Vec<SegmenterInput> = chunk.iter().map(|(f, _)| SegmenterInput::new(&f.image)).collect();
        let maps = model.predict_batch(&inputs)?;
        for (map, (_, truth)) in maps.iter().zip(chunk) {
            total += dice_coefficient(&map.threshold(0.5), truth)?;
        }
    }
    Ok(Some(total / positives.len() as f64))
}

/// Train one segmenter on `train`, keeping the parameters of the epoch with
/// the best validation Dice (the last epoch when `val` has no positive frame).
pub fn train_segmenter(
    train: &[&FrameRecord],
    val: &[&FrameRecord],
    spec: &SegNetSpec,
    config: &TrainConfig,
    augmentation: &AugmentationConfig,
    init_seed: u64,
    train_seed: u64,
) -> Result<SegTrainResult> {
    config.validate()?;
    augmentation.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training frames"));
    }
    let (h, w) = train[0].shape();
    for f in train.iter().chain(val) {
        if f.shape() != (h, w) {
            return Err(Error::Load { frame_id: f.frame_id.clone(), reason: "frame size differs from the batch".into() });
        }
    }
    spec.check_input(h, w)?;
    let mut model = build_segmenter(spec, init_seed)?;
    let mut adam = Adam::new(config.seg_initial_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(train_seed);
    let loss = config.seg_loss();
    let masks: Vec<&[Mask]> = train.iter().map(|f| &f.rater_masks[..]).collect();
    let frozen = if config.freeze_sampling { Some(sample_labels(config.label_strategy, &masks, &mut rng)?) } else { None };
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<Vec<f32>>)> = None;
    let frame_len = h * w;
    for epoch in 0..config.epochs {
        let lr = exponential_lr(config.seg_initial_lr, config.lr_gamma, epoch);
        adam.lr = lr;
        let labels = match &frozen {
            Some(l) => l.clone(),
            None => sample_labels(config.label_strategy, &masks, &mut rng)?,
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut target = Vec::with_capacity(chunk.len() * frame_len);
            for &i in chunk {
                let (img, lab) = augment(&train[i].image, &labels[i], augmentation, &mut rng)?;
                xs.push(SegmenterInput::new(&img).to_tensor());
                target.extend(lab.values.as_slice().iter().map(|&v| v as f64));
            }
            let x = Tensor::stack(&xs);
            model.zero_grad();
            let logits = model.forward(&x, true)?;
            let probs: Vec<f64> = logits.data.iter().map(|&z| sigmoid(z) as f64).collect();
            let (value, grad) = loss.value_and_grad(&probs, &target, frame_len)?;
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, loss: value });
            }
            let dlogits: Vec<f32> = grad.iter().zip(&probs).map(|(g, p)| (g * p * (1.0 - p)) as f32).collect();
            model.backward(&Tensor::from_vec(logits.n, logits.c, logits.h, logits.w, dlogits));
            adam.step(&mut model);
            loss_sum += value * chunk.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_dice = validation_dice(&mut model, val, config.batch_size)?;
        let metric = val_dice.unwrap_or(f64::NAN);
        log::info!("seg epoch {epoch}: lr {lr:.3e} loss {train_loss:.4} val_dice {metric:.4}");
        history.push(EpochRecord { epoch, lr, train_loss, val_metric: metric });
        let improved = match (&best, val_dice) {
            (_, None) => true,
            (None, Some(_)) => true,
            (Some((b, _, _)), Some(d)) => d > *b,
        };
        if improved {
            best = Some((val_dice.unwrap_or(f64::NEG_INFINITY), epoch, snapshot(&model)));
        }
    }
    let (_, best_epoch, values) = best.expect("at least one epoch");
    restore(&mut model, values);
    Ok(SegTrainResult { model, history, best_epoch })
}

/// Frame-level targets from the rater consensus.
pub fn consensus_targets(frames: &[&FrameRecord], min_pixels: usize) -> Result<Vec<bool>> {
    frames.iter().map(|f| frame_consensus_positive_with(&f.rater_masks, min_pixels)).collect()
}

pub fn classifier_accuracy(model: &mut Classifier, frames: &[&FrameRecord], targets: &[bool], batch: usize) -> Result<f64> {
    if frames.is_empty() {
        return Ok(f64::NAN);
    }
    let mut correct = 0usize;
    for (chunk, t) in frames.chunks(batch.max(1)).zip(targets.chunks(batch.max(1))) {
        let inputs: Vec<_> = chunk.iter().map(|f| model.input_for(&f.image)).collect();
        let logits = model.logits(&inputs)?;
        correct += logits.iter().zip(t).filter(|(l, t)| (**l > 0.0) == **t).count();
    }
    Ok(correct as f64 / frames.len() as f64)
}

/// Train the frame classifier with binary cross-entropy on logits, keeping
/// the epoch with the best validation accuracy.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier(
    train: &[&FrameRecord],
    val: &[&FrameRecord],
    spec: &ClassifierSpec,
    config: &TrainConfig,
    augmentation: &AugmentationConfig,
    init_seed: u64,
    train_seed: u64,
    pretrained: Option<&Path>,
) -> Result<ClfTrainResult> {
    config.validate()?;
    augmentation.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training frames"));
    }
    let mut model = build_classifier(spec, init_seed, pretrained)?;
    let mut adam = Adam::new(config.clf_initial_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(train_seed);
    let targets = consensus_targets(train, config.min_consensus_pixels)?;
    let val_targets = consensus_targets(val, config.min_consensus_pixels)?;
    let epochs = config.classifier_epochs();
    let mut history = Vec::with_capacity(epochs);
    let mut best: Option<(f64, usize, Vec<Vec<f32>>)> = None;
    for epoch in 0..epochs {
        let lr = exponential_lr(config.clf_initial_lr, config.lr_gamma, epoch);
        adam.lr = lr;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut y = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let plan = draw_plan(augmentation, &mut rng);
                let img = apply_to_image(&train[i].image, &plan);
                xs.push(model.input_for(&img).to_tensor());
                y.push(if targets[i] { 1.0 } else { 0.0 });
            }
            let x = Tensor::stack(&xs);
            model.zero_grad();
            let logits = model.forward(&x, true);
            let z: Vec<f64> = logits.data.iter().map(|&v| v as f64).collect();
            let (value, grad) = bce_with_logits(&z, &y)?;
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, loss: value });
            }
            let d: Vec<f32> = grad.iter().map(|&g| g as f32).collect();
            model.backward(&Tensor::from_vec(logits.n, 1, 1, 1, d));
            adam.step(&mut model);
            loss_sum += value * chunk.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let acc = classifier_accuracy(&mut model, val, &val_targets, config.batch_size)?;
        log::info!("clf epoch {epoch}: lr {lr:.3e} loss {train_loss:.4} val_acc {acc:.4}");
        history.push(EpochRecord { epoch, lr, train_loss, val_metric: acc });
        let improved = match &best {
            None => true,
            Some((b, _, _)) => acc.is_nan() || acc > *b,
        };
        if improved {
            best = Some((if acc.is_nan() { f64::NEG_INFINITY } else { acc }, epoch, snapshot(&model)));
        }
    }
    let (_, best_epoch, values) = best.expect("at least one epoch");
    restore(&mut model, values);
    Ok(ClfTrainResult { model, history, best_epoch })
}

/// Fold segmenters whose probability maps are averaged at inference.
#[derive(Clone, Debug)]
pub struct EnsembleModel {
    members: Vec<Segmenter>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePrediction {
    pub probabilities: Grid<f32>,
    pub mask: Mask,
}

impl EnsembleModel {
    pub fn new(members: Vec<Segmenter>) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble members"))?;
        for m in &members[1..] {
            if m.spec() != first.spec() {
                return Err(Error::ModelSpec("ensemble members have different specs".into()));
            }
        }
        Ok(Self { members })
    }

    pub fn load(dirs: &[impl AsRef<Path>]) -> Result<Self> {
        Self::new(dirs.iter().map(|d| load_segmenter(d.as_ref())).collect::<Result<Vec<_>>>()?)
    }

    pub fn members(&self) -> &[Segmenter] {
        &self.members
    }

    pub fn spec(&self) -> &SegNetSpec {
        self.members[0].spec()
    }

    pub fn predict_batch(&mut self, images: &[&Image]) -> Result<Vec<EnsemblePrediction>> {
        let inputs: Vec<SegmenterInput> = images.iter().map(|i| SegmenterInput::new(i)).collect();
        let mut per_member = Vec::with_capacity(self.members.len());
        for m in &mut self.members {
            per_member.push(m.predict_batch(&inputs)?);
        }
        Ok((0..images.len())
            .map(|i| {
                let maps: Vec<&Grid<f32>> = per_member.iter().map(|maps| &maps[i]).collect();
                let probabilities = mean_maps(&maps);
                let mask = binarize(&probabilities);
                EnsemblePrediction { probabilities, mask }
            })
            .collect())
    }
}

/// Pixelwise arithmetic mean, accumulated in f64.
pub fn mean_maps(maps: &[&Grid<f32>]) -> Grid<f32> {
    let (h, w) = maps[0].shape();
    let n = maps.len() as f64;
    Grid::from_fn(h, w, |y, x| (maps.iter().map(|m| *m.get(y, x) as f64).sum::<f64>() / n) as f32)
}

/// Probability map to mask; exactly 0.5 maps to foreground.
pub fn binarize(map: &Grid<f32>) -> Mask {
    map.threshold(0.5)
}

pub fn ensemble_predict(ensemble: &mut EnsembleModel, image: &Image) -> Result<EnsemblePrediction> {
    Ok(ensemble.predict_batch(&[image])?.remove(0))
}

/// Single-model probability map, for comparison with the ensemble.
pub fn single_predict(model: &mut Segmenter, image: &Image) -> Result<Grid<f32>> {
    model.predict(&SegmenterInput::new(image))
}
