//! Segmentation losses (soft Dice, BCE, Dice-BCE, weighted BCE) and the
//! classifier's logit BCE, each with an analytic gradient.
//!
//! Predictions are probabilities; targets may be soft. All functions operate on
//! flattened pixel slices, so any pixel order gives the same value.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to numerator and denominator of the Dice coefficient; makes
/// empty-vs-empty equal to 1.
pub const DEFAULT_SMOOTH: f64 = 1e-6;

/// Probabilities are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` before logs.
pub const CLAMP_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

impl Reduction {
    fn scale(self, n: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / n.max(1) as f64,
        }
    }
}

/// Per-class weights for [`w_bce`]: `w0` multiplies the `x log p` term and
/// `w1` the `(1 - x) log(1 - p)` term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w0: f64,
    pub w1: f64,
}

impl ClassWeights {
    pub fn new(w0: f64, w1: f64) -> Result<Self> {
        if !(w0 >= 0.0 && w1 >= 0.0 && w0.is_finite() && w1.is_finite()) {
            return Err(Error::config("class_weights", format!("weights must be finite and >= 0, got ({w0}, {w1})")));
        }
        Ok(Self { w0, w1 })
    }

    pub fn swapped(self) -> Self {
        Self { w0: self.w1, w1: self.w0 }
    }
}

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: target.len() });
    }
    Ok(())
}

fn clamp(p: f64) -> f64 {
    p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

/// d clamp(p) / dp
fn clamp_slope(p: f64) -> f64 {
    if (CLAMP_EPS..=1.0 - CLAMP_EPS).contains(&p) {
        1.0
    } else {
        0.0
    }
}

/// `(2 sum(p t) + s) / (sum p + sum t + s)`.
pub fn soft_dice(pred: &[f64], target: &[f64], smooth: f64) -> Result<f64> {
    check(pred, target)?;
    let (inter, sp, st) = dice_sums(pred, target);
    Ok((2.0 * inter + smooth) / (sp + st + smooth))
}

fn dice_sums(pred: &[f64], target: &[f64]) -> (f64, f64, f64) {
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut st = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        inter += p * t;
        sp += p;
        st += t;
    }
    (inter, sp, st)
}

/// `1 - soft_dice` with the default smoothing term.
pub fn dice_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    Ok(1.0 - soft_dice(pred, target, DEFAULT_SMOOTH)?)
}

pub fn dice_loss_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check(pred, target)?;
    let (inter, sp, st) = dice_sums(pred, target);
    let num = 2.0 * inter + DEFAULT_SMOOTH;
    let den = sp + st + DEFAULT_SMOOTH;
    let den2 = den * den;
    Ok(target.iter().map(|&t| -(2.0 * t * den - num) / den2).collect())
}

/// Binary cross-entropy on probabilities.
pub fn bce(pred: &[f64], target: &[f64], reduction: Reduction) -> Result<f64> {
    w_bce(pred, target, ClassWeights { w0: 1.0, w1: 1.0 }, reduction)
}

pub fn bce_grad(pred: &[f64], target: &[f64], reduction: Reduction) -> Result<Vec<f64>> {
    w_bce_grad(pred, target, ClassWeights { w0: 1.0, w1: 1.0 }, reduction)
}

/// `0.5 * dice_loss + 0.5 * bce`.
pub fn dice_bce(pred: &[f64], target: &[f64], reduction: Reduction) -> Result<f64> {
    Ok(0.5 * dice_loss(pred, target)? + 0.5 * bce(pred, target, reduction)?)
}

pub fn dice_bce_grad(pred: &[f64], target: &[f64], reduction: Reduction) -> Result<Vec<f64>> {
    let d = dice_loss_grad(pred, target)?;
    let b = bce_grad(pred, target, reduction)?;
    Ok(d.iter().zip(&b).map(|(x, y)| 0.5 * x + 0.5 * y).collect())
}

/// Inverse foreground count weighting: `w1 = 1 / max(1, #positives)`, `w0 = 1 - w1`.
/// Soft targets count as positive at `>= 0.5`.
pub fn class_weights(target: &[f64]) -> ClassWeights {
    let positives = target.iter().filter(|&&t| t >= 0.5).count();
    let w1 = 1.0 / positives.max(1) as f64;
    ClassWeights { w0: 1.0 - w1, w1 }
}

/// `-sum(w0 x log p + w1 (1 - x) log(1 - p))` with the chosen reduction.
pub fn w_bce(pred: &[f64], target: &[f64], weights: ClassWeights, reduction: Reduction) -> Result<f64> {
    check(pred, target)?;
    let mut total = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        let p = clamp(p);
        total -= weights.w0 * t * p.ln() + weights.w1 * (1.0 - t) * (1.0 - p).ln();
    }
    Ok(total * reduction.scale(pred.len()))
}

pub fn w_bce_grad(pred: &[f64], target: &[f64], weights: ClassWeights, reduction: Reduction) -> Result<Vec<f64>> {
    check(pred, target)?;
    let scale = reduction.scale(pred.len());
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let pc = clamp(p);
            -scale * clamp_slope(p) * (weights.w0 * t / pc - weights.w1 * (1.0 - t) / (1.0 - pc))
        })
        .collect())
}

/// Mean logit BCE and its gradient w.r.t. the logits.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(logits, targets)?;
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(targets) {
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let s = if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) };
        grad.push((s - y) / n);
    }
    Ok((loss / n, grad))
}

/// Segmentation loss selector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum LossKind {
    #[default]
    Dice,
    DiceBce,
    WBce,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Dice => "dice",
            LossKind::DiceBce => "dice_bce",
            LossKind::WBce => "w_bce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dice" => Ok(LossKind::Dice),
            "dice_bce" => Ok(LossKind::DiceBce),
            "w_bce" => Ok(LossKind::WBce),
            other => Err(Error::config("loss", format!("unknown loss `{other}` (dice | dice_bce | w_bce)"))),
        }
    }
}

impl Serialize for LossKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LossKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A configured segmentation loss applied to a batch of frames.
///
/// Dice and BCE treat the whole batch as one flattened map. Weighted BCE takes
/// its class weights from each frame's own target and averages the per-frame
/// values, so negative frames keep a defined weighting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegLoss {
    pub kind: LossKind,
    pub reduction: Reduction,
    pub swap_wbce_weights: bool,
}

impl Default for SegLoss {
    fn default() -> Self {
        Self { kind: LossKind::Dice, reduction: Reduction::Mean, swap_wbce_weights: false }
    }
}

impl SegLoss {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, ..Self::default() }
    }

    /// Loss and gradient w.r.t. `pred` for `pred.len() / frame_len` frames.
    pub fn value_and_grad(&self, pred: &[f64], target: &[f64], frame_len: usize) -> Result<(f64, Vec<f64>)> {
        check(pred, target)?;
        match self.kind {
            LossKind::Dice => Ok((dice_loss(pred, target)?, dice_loss_grad(pred, target)?)),
            LossKind::DiceBce => {
                Ok((dice_bce(pred, target, self.reduction)?, dice_bce_grad(pred, target, self.reduction)?))
            }
            LossKind::WBce => {
                if frame_len == 0 || !pred.len().is_multiple_of(frame_len) {
                    return Err(Error::LengthMismatch { left: pred.len(), right: frame_len });
                }
                let frames = (pred.len() / frame_len) as f64;
                let mut value = 0.0;
                let mut grad = Vec::with_capacity(pred.len());
                for (p, t) in pred.chunks(frame_len).zip(target.chunks(frame_len)) {
                    let mut w = class_weights(t);
                    if self.swap_wbce_weights {
                        w = w.swapped();
                    }
                    value += w_bce(p, t, w, self.reduction)? / frames;
                    grad.extend(w_bce_grad(p, t, w, self.reduction)?.into_iter().map(|g| g / frames));
                }
                Ok((value, grad))
            }
        }
    }
}
