//! Classifier pre-screening in front of the segmentation ensemble, and the
//! evaluation protocol: positive-frame Dice with exclusion, frame-level
//! confusion, false-positive area, threshold sweeps and Welch's t-test.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};
use crate::models::Classifier;
use crate::sampling::vote_mask;
use crate::synthdata::FrameRecord;
use crate::train::EnsembleModel;

/// Range of logit thresholds the protocol sweeps.
pub const TESTED_THRESHOLDS: std::ops::RangeInclusive<f64> = 0.0..=5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningDecision {
    pub logit: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl ScreeningDecision {
    pub fn new(logit: f64, threshold: f64) -> Self {
        Self { logit, threshold, pass: logit > threshold }
    }

    /// Thresholds outside the swept range are allowed but flagged.
    pub fn threshold_out_of_range(&self) -> bool {
        !TESTED_THRESHOLDS.contains(&self.threshold)
    }
}

pub fn screen_frame(classifier: &mut Classifier, image: &Image, threshold: f64) -> Result<ScreeningDecision> {
    let input = classifier.input_for(image);
    Ok(ScreeningDecision::new(classifier.logit(&input)? as f64, threshold))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionSource {
    Classifier,
    Segmenter,
    Pipeline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDecision {
    pub frame_id: String,
    pub predicted_positive: bool,
    pub true_positive: bool,
    pub source: DecisionSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub screening: ScreeningDecision,
    pub predicted_positive: bool,
    /// Empty when the frame was screened out or the segmenter found nothing.
    pub mask: Mask,
}

/// The segmenter vetoes a frame when its mask has at most `min_area_pixels`
/// foreground pixels.
pub fn mask_positive(mask: &Mask, min_area_pixels: usize) -> bool {
    mask.count_positive() > min_area_pixels
}

/// Screen with the classifier and segment only frames that pass.
pub fn pipeline_predict(
    classifier: &mut Classifier,
    ensemble: &mut EnsembleModel,
    image: &Image,
    threshold: f64,
) -> Result<PipelineOutput> {
    let screening = screen_frame(classifier, image, threshold)?;
    if !screening.pass {
        let (h, w) = image.shape();
        return Ok(PipelineOutput { screening, predicted_positive: false, mask: Mask::filled(h, w, 0) });
    }
    let pred = crate::train::ensemble_predict(ensemble, image)?;
    let predicted_positive = mask_positive(&pred.mask, 0);
    Ok(PipelineOutput { screening, predicted_positive, mask: pred.mask })
}

/// Model outputs for one frame, computed once and reused across thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePrediction {
    pub frame_id: String,
    pub logit: f64,
    pub seg_mask: Mask,
}

impl FramePrediction {
    /// `None` is segmentation only (no screening stage).
    pub fn decide(&self, threshold: Option<f64>, min_area_pixels: usize) -> (bool, Mask) {
        let pass = threshold.is_none_or(|t| ScreeningDecision::new(self.logit, t).pass);
        if pass {
            (mask_positive(&self.seg_mask, min_area_pixels), self.seg_mask.clone())
        } else {
            let (h, w) = self.seg_mask.shape();
            (false, Mask::filled(h, w, 0))
        }
    }
}

pub fn predict_frames(
    classifier: &mut Classifier,
    ensemble: &mut EnsembleModel,
    frames: &[&FrameRecord],
    batch_size: usize,
) -> Result<Vec<FramePrediction>> {
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(batch_size.max(1)) {
        let inputs: Vec<_> = chunk.iter().map(|f| classifier.input_for(&f.image)).collect();
        let logits = classifier.logits(&inputs)?;
        let images: Vec<&Image> = chunk.iter().map(|f| &f.image).collect();
        let preds = ensemble.predict_batch(&images)?;
        for ((f, z), p) in chunk.iter().zip(logits).zip(preds) {
            out.push(FramePrediction { frame_id: f.frame_id.clone(), logit: z as f64, seg_mask: p.mask });
        }
    }
    Ok(out)
}

/// `2|A ∩ B| / (|A| + |B|)`, with two empty masks scoring 1.
pub fn dice_coefficient(pred: &Mask, truth: &Mask) -> Result<f64> {
    pred.ensure_same_shape(truth)?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
        let (p, t) = (p != 0, t != 0);
        inter += usize::from(p && t);
        total += usize::from(p) + usize::from(t);
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthRule {
    /// Majority vote of the raters.
    #[default]
    Consensus,
    /// The phantom's noise-free mask.
    PhantomTruth,
}

impl fmt::Display for GroundTruthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroundTruthRule::Consensus => "consensus",
            GroundTruthRule::PhantomTruth => "phantom_truth",
        })
    }
}

impl FromStr for GroundTruthRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consensus" => Ok(GroundTruthRule::Consensus),
            "phantom_truth" => Ok(GroundTruthRule::PhantomTruth),
            other => Err(Error::config("ground_truth", format!("unknown rule `{other}`"))),
        }
    }
}

/// Reference mask and frame label used for scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub frame_id: String,
    pub mask: Mask,
    pub positive: bool,
}

pub fn ground_truth(frame: &FrameRecord, rule: GroundTruthRule, min_consensus_pixels: usize) -> Result<GroundTruth> {
    let mask = match rule {
        GroundTruthRule::Consensus => vote_mask(&frame.rater_masks)?,
        GroundTruthRule::PhantomTruth => frame.truth.clone().ok_or_else(|| Error::Load {
            frame_id: frame.frame_id.clone(),
            reason: "no phantom truth mask available".into(),
        })?,
    };
    let positive = mask.count_positive() >= min_consensus_pixels.max(1);
    Ok(GroundTruth { frame_id: frame.frame_id.clone(), mask, positive })
}

/// A rate with a zero-denominator flag; undefined rates read as 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub undefined: bool,
}

impl Rate {
    fn ratio(num: usize, den: usize) -> Self {
        if den == 0 {
            Self { value: 0.0, undefined: true }
        } else {
            Self { value: num as f64 / den as f64, undefined: false }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn add(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn fpr(&self) -> Rate {
        Rate::ratio(self.fp, self.fp + self.tn)
    }

    pub fn fnr(&self) -> Rate {
        Rate::ratio(self.fn_, self.fn_ + self.tp)
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / self.total() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub frame_id: String,
    pub true_positive: bool,
    pub predicted_positive: bool,
    pub included: bool,
    pub dice: Option<f64>,
    /// Predicted foreground pixels over all pixels.
    pub positive_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
}

impl DiceStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) { (sorted[mid - 1] + sorted[mid]) / 2.0 } else { sorted[mid] };
        Some(Self { mean, std, median })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` for segmentation only.
    pub threshold: Option<f64>,
    pub source: DecisionSource,
    pub frames: Vec<FrameOutcome>,
    /// Dice of every included frame, in frame order.
    pub dice: Vec<f64>,
    pub dice_stats: Option<DiceStats>,
    /// Set when no frame is both truly and predicted positive.
    pub empty_inclusion: bool,
    pub confusion: ConfusionCounts,
    pub fpr: Rate,
    pub fnr: Rate,
    pub fp_area: f64,
}

impl EvalReport {
    pub fn predicted_positive_ids(&self) -> Vec<&str> {
        self.frames.iter().filter(|f| f.predicted_positive).map(|f| f.frame_id.as_str()).collect()
    }
}

/// Score predictions against ground truth. Dice is computed only on frames
/// that are truly positive and predicted positive.
pub fn evaluate(
    truths: &[GroundTruth],
    predictions: &[(bool, Mask)],
    threshold: Option<f64>,
    source: DecisionSource,
) -> Result<EvalReport> {
    if truths.len() != predictions.len() {
        return Err(Error::LengthMismatch { left: truths.len(), right: predictions.len() });
    }
    let mut confusion = ConfusionCounts::default();
    let mut frames = Vec::with_capacity(truths.len());
    let mut dice = Vec::new();
    let mut fp_areas = Vec::new();
    for (gt, (predicted, mask)) in truths.iter().zip(predictions) {
        mask.ensure_same_shape(&gt.mask)?;
        confusion.add(gt.positive, *predicted);
        let positive_fraction = mask.count_positive() as f64 / mask.len().max(1) as f64;
        let included = gt.positive && *predicted;
        let d = if included { Some(dice_coefficient(mask, &gt.mask)?) } else { None };
        if let Some(d) = d {
            dice.push(d);
        }
        if !gt.positive && *predicted {
            fp_areas.push(positive_fraction);
        }
        frames.push(FrameOutcome {
            frame_id: gt.frame_id.clone(),
            true_positive: gt.positive,
            predicted_positive: *predicted,
            included,
            dice: d,
            positive_fraction,
        });
    }
    let fp_area = if fp_areas.is_empty() { 0.0 } else { fp_areas.iter().sum::<f64>() / fp_areas.len() as f64 };
    Ok(EvalReport {
        threshold,
        source,
        dice_stats: DiceStats::of(&dice),
        empty_inclusion: dice.is_empty(),
        dice,
        fpr: confusion.fpr(),
        fnr: confusion.fnr(),
        confusion,
        frames,
        fp_area,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

/// Two-sided unpaired t-test with unequal variances (Welch-Satterthwaite df).
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Degenerate(format!("t-test needs >= 2 values per sample, got {} and {}", a.len(), b.len())));
    }
    let moments = |x: &[f64]| {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (n, mean, var)
    };
    let (na, ma, va) = moments(a);
    let (nb, mb, vb) = moments(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if !se2.is_finite() || se2 <= 0.0 {
        return Err(Error::Degenerate("t-test samples have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Degenerate(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, p, df })
}

/// The swept thresholds plus the segmentation-only reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub thresholds: Vec<EvalReport>,
    pub segmentation_only: EvalReport,
}

pub fn default_thresholds() -> Vec<f64> {
    (0..=5).map(f64::from).collect()
}

pub fn sweep_from_predictions(
    truths: &[GroundTruth],
    predictions: &[FramePrediction],
    thresholds: &[f64],
    min_area_pixels: usize,
) -> Result<SweepResult> {
    let decide = |t: Option<f64>| -> Vec<(bool, Mask)> { predictions.iter().map(|p| p.decide(t, min_area_pixels)).collect() };
    let segmentation_only = evaluate(truths, &decide(None), None, DecisionSource::Segmenter)?;
    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let reports = sorted
        .iter()
        .map(|&t| evaluate(truths, &decide(Some(t)), Some(t), DecisionSource::Pipeline))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { thresholds: reports, segmentation_only })
}

#[allow(clippy::too_many_arguments)]
pub fn threshold_sweep(
    classifier: &mut Classifier,
    ensemble: &mut EnsembleModel,
    frames: &[&FrameRecord],
    thresholds: &[f64],
    rule: GroundTruthRule,
    min_consensus_pixels: usize,
    min_area_pixels: usize,
    batch_size: usize,
) -> Result<SweepResult> {
    let truths = frames.iter().map(|f| ground_truth(f, rule, min_consensus_pixels)).collect::<Result<Vec<_>>>()?;
    let preds = predict_frames(classifier, ensemble, frames, batch_size)?;
    sweep_from_predictions(&truths, &preds, thresholds, min_area_pixels)
}

/// Check that FP counts never rise and FN counts never fall as the
/// threshold increases, and that each pass set contains the next.
pub fn check_monotonic(reports: &[EvalReport]) -> Result<()> {
    for pair in reports.windows(2) {
        let (lo, hi) = (&pair[0], &pair[1]);
        if hi.confusion.fp > lo.confusion.fp || hi.confusion.fn_ < lo.confusion.fn_ {
            return Err(Error::Degenerate(format!(
                "non-monotonic sweep between thresholds {:?} and {:?}",
                lo.threshold, hi.threshold
            )));
        }
        let lower: std::collections::BTreeSet<&str> = lo.predicted_positive_ids().into_iter().collect();
        if hi.predicted_positive_ids().iter().any(|id| !lower.contains(id)) {
            return Err(Error::Degenerate("positive set grew with the threshold".into()));
        }
    }
    Ok(())
}

/// Labels attached to every output row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellInfo {
    pub strategy: String,
    pub loss: String,
    /// Where the segmentation checkpoints came from.
    pub seg_checkpoints: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub loss: String,
    pub threshold: String,
    pub screening: String,
    pub seg_checkpoints: String,
    pub n_frames: usize,
    pub n_included: usize,
    pub mean_dice: Option<f64>,
    pub std_dice: Option<f64>,
    pub median_dice: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fpr: f64,
    pub fnr: f64,
    pub fp_area: f64,
    /// Welch test of this cell's Dice list against segmentation only.
    pub p_value: Option<f64>,
    pub t_stat: Option<f64>,
}

fn threshold_label(t: Option<f64>) -> String {
    t.map_or_else(|| "none".to_string(), |t| t.to_string())
}

pub fn summary_row(cell: &CellInfo, report: &EvalReport, versus: Option<&EvalReport>) -> SummaryRow {
    let test = versus.and_then(|v| welch_t_test(&report.dice, &v.dice).ok());
    SummaryRow {
        strategy: cell.strategy.clone(),
        loss: cell.loss.clone(),
        threshold: threshold_label(report.threshold),
        screening: if report.threshold.is_some() { "with" } else { "without" }.to_string(),
        seg_checkpoints: cell.seg_checkpoints.clone(),
        n_frames: report.frames.len(),
        n_included: report.dice.len(),
        mean_dice: report.dice_stats.as_ref().map(|s| s.mean),
        std_dice: report.dice_stats.as_ref().map(|s| s.std),
        median_dice: report.dice_stats.as_ref().map(|s| s.median),
        tp: report.confusion.tp,
        fp: report.confusion.fp,
        tn: report.confusion.tn,
        fn_: report.confusion.fn_,
        fpr: report.fpr.value,
        fnr: report.fnr.value,
        fp_area: report.fp_area,
        p_value: test.map(|t| t.p),
        t_stat: test.map(|t| t.t),
    }
}

/// One summary row per threshold plus the segmentation-only row. Every
/// screened row carries the p-value against segmentation only.
pub fn summary_rows(cell: &CellInfo, sweep: &SweepResult) -> Vec<SummaryRow> {
    let mut rows = vec![summary_row(cell, &sweep.segmentation_only, None)];
    for r in &sweep.thresholds {
        rows.push(summary_row(cell, r, Some(&sweep.segmentation_only)));
    }
    rows
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Serialize)]
struct FrameRow<'a> {
    strategy: &'a str,
    loss: &'a str,
    threshold: String,
    screening: &'a str,
    frame_id: &'a str,
    true_positive: bool,
    predicted_positive: bool,
    included: bool,
    dice: Option<f64>,
    positive_fraction: f64,
}

pub fn write_frames_csv(path: &Path, cell: &CellInfo, reports: &[&EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        for f in &r.frames {
            w.serialize(FrameRow {
                strategy: &cell.strategy,
                loss: &cell.loss,
                threshold: threshold_label(r.threshold),
                screening: if r.threshold.is_some() { "with" } else { "without" },
                frame_id: &f.frame_id,
                true_positive: f.true_positive,
                predicted_positive: f.predicted_positive,
                included: f.included,
                dice: f.dice,
                positive_fraction: f.positive_fraction,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Long-format sweep rows: `(strategy, loss, threshold, metric, value)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub strategy: String,
    pub loss: String,
    pub threshold: String,
    pub metric: String,
    pub value: f64,
}

pub const SWEEP_METRICS: [&str; 7] = ["mean_dice", "median_dice", "n_included", "fpr", "fnr", "fp_area", "fp_frames"];

pub fn long_rows(cell: &CellInfo, sweep: &SweepResult) -> Vec<LongRow> {
    let mut rows = Vec::new();
    for r in std::iter::once(&sweep.segmentation_only).chain(&sweep.thresholds) {
        let stats = r.dice_stats.as_ref();
        let values = [
            stats.map_or(f64::NAN, |s| s.mean),
            stats.map_or(f64::NAN, |s| s.median),
            r.dice.len() as f64,
            r.fpr.value,
            r.fnr.value,
            r.fp_area,
            r.confusion.fp as f64,
        ];
        for (metric, value) in SWEEP_METRICS.iter().zip(values) {
            rows.push(LongRow {
                strategy: cell.strategy.clone(),
                loss: cell.loss.clone(),
                threshold: threshold_label(r.threshold),
                metric: metric.to_string(),
                value,
            });
        }
    }
    rows
}

pub fn write_long_csv(path: &Path, rows: &[LongRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_long_csv(path: &Path) -> Result<Vec<LongRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<LongRow>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn m(rows: &[&[u8]]) -> Mask {
        Grid::from_vec(rows.len(), rows[0].len(), rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn screening_rule() {
        assert!(ScreeningDecision::new(3.2, 0.0).pass);
        assert!(!ScreeningDecision::new(4.9, 5.0).pass);
        assert!(!ScreeningDecision::new(5.0, 5.0).pass);
        assert!(ScreeningDecision::new(0.0, -1.0).threshold_out_of_range());
    }

    #[test]
    fn dice_hand_values() {
        let a = m(&[&[1, 1], &[0, 0]]);
        let b = m(&[&[1, 0], &[0, 0]]);
        assert!((dice_coefficient(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(dice_coefficient(&a, &a).unwrap(), 1.0);
        assert_eq!(dice_coefficient(&a, &m(&[&[0, 0], &[1, 1]])).unwrap(), 0.0);
        assert_eq!(dice_coefficient(&m(&[&[0, 0]]), &m(&[&[0, 0]])).unwrap(), 1.0);
        assert!(dice_coefficient(&a, &m(&[&[1, 1]])).is_err());
    }

    #[test]
    fn all_negative_case() {
        let gt: Vec<GroundTruth> = (0..4)
            .map(|i| GroundTruth { frame_id: format!("f{i}"), mask: Mask::filled(4, 4, 0), positive: false })
            .collect();
        let preds: Vec<(bool, Mask)> = (0..4).map(|_| (false, Mask::filled(4, 4, 0))).collect();
        let r = evaluate(&gt, &preds, Some(0.0), DecisionSource::Pipeline).unwrap();
        assert_eq!(r.confusion.tn, 4);
        assert!(r.dice.is_empty() && r.empty_inclusion && r.dice_stats.is_none());
        assert_eq!(r.fp_area, 0.0);
        assert!(r.fnr.undefined);
    }

    #[test]
    fn welch_symmetry_and_degenerate() {
        let a = [0.1, 0.5, 0.9];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
        let x = [0.2, 0.3, 0.35, 0.9];
        let y = [0.5, 0.55, 0.7];
        let (xy, yx) = (welch_t_test(&x, &y).unwrap(), welch_t_test(&y, &x).unwrap());
        assert_eq!(xy.t, -yx.t);
        assert_eq!(xy.p, yx.p);
        assert!(welch_t_test(&[0.5], &y).is_err());
        assert!(welch_t_test(&[0.5, 0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn minus_infinity_threshold_is_segmentation_only() {
        let preds: Vec<FramePrediction> = (0..5)
            .map(|i| FramePrediction {
                frame_id: format!("f{i}"),
                logit: i as f64 - 2.0,
                seg_mask: Mask::from_fn(4, 4, |y, x| u8::from(y * 4 + x < i * 3)),
            })
            .collect();
        for p in &preds {
            assert_eq!(p.decide(Some(f64::NEG_INFINITY), 0), p.decide(None, 0));
        }
    }

    #[test]
    fn long_format_rows_per_metric() {
        let gt = vec![GroundTruth { frame_id: "a".into(), mask: m(&[&[1, 0]]), positive: true }];
        let preds = vec![FramePrediction { frame_id: "a".into(), logit: 2.5, seg_mask: m(&[&[1, 0]]) }];
        let sweep = sweep_from_predictions(&gt, &preds, &default_thresholds(), 0).unwrap();
        let cell = CellInfo { strategy: "vote".into(), loss: "dice".into(), seg_checkpoints: "x".into() };
        let rows = long_rows(&cell, &sweep);
        for metric in SWEEP_METRICS {
            assert_eq!(rows.iter().filter(|r| r.metric == metric && r.threshold != "none").count(), 6);
        }
        check_monotonic(&sweep.thresholds).unwrap();
    }
}
