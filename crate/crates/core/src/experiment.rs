//! End-to-end runs driven by one JSON configuration: data generation,
//! fold training, evaluation and threshold sweeps with their output files.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::models::{load_classifier, save_classifier, save_segmenter, Classifier, ClassifierSpec, SegNetSpec};
use crate::sampling::LabelStrategy;
use crate::screen_eval::{
    default_thresholds, ground_truth, long_rows, predict_frames, summary_rows, sweep_from_predictions,
    write_frames_csv, write_long_csv, write_summary_csv, CellInfo, GroundTruthRule, LongRow, SummaryRow,
    SweepResult,
};
use crate::synthdata::{dataset_checksum, generate_dataset, load_dataset, FrameRecord, PhantomConfig, Split, MANIFEST_FILE};
use crate::train::{
    derive_seed, kfold_split, streams, train_classifier, train_segmenter, write_history, AugmentationConfig,
    ClfTrainResult, EnsembleModel, FoldSplit, HistoryKind, SegTrainResult, TrainConfig,
};

pub const CACHE_ENV: &str = "SCREENSEG_CACHE";
pub const RESOLVED_CONFIG_FILE: &str = "run.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const FOLDS_FILE: &str = "folds.json";
pub const CHECKSUM_FILE: &str = "dataset.sha256";

/// A segmentation configuration to evaluate: which labels and loss its
/// checkpoints were trained with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCell {
    pub strategy: LabelStrategy,
    pub loss: LossKind,
}

impl EvalCell {
    /// Directory name under `<checkpoints>/seg/`.
    pub fn dir_name(&self) -> String {
        format!("{}__{}", self.strategy.to_string().replace(':', "-"), self.loss)
    }
}

/// Every setting of a run in one JSON document. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Top-level seed; copied into the phantom and training sections on resolve.
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub train: TrainConfig,
    pub augmentation: AugmentationConfig,
    pub segmenter: SegNetSpec,
    pub classifier: ClassifierSpec,
    pub pretrained_classifier: Option<PathBuf>,
    pub thresholds: Vec<f64>,
    pub ground_truth: GroundTruthRule,
    /// Masks with at most this many pixels count as empty.
    pub min_area_pixels: usize,
    pub eval_batch_size: usize,
    /// Dataset directory holding `manifest.csv`.
    pub data_dir: Option<PathBuf>,
    /// Checkpoint cache; `SCREENSEG_CACHE` takes precedence, then `--out`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Segmentation configurations to evaluate; empty means the one in `train`.
    pub cells: Vec<EvalCell>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            phantom: PhantomConfig::default(),
            train: TrainConfig::default(),
            augmentation: AugmentationConfig::default(),
            segmenter: SegNetSpec::default(),
            classifier: ClassifierSpec::default(),
            pretrained_classifier: None,
            thresholds: default_thresholds(),
            ground_truth: GroundTruthRule::Consensus,
            min_area_pixels: 0,
            eval_batch_size: 16,
            data_dir: None,
            checkpoint_dir: None,
            cells: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Settings sized for a single CPU: 64x64 frames, batch 8 and short
    /// schedules.
    pub fn desk(seed: u64) -> Self {
        let mut cfg = Self {
            seed,
            phantom: PhantomConfig {
                image_height: 64,
                image_width: 64,
                n_patients: 10,
                frames_per_patient: 20,
                negative_frame_fraction: 0.2,
                gland_axis_range: [10.0, 19.0],
                rater_boundary_jitter: 3.0,
                ..PhantomConfig::default()
            },
            train: TrainConfig {
                batch_size: 8,
                epochs: 12,
                clf_epochs: Some(12),
                clf_initial_lr: 1e-3,
                ..TrainConfig::default()
            },
            ..Self::default()
        };
        cfg.propagate_seed();
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn propagate_seed(&mut self) {
        self.phantom.seed = self.seed;
        self.train.seed = self.seed;
    }

    /// Apply a command-line seed, copy the seed into every section and validate.
    pub fn resolve(mut self, seed_override: Option<u64>) -> Result<Self> {
        if let Some(s) = seed_override {
            self.seed = s;
        }
        self.propagate_seed();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.train.validate()?;
        self.augmentation.validate()?;
        self.segmenter.validate().map_err(|e| Error::config("segmenter", e.to_string()))?;
        self.classifier.validate().map_err(|e| Error::config("classifier", e.to_string()))?;
        if self.thresholds.iter().any(|t| t.is_nan()) {
            return Err(Error::config("thresholds", "must not contain NaN"));
        }
        if self.eval_batch_size < 1 {
            return Err(Error::config("eval_batch_size", "must be at least 1"));
        }
        Ok(())
    }

    pub fn eval_cells(&self) -> Vec<EvalCell> {
        if self.cells.is_empty() {
            vec![self.train_cell()]
        } else {
            self.cells.clone()
        }
    }

    pub fn train_cell(&self) -> EvalCell {
        EvalCell { strategy: self.train.label_strategy, loss: self.train.loss }
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data_dir.as_deref().ok_or_else(|| Error::config("data_dir", "is required for this command"))
    }
}

/// Write the resolved configuration to `<out>/run.json`.
pub fn echo_config(cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&path, serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// `SCREENSEG_CACHE`, else the configured directory, else `out_dir`.
pub fn checkpoint_root(cfg: &RunConfig, out_dir: &Path) -> PathBuf {
    checkpoint_root_with(std::env::var_os(CACHE_ENV).map(PathBuf::from), cfg, out_dir)
}

pub fn checkpoint_root_with(env: Option<PathBuf>, cfg: &RunConfig, out_dir: &Path) -> PathBuf {
    env.filter(|p| !p.as_os_str().is_empty())
        .or_else(|| cfg.checkpoint_dir.clone())
        .unwrap_or_else(|| out_dir.to_path_buf())
}

pub fn seg_cell_dir(root: &Path, cell: &EvalCell) -> PathBuf {
    root.join("seg").join(cell.dir_name())
}

pub fn fold_dir(root: &Path, cell: &EvalCell, fold: usize) -> PathBuf {
    seg_cell_dir(root, cell).join(format!("fold{fold}"))
}

pub fn classifier_dir(root: &Path) -> PathBuf {
    root.join("clf")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenDataSummary {
    pub manifest: PathBuf,
    pub frames: usize,
    pub positive_frames: usize,
    pub negative_frames: usize,
    pub train_frames: usize,
    pub test_frames: usize,
    pub checksum: String,
    /// The directory already held a byte-identical dataset.
    pub unchanged: bool,
}

pub fn gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<GenDataSummary> {
    let manifest = out_dir.join(MANIFEST_FILE);
    let previous = if manifest.exists() { dataset_checksum(&manifest).ok() } else { None };
    let generated = generate_dataset(&cfg.phantom, out_dir)?;
    let checksum = dataset_checksum(&manifest)?;
    let path = out_dir.join(CHECKSUM_FILE);
    fs::write(&path, format!("{checksum}\n")).map_err(|e| Error::io(&path, e))?;
    let negative = generated.records.iter().filter(|r| r.truth.as_ref().is_some_and(|t| t.is_blank())).count();
    let test = generated.records.iter().filter(|r| r.split == Split::Test).count();
    Ok(GenDataSummary {
        manifest,
        frames: generated.records.len(),
        positive_frames: generated.records.len() - negative,
        negative_frames: negative,
        train_frames: generated.records.len() - test,
        test_frames: test,
        unchanged: previous.as_deref() == Some(checksum.as_str()),
        checksum,
    })
}

pub fn load_records(cfg: &RunConfig) -> Result<Vec<FrameRecord>> {
    load_dataset(&cfg.data_dir()?.join(MANIFEST_FILE))
}

pub fn training_pool(records: &[FrameRecord]) -> Vec<&FrameRecord> {
    records.iter().filter(|r| r.split != Split::Test).collect()
}

pub fn test_set(records: &[FrameRecord]) -> Vec<&FrameRecord> {
    records.iter().filter(|r| r.split == Split::Test).collect()
}

pub fn fold_split(cfg: &RunConfig, records: &[FrameRecord]) -> Result<FoldSplit> {
    let patients: Vec<String> = training_pool(records).iter().map(|r| r.patient_id.clone()).collect();
    kfold_split(&patients, cfg.train.folds, derive_seed(cfg.seed, streams::KFOLD))
}

fn fold_frames<'a>(split: &FoldSplit, fold: usize, pool: &[&'a FrameRecord]) -> (Vec<&'a FrameRecord>, Vec<&'a FrameRecord>) {
    let val = split.val_patients(fold);
    pool.iter().copied().partition(|r| !val.contains(&r.patient_id))
}

/// Train one segmenter per fold and write each to
/// `<root>/seg/<cell>/fold<k>/` with its `history.csv`. With `jobs > 1`
/// folds train in parallel; results do not depend on `jobs`.
pub fn train_seg_folds(cfg: &RunConfig, records: &[FrameRecord], root: &Path, jobs: usize) -> Result<Vec<SegTrainResult>> {
    let split = fold_split(cfg, records)?;
    let pool = training_pool(records);
    let cell = cfg.train_cell();
    let cell_dir = seg_cell_dir(root, &cell);
    fs::create_dir_all(&cell_dir).map_err(|e| Error::io(&cell_dir, e))?;
    let folds_path = cell_dir.join(FOLDS_FILE);
    fs::write(&folds_path, serde_json::to_string_pretty(&split)?).map_err(|e| Error::io(&folds_path, e))?;
    let run_fold = |fold: usize| -> Result<SegTrainResult> {
        let (train, val) = fold_frames(&split, fold, &pool);
        log::info!("fold {fold}: {} training frames, {} validation frames", train.len(), val.len());
        let result = train_segmenter(
            &train,
            &val,
            &cfg.segmenter,
            &cfg.train,
            &cfg.augmentation,
            derive_seed(cfg.seed, streams::SEG_INIT + fold as u64),
            derive_seed(cfg.seed, streams::SEG_TRAIN + fold as u64),
        )?;
        let dir = fold_dir(root, &cell, fold);
        save_segmenter(&dir, &result.model)?;
        write_history(&dir.join(HISTORY_FILE), HistoryKind::Segmenter, &result.history)?;
        Ok(result)
    };
    let folds: Vec<usize> = (0..split.k()).collect();
    if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config("--jobs", e.to_string()))?;
        pool.install(|| folds.par_iter().map(|&f| run_fold(f)).collect())
    } else {
        folds.iter().map(|&f| run_fold(f)).collect()
    }
}

/// Train the frame classifier on the training pool, selecting the
/// checkpoint on the first fold's validation patients.
pub fn train_clf(cfg: &RunConfig, records: &[FrameRecord], root: &Path) -> Result<ClfTrainResult> {
    let split = fold_split(cfg, records)?;
    let pool = training_pool(records);
    let (train, val) = fold_frames(&split, 0, &pool);
    let result = train_classifier(
        &train,
        &val,
        &cfg.classifier,
        &cfg.train,
        &cfg.augmentation,
        derive_seed(cfg.seed, streams::CLF_INIT),
        derive_seed(cfg.seed, streams::CLF_TRAIN),
        cfg.pretrained_classifier.as_deref(),
    )?;
    let dir = classifier_dir(root);
    save_classifier(&dir, &result.model)?;
    write_history(&dir.join(HISTORY_FILE), HistoryKind::Classifier, &result.history)?;
    Ok(result)
}

/// Load every `fold*` checkpoint of a cell, in fold order.
pub fn load_cell_ensemble(root: &Path, cell: &EvalCell) -> Result<(EnsembleModel, Vec<PathBuf>)> {
    let dir = seg_cell_dir(root, cell);
    let entries = fs::read_dir(&dir).map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("fold")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Checkpoint(format!("no fold checkpoints under {}", dir.display())));
    }
    Ok((EnsembleModel::load(&dirs)?, dirs))
}

pub fn load_trained_classifier(root: &Path) -> Result<Classifier> {
    load_classifier(&classifier_dir(root))
}

/// Run the sweep for one cell on the test split.
pub fn sweep_cell(
    cfg: &RunConfig,
    classifier: &mut Classifier,
    ensemble: &mut EnsembleModel,
    frames: &[&FrameRecord],
) -> Result<SweepResult> {
    let truths = frames
        .iter()
        .map(|f| ground_truth(f, cfg.ground_truth, cfg.train.min_consensus_pixels))
        .collect::<Result<Vec<_>>>()?;
    let preds = predict_frames(classifier, ensemble, frames, cfg.eval_batch_size)?;
    sweep_from_predictions(&truths, &preds, &cfg.thresholds, cfg.min_area_pixels)
}

pub struct CellSweep {
    pub cell: CellInfo,
    pub sweep: SweepResult,
}

pub fn sweep_all_cells(cfg: &RunConfig, records: &[FrameRecord], root: &Path) -> Result<Vec<CellSweep>> {
    let test = test_set(records);
    if test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let mut classifier = load_trained_classifier(root)?;
    let mut out = Vec::new();
    for cell in cfg.eval_cells() {
        let (mut ensemble, dirs) = load_cell_ensemble(root, &cell)?;
        let sweep = sweep_cell(cfg, &mut classifier, &mut ensemble, &test)?;
        let info = CellInfo {
            strategy: cell.strategy.to_string(),
            loss: cell.loss.to_string(),
            seg_checkpoints: dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(";"),
        };
        out.push(CellSweep { cell: info, sweep });
    }
    Ok(out)
}

pub const FRAMES_CSV: &str = "eval_frames.csv";
pub const SUMMARY_CSV: &str = "eval_summary.csv";
pub const SUMMARY_JSON: &str = "eval_summary.json";
pub const SWEEP_CSV: &str = "sweep.csv";

/// Evaluate every cell and write per-frame rows, one summary row per
/// configuration cell, and a JSON copy of the summary.
pub fn eval_and_write(cfg: &RunConfig, records: &[FrameRecord], root: &Path, out_dir: &Path) -> Result<Vec<SummaryRow>> {
    let sweeps = sweep_all_cells(cfg, records, root)?;
    let mut summary = Vec::new();
    let frames_path = out_dir.join(FRAMES_CSV);
    let mut frame_reports = Vec::new();
    for cs in &sweeps {
        summary.extend(summary_rows(&cs.cell, &cs.sweep));
        frame_reports.push((&cs.cell, &cs.sweep));
    }
    // one per-frame file covering every cell
    let tmp = tempdir_in(out_dir)?;
    let mut combined = Vec::new();
    for (i, (cell, sweep)) in frame_reports.iter().enumerate() {
        let part = tmp.join(format!("part{i}.csv"));
        let mut reports = vec![&sweep.segmentation_only];
        reports.extend(sweep.thresholds.iter());
        write_frames_csv(&part, cell, &reports)?;
        let text = fs::read_to_string(&part).map_err(|e| Error::io(&part, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if combined.is_empty() {
            combined.push(header.to_string());
        }
        combined.extend(lines.map(str::to_string));
    }
    fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    fs::write(&frames_path, combined.join("\n") + "\n").map_err(|e| Error::io(&frames_path, e))?;
    write_summary_csv(&out_dir.join(SUMMARY_CSV), &summary)?;
    let json = out_dir.join(SUMMARY_JSON);
    fs::write(&json, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&json, e))?;
    Ok(summary)
}

fn tempdir_in(dir: &Path) -> Result<PathBuf> {
    let p = dir.join(".parts");
    fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

/// Sweep every cell, write the long-format CSV and render the plots from it.
pub fn sweep_and_write(cfg: &RunConfig, records: &[FrameRecord], root: &Path, out_dir: &Path) -> Result<(Vec<LongRow>, Vec<PathBuf>)> {
    let sweeps = sweep_all_cells(cfg, records, root)?;
    let rows: Vec<LongRow> = sweeps.iter().flat_map(|cs| long_rows(&cs.cell, &cs.sweep)).collect();
    let csv_path = out_dir.join(SWEEP_CSV);
    write_long_csv(&csv_path, &rows)?;
    let from_disk = crate::screen_eval::read_long_csv(&csv_path)?;
    let plots = crate::plots::render_sweep_plots(&from_disk, out_dir)?;
    Ok((rows, plots))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"seed": 1, "bogus": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"epochz": 2}}"#).is_err());
        let cfg = RunConfig::from_json(r#"{"seed": 5}"#).unwrap().resolve(None).unwrap();
        assert_eq!((cfg.phantom.seed, cfg.train.seed), (5, 5));
        let cfg = cfg.resolve(Some(9)).unwrap();
        assert_eq!((cfg.seed, cfg.phantom.seed, cfg.train.seed), (9, 9, 9));
    }

    #[test]
    fn strategy_strings_validate() {
        assert!(RunConfig::from_json(r#"{"train": {"label_strategy": "combine:0.25"}}"#).is_ok());
        let err = RunConfig::from_json(r#"{"train": {"label_strategy": "combine:1.5"}}"#).unwrap_err();
        assert!(err.is_config_error());
    }

    #[test]
    fn cache_precedence() {
        let mut cfg = RunConfig::default();
        let out = Path::new("/out");
        assert_eq!(checkpoint_root_with(None, &cfg, out), out);
        cfg.checkpoint_dir = Some("/cfg".into());
        assert_eq!(checkpoint_root_with(None, &cfg, out), Path::new("/cfg"));
        assert_eq!(checkpoint_root_with(Some("/env".into()), &cfg, out), Path::new("/env"));
    }

    #[test]
    fn cell_dir_names_are_path_safe() {
        let cell = EvalCell { strategy: LabelStrategy::Combination { vote_fraction: 0.25 }, loss: LossKind::WBce };
        assert_eq!(cell.dir_name(), "combine-0.25__w_bce");
    }
}
