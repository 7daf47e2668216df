//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use screenseg::experiment::{
    classifier_dir, fold_dir, gen_data, load_records, sweep_all_cells, test_set, train_clf, train_seg_folds,
    training_pool, RunConfig, HISTORY_FILE,
};
use screenseg::grid::{Grid, Image, Mask};
use screenseg::losses::{
    bce, bce_grad, class_weights, dice_bce, dice_loss, dice_loss_grad, w_bce, w_bce_grad, Reduction,
};
use screenseg::models::{build_segmenter, save_segmenter, Classifier, SegNetSpec, PARAMS_FILE};
use screenseg::sampling::{sample_mean, sample_vote};
use screenseg::screen_eval::{
    dice_coefficient, evaluate, ground_truth, welch_t_test, DecisionSource, EvalReport, GroundTruth, GroundTruthRule,
};
use screenseg::synthdata::FrameRecord;
use screenseg::train::{ensemble_predict, single_predict, EnsembleModel};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_masks(rng: &mut ChaCha8Rng, h: usize, w: usize) -> [Mask; 3] {
    std::array::from_fn(|_| Grid::from_fn(h, w, |_, _| u8::from(rng.random_bool(0.5))))
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 2000;
    for case in 0..n {
        let masks = random_masks(&mut rng, 8, 8);
        let vote = sample_vote(&masks).map_err(|e| e.to_string())?.values;
        let mean = sample_mean(&masks).map_err(|e| e.to_string())?.values;
        for y in 0..8 {
            for x in 0..8 {
                let count: u32 = masks.iter().map(|m| *m.get(y, x) as u32).sum();
                let oracle = if count >= 2 { 1.0 } else { 0.0 };
                check(*vote.get(y, x) == oracle, format!("case {case} ({y},{x}): vote differs from majority"))?;
                check(
                    (*mean.get(y, x) >= 0.5) == (oracle == 1.0),
                    format!("case {case} ({y},{x}): mean >= 0.5 disagrees with vote"),
                )?;
            }
        }
    }
    Ok(format!("{n} random 8x8 three-rater instances match the brute-force majority"))
}

fn numeric_grad(f: impl Fn(&[f64]) -> f64, p: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..p.len())
        .map(|i| {
            let mut a = p.to_vec();
            let mut b = p.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn grad_close(name: &str, analytic: &[f64], numeric: &[f64]) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = a.abs().max(n.abs()).max(1e-6);
        let rel = (a - n).abs() / scale;
        worst = worst.max(rel);
        check(rel <= 1e-4, format!("{name}: element {i} analytic {a} vs numeric {n} (rel {rel:.2e})"))?;
    }
    Ok(worst)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let instances = 25;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let p: Vec<f64> = (0..64).map(|_| rng.random_range(0.05..0.95)).collect();
        let mut t: Vec<f64> = (0..64).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        t[0] = 1.0;
        let red = Reduction::Mean;
        let e = |r: screenseg::Result<Vec<f64>>| r.map_err(|e| e.to_string());

        let g = e(dice_loss_grad(&p, &t))?;
        let n = numeric_grad(|q| dice_loss(q, &t).unwrap(), &p);
        worst = worst.max(grad_close("dice_loss", &g, &n)?);

        let g = e(bce_grad(&p, &t, red))?;
        let n = numeric_grad(|q| bce(q, &t, red).unwrap(), &p);
        worst = worst.max(grad_close("bce", &g, &n)?);

        let wts = class_weights(&t);
        let g = e(w_bce_grad(&p, &t, wts, red))?;
        let n = numeric_grad(|q| w_bce(q, &t, wts, red).unwrap(), &p);
        worst = worst.max(grad_close("w_bce", &g, &n)?);

        let combined = dice_bce(&p, &t, red).map_err(|e| e.to_string())?;
        let parts = 0.5 * dice_loss(&p, &t).unwrap() + 0.5 * bce(&p, &t, red).unwrap();
        check(
            combined.to_bits() == parts.to_bits(),
            format!("dice_bce {combined} is not bit-identical to 0.5*dice + 0.5*bce = {parts}"),
        )?;
    }
    Ok(format!("{instances} instances per loss, worst relative gradient error {worst:.2e}; dice_bce bit-exact"))
}

fn criterion_3() -> Outcome {
    let mut cases = Vec::new();
    for positives in [2usize, 100] {
        let mut t = vec![0.0; 400];
        t[..positives].fill(1.0);
        let w = class_weights(&t);
        let w1 = 1.0 / positives as f64;
        check(w.w1 == w1 && w.w0 == 1.0 - w1, format!("{positives} positives gave ({}, {})", w.w0, w.w1))?;
        cases.push(format!("{positives} px -> ({}, {})", w.w0, w.w1));
    }
    check(cases == ["2 px -> (0.5, 0.5)", "100 px -> (0.99, 0.01)"], format!("unexpected weights {cases:?}"))?;
    Ok(cases.join("; "))
}

fn positive_ids(r: &EvalReport) -> BTreeSet<String> {
    r.frames.iter().filter(|f| f.predicted_positive).map(|f| f.frame_id.clone()).collect()
}

fn criterion_4(run: &DeskRun) -> Outcome {
    let cfg = RunConfig { thresholds: (0..=20).map(|i| i as f64 * 0.25).collect(), ..run.cfg.clone() };
    let mut checked = 0;
    let mut first_last = (0, 0, 0, 0);
    for (label, frames) in [("test", test_set(&run.records)), ("train pool", training_pool(&run.records))] {
        let mut clf = screenseg::experiment::load_trained_classifier(&run.root).map_err(|e| e.to_string())?;
        let (mut ens, _) = screenseg::experiment::load_cell_ensemble(&run.root, &cfg.train_cell())
            .map_err(|e| e.to_string())?;
        let sweep = screenseg::experiment::sweep_cell(&cfg, &mut clf, &mut ens, &frames).map_err(|e| e.to_string())?;
        for w in sweep.thresholds.windows(2) {
            let (lo, hi) = (&w[0], &w[1]);
            check(
                hi.confusion.fp <= lo.confusion.fp,
                format!("{label}: FP rose from {} to {} at {:?}", lo.confusion.fp, hi.confusion.fp, hi.threshold),
            )?;
            check(
                hi.confusion.fn_ >= lo.confusion.fn_,
                format!("{label}: FN fell from {} to {} at {:?}", lo.confusion.fn_, hi.confusion.fn_, hi.threshold),
            )?;
            check(
                positive_ids(hi).is_subset(&positive_ids(lo)),
                format!("{label}: positive set at {:?} is not contained in the one at {:?}", hi.threshold, lo.threshold),
            )?;
            checked += 1;
        }
        if label == "test" {
            let (a, b) = (&sweep.thresholds[0], sweep.thresholds.last().unwrap());
            first_last = (a.confusion.fp, b.confusion.fp, a.confusion.fn_, b.confusion.fn_);
        }
    }
    Ok(format!(
        "{checked} adjacent threshold pairs nested; test FP {} -> {}, FN {} -> {} over thresholds 0..5",
        first_last.0, first_last.1, first_last.2, first_last.3
    ))
}

fn criterion_5() -> Outcome {
    let (h, w) = (10, 10);
    let block = |rows: usize| Grid::from_fn(h, w, |y, _| u8::from(y < rows));
    let empty = Mask::filled(h, w, 0);
    let truth_a = block(4);
    let truth_b = block(4);
    let truth_c = block(4);
    // 40 truth pixels, 40 predicted, 20 shared -> Dice 0.5
    let half = Grid::from_fn(h, w, |y, _| u8::from((2..6).contains(&y)));
    let fp_pred = Grid::from_fn(h, w, |y, _| u8::from(y == 9));
    let truths = vec![
        GroundTruth { frame_id: "a".into(), mask: truth_a.clone(), positive: true },
        GroundTruth { frame_id: "b".into(), mask: truth_b, positive: true },
        GroundTruth { frame_id: "c".into(), mask: truth_c, positive: true },
        GroundTruth { frame_id: "d".into(), mask: empty.clone(), positive: false },
    ];
    let preds = vec![(true, truth_a), (true, half), (false, empty), (true, fp_pred)];
    let r = evaluate(&truths, &preds, None, DecisionSource::Segmenter).map_err(|e| e.to_string())?;
    check(r.dice == vec![1.0, 0.5], format!("included Dice {:?}", r.dice))?;
    let mean = r.dice_stats.as_ref().map(|s| s.mean);
    check(mean == Some(0.75), format!("mean Dice {mean:?}"))?;
    check(r.confusion.fn_ == 1 && r.confusion.fp == 1, format!("confusion {:?}", r.confusion))?;
    check(r.fp_area == 0.1, format!("FP area {}", r.fp_area))?;
    Ok(format!(
        "mean Dice {} over {} frames, FN {}, FP {}, FP area {}",
        mean.unwrap(),
        r.dice.len(),
        r.confusion.fn_,
        r.confusion.fp,
        r.fp_area
    ))
}

struct DeskRun {
    cfg: RunConfig,
    records: Vec<FrameRecord>,
    root: PathBuf,
    dataset_checksum: String,
    seconds: f64,
}

fn desk_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::desk(7);
    cfg.data_dir = Some(dir.join("data"));
    cfg.checkpoint_dir = Some(dir.join("ckpt"));
    cfg.thresholds = (0..=5).map(f64::from).collect();
    cfg
}

fn desk_run(dir: &Path) -> Result<DeskRun, String> {
    let start = Instant::now();
    let cfg = desk_config(dir).resolve(None).map_err(|e| e.to_string())?;
    let e = |e: screenseg::Error| e.to_string();
    let data = cfg.data_dir.clone().unwrap();
    let summary = gen_data(&cfg, &data).map_err(e)?;
    let records = load_records(&cfg).map_err(e)?;
    let root = cfg.checkpoint_dir.clone().unwrap();
    train_seg_folds(&cfg, &records, &root, 1).map_err(e)?;
    train_clf(&cfg, &records, &root).map_err(e)?;
    Ok(DeskRun { cfg, records, root, dataset_checksum: summary.checksum, seconds: start.elapsed().as_secs_f64() })
}

fn classifier_accuracy_oracle(clf: &mut Classifier, frames: &[&FrameRecord], truths: &[GroundTruth]) -> f64 {
    let correct = frames
        .iter()
        .zip(truths)
        .filter(|(f, t)| {
            let input = clf.input_for(&f.image);
            (clf.logit(&input).unwrap() > 0.0) == t.positive
        })
        .count();
    correct as f64 / frames.len() as f64
}

fn criterion_6(run: &DeskRun) -> Outcome {
    let e = |e: screenseg::Error| e.to_string();
    let cfg = &run.cfg;
    check(
        cfg.phantom.n_patients == 10
            && cfg.phantom.frames_per_patient == 20
            && cfg.phantom.negative_frame_fraction == 0.2
            && cfg.phantom.rater_boundary_jitter == 3.0
            && cfg.train.folds == 3
            && cfg.train.epochs <= 40
            && cfg.train.label_strategy.to_string() == "vote"
            && cfg.train.loss.to_string() == "dice",
        "desk configuration does not match the required setup",
    )?;
    let test = test_set(&run.records);
    let truths: Vec<GroundTruth> = test
        .iter()
        .map(|f| ground_truth(f, GroundTruthRule::Consensus, cfg.train.min_consensus_pixels))
        .collect::<Result<_, _>>()
        .map_err(e)?;

    // mean Dice of the fold ensemble over every truly positive test frame
    let (mut ens, _) = screenseg::experiment::load_cell_ensemble(&run.root, &cfg.train_cell()).map_err(e)?;
    let mut dice = Vec::new();
    for (f, t) in test.iter().zip(&truths).filter(|(_, t)| t.positive) {
        let pred = ensemble_predict(&mut ens, &f.image).map_err(e)?;
        dice.push(dice_coefficient(&pred.mask, &t.mask).map_err(e)?);
    }
    let positive_dice = dice.iter().sum::<f64>() / dice.len() as f64;

    let mut clf = screenseg::experiment::load_trained_classifier(&run.root).map_err(e)?;
    let accuracy = classifier_accuracy_oracle(&mut clf, &test, &truths);

    let sweeps = sweep_all_cells(cfg, &run.records, &run.root).map_err(e)?;
    let sweep = &sweeps[0].sweep;
    let seg_only = sweep.segmentation_only.dice_stats.as_ref().map(|s| s.mean).unwrap_or(f64::NAN);
    let screened = sweep.thresholds[0].dice_stats.as_ref().map(|s| s.mean).unwrap_or(f64::NAN);
    let detail = format!(
        "positive-frame Dice {positive_dice:.4} ({} frames), classifier accuracy {accuracy:.4} ({} frames), \
         mean Dice seg-only {seg_only:.4} vs screened@0 {screened:.4}, runtime {:.0} s",
        dice.len(),
        test.len(),
        run.seconds
    );
    check(positive_dice >= 0.80, format!("Dice below 0.80: {detail}"))?;
    check(accuracy >= 0.90, format!("accuracy below 0.90: {detail}"))?;
    check(screened >= seg_only - 0.02, format!("screening cost more than 0.02 Dice: {detail}"))?;
    check(run.seconds <= 20.0 * 60.0, format!("over 20 minutes: {detail}"))?;
    Ok(detail)
}

fn sha256_file(path: &Path) -> Result<String, String> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn run_artifacts(run: &DeskRun) -> Vec<(String, PathBuf)> {
    let cell = run.cfg.train_cell();
    let mut out = Vec::new();
    for k in 0..run.cfg.train.folds {
        let d = fold_dir(&run.root, &cell, k);
        out.push((format!("fold{k}/{HISTORY_FILE}"), d.join(HISTORY_FILE)));
        out.push((format!("fold{k}/{PARAMS_FILE}"), d.join(PARAMS_FILE)));
    }
    let c = classifier_dir(&run.root);
    out.push((format!("clf/{HISTORY_FILE}"), c.join(HISTORY_FILE)));
    out.push((format!("clf/{PARAMS_FILE}"), c.join(PARAMS_FILE)));
    out
}

fn criterion_7(first: &DeskRun, second: &DeskRun) -> Outcome {
    check(first.dataset_checksum == second.dataset_checksum, "dataset checksums differ")?;
    let a = run_artifacts(first);
    let b = run_artifacts(second);
    for ((name, pa), (_, pb)) in a.iter().zip(&b) {
        let (ha, hb) = (sha256_file(pa)?, sha256_file(pb)?);
        check(ha == hb, format!("{name} differs between runs"))?;
        if name.ends_with(HISTORY_FILE) {
            check(fs::read(pa).unwrap() == fs::read(pb).unwrap(), format!("{name} bytes differ"))?;
        }
    }
    let meta_a = screenseg::models::read_meta(&classifier_dir(&first.root)).map_err(|e| e.to_string())?;
    let meta_b = screenseg::models::read_meta(&classifier_dir(&second.root)).map_err(|e| e.to_string())?;
    check(meta_a.checksum == meta_b.checksum, "classifier checksums differ")?;
    Ok(format!("{} artifacts identical across two seeded runs (history.csv and checkpoints)", a.len()))
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Grid::from_fn(h, w, |_, _| rng.random::<f32>())
}

fn criterion_8(run: &DeskRun) -> Outcome {
    let e = |e: screenseg::Error| e.to_string();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SegNetSpec { depth: 3, base_channels: 4, ..SegNetSpec::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    let one = dir.path().join("one");
    let mut single = build_segmenter(&spec, 11).map_err(e)?;
    save_segmenter(&one, &single).map_err(e)?;
    let mut same = EnsembleModel::load(&[&one, &one, &one]).map_err(e)?;
    for _ in 0..5 {
        let img = random_image(&mut rng, 32, 48);
        let ens = ensemble_predict(&mut same, &img).map_err(e)?;
        let solo = single_predict(&mut single, &img).map_err(e)?;
        check(ens.probabilities == solo, "three identical members differ from the single model")?;
    }

    let mut bounded = 0usize;
    let mut check_bounds = |members: &mut Vec<screenseg::models::Segmenter>, img: &Image| -> Result<(), String> {
        let maps: Vec<Grid<f32>> = members.iter_mut().map(|m| single_predict(m, img)).collect::<Result<_, _>>().map_err(e)?;
        let mut ens = EnsembleModel::new(members.clone()).map_err(e)?;
        let mean = ensemble_predict(&mut ens, img).map_err(e)?.probabilities;
        for i in 0..mean.len() {
            let v = mean.as_slice()[i];
            let lo = maps.iter().map(|m| m.as_slice()[i]).fold(f32::INFINITY, f32::min);
            let hi = maps.iter().map(|m| m.as_slice()[i]).fold(f32::NEG_INFINITY, f32::max);
            check(lo <= v && v <= hi, format!("pixel {i}: mean {v} outside [{lo}, {hi}]"))?;
        }
        bounded += mean.len();
        Ok(())
    };
    let mut random_members: Vec<_> = (0..3).map(|s| build_segmenter(&spec, 20 + s).unwrap()).collect();
    for _ in 0..5 {
        let img = random_image(&mut rng, 32, 32);
        check_bounds(&mut random_members, &img)?;
    }
    let (trained, _) = screenseg::experiment::load_cell_ensemble(&run.root, &run.cfg.train_cell()).map_err(e)?;
    let mut trained_members = trained.members().to_vec();
    for f in test_set(&run.records).iter().take(5) {
        check_bounds(&mut trained_members, &f.image)?;
    }
    Ok(format!("identical-member ensemble is bit-exact; {bounded} pixels within member min/max"))
}

/// Two-sided p-value of Student's t with 4 degrees of freedom, closed form.
fn t4_two_sided(t: f64) -> f64 {
    let x = t.abs();
    let u = 1.0 + x * x / 4.0;
    let cdf = 0.5 + 0.375 * (x / u.sqrt()) * (1.0 - x * x / (12.0 * u));
    2.0 * (1.0 - cdf)
}

fn criterion_9() -> Outcome {
    let a = [0.1, 0.2, 0.3];
    let b = [0.4, 0.5, 0.6];
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (va, vb) = (var(&a) / 3.0, var(&b) / 3.0);
    let t_ref = (mean(&a) - mean(&b)) / (va + vb).sqrt();
    let df_ref = (va + vb).powi(2) / (va * va / 2.0 + vb * vb / 2.0);
    check((df_ref - 4.0).abs() < 1e-9, format!("reference df {df_ref}"))?;
    let p_ref = t4_two_sided(t_ref);
    let r = welch_t_test(&a, &b).map_err(|e| e.to_string())?;
    check((r.t - t_ref).abs() < 1e-6, format!("t {} vs reference {t_ref}", r.t))?;
    check((r.p - p_ref).abs() < 1e-6, format!("p {} vs reference {p_ref}", r.p))?;
    check((r.t - -3.674).abs() < 5e-4 && (r.p - 0.0213).abs() < 5e-5, format!("t {} p {}", r.t, r.p))?;
    Ok(format!("t = {:.4}, p = {:.6}, df = {:.3} (reference p = {p_ref:.6})", r.t, r.p, r.df))
}

fn guarded_run(dir: &Path) -> Result<DeskRun, String> {
    catch_unwind(AssertUnwindSafe(|| desk_run(dir))).unwrap_or_else(|_| Err("desk run panicked".into()))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

const NAMES: [&str; 9] = [
    "sampling oracle equivalence",
    "loss gradients",
    "class weights",
    "screening monotonicity",
    "exclusion-rule Dice",
    "end-to-end desk run",
    "determinism",
    "ensemble contract",
    "Welch t-test",
];

fn main() {
    // `cargo test -- --list` and filtered runs probe the binary; keep those cheap
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }

    let mut results: Vec<Outcome> = Vec::new();
    results.push(guarded(criterion_1));
    results.push(guarded(criterion_2));
    results.push(guarded(criterion_3));

    let dirs = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    eprintln!("acceptance: desk run 1 of 2");
    let first = guarded_run(dirs.0.path());
    results.push(match &first {
        Ok(run) => guarded(|| criterion_4(run)),
        Err(e) => Err(format!("desk run failed: {e}")),
    });
    results.push(guarded(criterion_5));
    results.push(match &first {
        Ok(run) => guarded(|| criterion_6(run)),
        Err(e) => Err(format!("desk run failed: {e}")),
    });
    eprintln!("acceptance: desk run 2 of 2");
    let second = guarded_run(dirs.1.path());
    results.push(match (&first, &second) {
        (Ok(a), Ok(b)) => guarded(|| criterion_7(a, b)),
        (Err(e), _) | (_, Err(e)) => Err(format!("desk run failed: {e}")),
    });
    results.push(match &first {
        Ok(run) => guarded(|| criterion_8(run)),
        Err(e) => Err(format!("desk run failed: {e}")),
    });
    results.push(guarded(criterion_9));

    let mut failed = 0;
    for (i, (name, r)) in NAMES.iter().zip(&results).enumerate() {
        match r {
            Ok(detail) => println!("criterion {} ({name}): PASS - {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL - {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
