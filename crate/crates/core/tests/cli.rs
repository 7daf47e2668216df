use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_screenseg");

const TINY: &str = r#"{
  "seed": 3,
  "phantom": {"image_height": 32, "image_width": 32, "n_patients": 6, "frames_per_patient": 5,
              "gland_axis_range": [5, 9]},
  "train": {"batch_size": 4, "epochs": 2, "folds": 3},
  "segmenter": {"depth": 3, "base_channels": 4},
  "classifier": {"input_size": 32}
}"#;

fn run(args: &[&str], cache: Option<&Path>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("SCREENSEG_CACHE");
    if let Some(c) = cache {
        cmd.env("SCREENSEG_CACHE", c);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gen_data_reports_rows_and_detects_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("data");
    let out = out.to_str().unwrap();
    let first = run(&["--config", &cfg, "--out", out, "gen-data"], None);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("rows: 30"));
    assert!(!stdout(&first).contains("dataset unchanged"));
    let echoed: serde_json::Value = serde_json::from_str(&fs::read_to_string(Path::new(out).join("run.json")).unwrap()).unwrap();
    assert_eq!(echoed["phantom"]["seed"], 3);
    assert_eq!(echoed["train"]["lr_gamma"], 0.99);

    let again = run(&["--config", &cfg, "--out", out, "gen-data"], None);
    assert_eq!(again.status.code(), Some(0));
    assert!(stdout(&again).contains("dataset unchanged"));

    let other = run(&["--config", &cfg, "--out", out, "--seed", "4", "gen-data"], None);
    assert!(!stdout(&other).contains("dataset unchanged"));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    for (text, needle) in [
        ("{\"seed\": 1,", "line"),
        ("{\"sede\": 1}", "unknown field"),
        ("{\"train\": {\"label_strategy\": \"combine:1.5\"}}", "combine"),
        ("{\"phantom\": {\"n_patients\": 0}}", "n_patients"),
    ] {
        let cfg = write_config(dir.path(), text);
        let o = run(&["--config", &cfg, "--out", out, "gen-data"], None);
        assert_eq!(o.status.code(), Some(2), "{text}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle) || err.contains("1.5"), "{text}: {err}");
    }
    let missing = dir.path().join("absent.json");
    let o = run(&["--config", missing.to_str().unwrap(), "--out", out, "gen-data"], None);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(dir.path(), r#"{"train": {"label_strategy": "combine:0.25"}}"#);
    let o = run(&["--config", &cfg, "--out", out, "gen-data"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn runtime_failures_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("empty");
    let o = run(&["--config", &cfg, "--out", out.to_str().unwrap(), "train", "seg"], None);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["--config", &cfg, "--out", out.to_str().unwrap(), "eval"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn full_pipeline_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let cache = dir.path().join("cache");
    let o_str = out.to_str().unwrap();
    let step = |args: &[&str]| {
        let mut full = vec!["--config", cfg.as_str(), "--out", o_str];
        full.extend_from_slice(args);
        let o = run(&full, Some(&cache));
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    step(&["gen-data"]);
    step(&["--jobs", "3", "train", "seg"]);
    let cell = cache.join("seg").join("vote__dice");
    let folds: Vec<_> = (0..3).map(|k| cell.join(format!("fold{k}"))).collect();
    assert!(folds.iter().all(|f| f.join("params.bin").exists() && f.join("history.csv").exists()));
    assert!(!out.join("seg").exists());

    // a rerun with the same seed reproduces the histories, parallel or not
    let histories: Vec<Vec<u8>> = folds.iter().map(|f| fs::read(f.join("history.csv")).unwrap()).collect();
    step(&["--deterministic", "train", "seg"]);
    for (f, h) in folds.iter().zip(&histories) {
        assert_eq!(&fs::read(f.join("history.csv")).unwrap(), h);
    }
    let header = String::from_utf8_lossy(&histories[0]).lines().next().unwrap().to_string();
    assert_eq!(header, "epoch,lr,train_loss,val_dice");

    step(&["train", "clf"]);
    assert!(cache.join("clf").join("model.json").exists());

    step(&["eval"]);
    let mut rd = csv::Reader::from_path(out.join("eval_summary.csv")).unwrap();
    let headers = rd.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "p_value"));
    assert!(headers.iter().any(|h| h == "seg_checkpoints"));
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 7);
    let ckpt = headers.iter().position(|h| h == "seg_checkpoints").unwrap();
    assert!(rows.iter().all(|r| r[ckpt] == rows[0][ckpt]));
    assert!(out.join("eval_summary.json").exists());
    assert!(out.join("eval_frames.csv").exists());

    step(&["sweep"]);
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let fpr_rows: Vec<&str> = text.lines().filter(|l| l.contains(",fpr,") && !l.contains(",none,")).collect();
    assert_eq!(fpr_rows.len(), 6);
    let dice_svg = fs::read(out.join("sweep_dice.svg")).unwrap();
    let rates_svg = fs::read(out.join("sweep_rates.svg")).unwrap();
    step(&["sweep"]);
    assert_eq!(fs::read(out.join("sweep_dice.svg")).unwrap(), dice_svg);
    assert_eq!(fs::read(out.join("sweep_rates.svg")).unwrap(), rates_svg);
}
