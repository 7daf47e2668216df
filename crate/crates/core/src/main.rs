use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use screenseg::experiment::{
    checkpoint_root, echo_config, eval_and_write, gen_data, load_records, sweep_and_write, train_clf, train_seg_folds,
    RunConfig,
};
use screenseg::Error;

#[derive(Parser, Debug)]
#[command(name = "screenseg", version, about = "Classifier-screened ultrasound segmentation on synthetic phantoms")]
struct Cli {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configuration's top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Train folds in parallel on up to N threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Force single-threaded execution regardless of --jobs.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset into --out.
    GenData,
    /// Train fold segmenters or the frame classifier.
    Train {
        #[arg(value_enum)]
        target: Target,
    },
    /// Evaluate every configured cell on the test split.
    Eval {
        /// Checkpoint root; defaults to the cache resolution order.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Sweep screening thresholds and render the plots.
    Sweep {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Target {
    Seg,
    Clf,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    cfg.resolve(cli.seed)
}

fn ckpt_root(cfg: &RunConfig, explicit: Option<&Path>, out: &Path) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_root(cfg, out))
}

fn run(cli: &Cli) -> Result<(), Error> {
    let mut cfg = load_config(cli)?;
    if cfg.data_dir.is_none() {
        cfg.data_dir = Some(cli.out.clone());
    }
    if cli.jobs < 1 {
        return Err(Error::config("--jobs", "must be at least 1"));
    }
    let jobs = if cli.deterministic { 1 } else { cli.jobs };
    echo_config(&cfg, &cli.out)?;
    match &cli.command {
        Command::GenData => {
            let s = gen_data(&cfg, &cli.out)?;
            println!("manifest: {}", s.manifest.display());
            println!(
                "rows: {} ({} positive, {} negative; {} train/val, {} test)",
                s.frames, s.positive_frames, s.negative_frames, s.train_frames, s.test_frames
            );
            println!("checksum: {}", s.checksum);
            if s.unchanged {
                println!("dataset unchanged");
            }
        }
        Command::Train { target } => {
            let records = load_records(&cfg)?;
            let root = checkpoint_root(&cfg, &cli.out);
            match target {
                Target::Seg => {
                    let results = train_seg_folds(&cfg, &records, &root, jobs)?;
                    for (k, r) in results.iter().enumerate() {
                        let best = &r.history[r.best_epoch];
                        println!("fold {k}: best epoch {} val_dice {:.4}", r.best_epoch, best.val_metric);
                    }
                }
                Target::Clf => {
                    let r = train_clf(&cfg, &records, &root)?;
                    let best = &r.history[r.best_epoch];
                    println!("classifier: best epoch {} val_acc {:.4}", r.best_epoch, best.val_metric);
                }
            }
            println!("checkpoints: {}", root.display());
        }
        Command::Eval { checkpoints } => {
            let records = load_records(&cfg)?;
            let root = ckpt_root(&cfg, checkpoints.as_deref(), &cli.out);
            let rows = eval_and_write(&cfg, &records, &root, &cli.out)?;
            println!("strategy,loss,threshold,n_included,mean_dice,std_dice,median_dice,fpr,fnr,p_value");
            for r in rows {
                let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{},{},{},{},{},{},{},{:.4},{:.4},{}",
                    r.strategy,
                    r.loss,
                    r.threshold,
                    r.n_included,
                    f(r.mean_dice),
                    f(r.std_dice),
                    f(r.median_dice),
                    r.fpr,
                    r.fnr,
                    f(r.p_value)
                );
            }
        }
        Command::Sweep { checkpoints } => {
            let records = load_records(&cfg)?;
            let root = ckpt_root(&cfg, checkpoints.as_deref(), &cli.out);
            let (rows, plots) = sweep_and_write(&cfg, &records, &root, &cli.out)?;
            println!("sweep rows: {}", rows.len());
            for p in plots {
                println!("plot: {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
