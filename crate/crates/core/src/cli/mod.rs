//! Command-line orchestration: configs, presets, runs and artifacts.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::data::{data_dir, gen_ood, split_dataset, Dataset, Splits};
use crate::error::{Error, Result};
use crate::inference::{
    evaluate, kl_diagnose, train, write_log_csv, Checkpoint, KlRow, KlSetup, Psdebnn, TrainConfig,
};
use crate::metrics::{self, histogram, write_histogram_csv, write_metrics_csv, MetricRow, PredictionSet, Source};
use crate::solvers::derive_seed;

pub use config::{
    apply_override, deep_merge, load_paths_config, load_run_config, paths_preset, run_preset, EvalConfig,
    PathsConfig, RunConfig, SplitConfig, HORCUT_RATIO, PATH_PRESETS, PRESET_RATIO, RUN_PRESETS,
};

#[derive(Debug, Parser)]
#[command(name = "psdebnn", version, about = "Partially stochastic infinitely deep BNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file or preset name.
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Batch shards evaluated concurrently (1 keeps runs bitwise reproducible).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Config override `key.path=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write runs/<name>/{config.json,log.csv,checkpoint.bin,metrics.csv}.
    Train(Common),
    /// Evaluate a checkpoint on its test split and an OOD set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// uniform_noise, gaussian_noise or shifted.
        #[arg(long)]
        ood_kind: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one weight-path CSV per seed.
    SamplePaths {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Tabulate the discretized path KL of Euler transitions against N.
    KlDiagnose {
        #[arg(long)]
        sigma_q: f64,
        #[arg(long)]
        sigma_p: f64,
        /// Comma-separated step counts.
        #[arg(long, value_delimiter = ',', default_value = "16,64,256,1024,4096,16384")]
        steps: Vec<usize>,
        /// Constant drift gap `f_q - f_p`.
        #[arg(long, default_value_t = 0.0)]
        drift_gap: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate (or load) a run's dataset and write it as a CSV cache.
    GenData(Common),
}

/// Runs the CLI and returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(common) => {
            let cfg = resolve_run(&common)?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("runs"));
            let summary = cmd_train(&cfg, &out)?;
            println!("{summary}");
            Ok(())
        }
        Command::Eval {
            checkpoint,
            ood_kind,
            samples,
            seed,
            out,
        } => {
            let rows = cmd_eval(&checkpoint, ood_kind.as_deref(), samples, seed, out.as_deref())?;
            write_metrics_csv(&rows, std::io::stdout()).map_err(|e| Error::io("<stdout>", e))
        }
        Command::SamplePaths { common, seeds } => {
            let mut cfg = load_paths_config(&common.config, &common.overrides)?;
            if let Some(n) = seeds {
                cfg.seeds = n;
            }
            let out = common.out.unwrap_or_else(|| PathBuf::from("paths"));
            let files = cmd_sample_paths(&cfg, common.seed.unwrap_or(0), &out)?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::KlDiagnose {
            sigma_q,
            sigma_p,
            steps,
            drift_gap,
            horizon,
            seed,
            out,
        } => {
            let setup = KlSetup {
                sigma_q,
                sigma_p,
                horizon,
                w0: 0.0,
                seed,
            };
            let rows = cmd_kl_diagnose(setup, drift_gap, &steps)?;
            let mut stdout = std::io::stdout();
            write_kl_csv(&rows, &mut stdout).map_err(|e| Error::io("<stdout>", e))?;
            if let Some(path) = out {
                let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                write_kl_csv(&rows, file).map_err(|e| Error::io(&path, e))?;
            }
            Ok(())
        }
        Command::GenData(common) => {
            let cfg = resolve_run(&common)?;
            let dir = common.out.unwrap_or_else(data_dir);
            let path = cmd_gen_data(&cfg, &dir)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn resolve_run(common: &Common) -> Result<RunConfig> {
    let mut cfg = load_run_config(&common.config, &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(t) = common.threads {
        cfg.threads = t.max(1);
    }
    Ok(cfg)
}

fn io_write(path: &Path, f: impl FnOnce(&mut fs::File) -> std::io::Result<()>) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f(&mut file).map_err(|e| Error::io(path, e))
}

/// Seeds derived from the run seed, one stream per purpose.
pub struct RunSeeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
    pub eval: u64,
    pub ood: u64,
}

impl RunSeeds {
    pub fn new(seed: u64) -> Self {
        RunSeeds {
            data: seed,
            init: derive_seed(seed, 1),
            train: derive_seed(seed, 2),
            eval: derive_seed(seed, 3),
            ood: derive_seed(seed, 4),
        }
    }
}

/// Generates the dataset and its normalized splits.
pub fn prepare_data(cfg: &RunConfig) -> Result<Splits> {
    let seeds = RunSeeds::new(cfg.seed);
    let data = cfg.dataset.generate(seeds.data)?;
    split_dataset(
        &data,
        cfg.split.train_frac,
        cfg.split.val_frac,
        derive_seed(seeds.data, 7),
        cfg.split.normalize,
    )
}

/// The training configuration with run-level seed and thread count applied.
pub fn effective_train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        seed: RunSeeds::new(cfg.seed).train,
        threads: cfg.threads,
        ..cfg.train.clone()
    }
}

/// Evaluation of a trained model on ID test data and generated OOD data.
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub rows: Vec<MetricRow>,
    pub id: PredictionSet,
    pub ood: PredictionSet,
    pub auc: f64,
}

pub fn evaluate_run(model: &Psdebnn, params: &crate::inference::ParamStore, cfg: &RunConfig, splits: &Splits) -> Result<EvalOutcome> {
    let seeds = RunSeeds::new(cfg.seed);
    let e = &cfg.eval;
    let start = Instant::now();
    let (report, id) = evaluate(model, params, &splits.test, e.samples, seeds.eval, e.ece_bins)?;
    let n_ood = e.ood_n.unwrap_or(splits.test.len());
    let ood_data = gen_ood(n_ood, splits.test.dim(), e.ood_kind, seeds.ood)?;
    let ood_pred = model.predict_with_stats(params, &ood_data.features, e.samples, seeds.eval)?;
    let ood = PredictionSet::new(ood_pred.probs, None, Source::Ood)?;
    let seconds = start.elapsed().as_secs_f64();
    let id_h = id.entropies();
    let ood_h = ood.entropies();
    let auc = metrics::roc_auc(&id_h, &ood_h)?;
    let draws = report.brownian_draws + ood_pred.brownian_draws;
    let rows = vec![
        MetricRow::new("accuracy", report.accuracy, "test"),
        MetricRow::new("ece", report.ece, "test"),
        MetricRow::new("mean_entropy", metrics::mean(&id_h), "test"),
        MetricRow::new("mean_entropy", metrics::mean(&ood_h), "ood"),
        MetricRow::new("roc_auc", auc, "ood"),
        MetricRow::new("brownian_draws", draws as f64, "all"),
        MetricRow::new("brownian_draws_per_sample", model.draws_per_sample() as f64, "all"),
        MetricRow::new("stochastic_steps", model.grid().stochastic_steps() as f64, "all"),
        MetricRow::new("inference_seconds", seconds, "all"),
    ];
    Ok(EvalOutcome { rows, id, ood, auc })
}

fn write_histograms(path: &Path, out: &EvalOutcome, classes: usize, bins: usize) -> Result<()> {
    let hi = (classes.max(2) as f64).ln();
    let mut all = histogram(&out.id.entropies(), bins, 0.0, hi, Source::Id)?;
    all.extend(histogram(&out.ood.entropies(), bins, 0.0, hi, Source::Ood)?);
    io_write(path, |f| write_histogram_csv(&all, f))
}

/// Trains, checkpoints the best-validation parameters, and evaluates them.
/// Returns a one-line summary.
pub fn cmd_train(cfg: &RunConfig, out_root: &Path) -> Result<String> {
    let model = Psdebnn::new(cfg.model.clone())?;
    let splits = prepare_data(cfg)?;
    if splits.train.dim() != model.dynamics.input_dim {
        return Err(Error::Config(format!(
            "model.dynamics.input_dim is {} but the dataset has {} features",
            model.dynamics.input_dim,
            splits.train.dim()
        )));
    }
    let dir = out_root.join(&cfg.name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let snapshot = serde_json::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("config.json"), snapshot).map_err(|e| Error::io(dir.join("config.json"), e))?;

    let seeds = RunSeeds::new(cfg.seed);
    let params = model.init_params(seeds.init)?;
    let tcfg = effective_train_config(cfg);
    let outcome = train(&model, params, &splits.train, &splits.val, &tcfg)?;
    io_write(&dir.join("log.csv"), |f| write_log_csv(&outcome.log, f))?;

    let checkpoint = Checkpoint {
        config: cfg.model.clone(),
        metadata: json!({
            "run": cfg,
            "normalization": splits.normalization,
            "best_epoch": outcome.best_epoch,
            "best_val_accuracy": outcome.best_val_accuracy,
            "kappa": outcome.kappa,
        }),
        params: outcome.best_params.clone(),
    };
    checkpoint.save(&dir.join("checkpoint.bin"))?;

    let eval = evaluate_run(&model, &outcome.best_params, cfg, &splits)?;
    let mut rows = eval.rows.clone();
    rows.push(MetricRow::new("best_val_accuracy", outcome.best_val_accuracy, "val"));
    let epoch_seconds = metrics::mean(&outcome.log.iter().map(|l| l.seconds).collect::<Vec<_>>());
    rows.push(MetricRow::new("seconds_per_epoch", epoch_seconds, "train"));
    io_write(&dir.join("metrics.csv"), |f| write_metrics_csv(&rows, f))?;
    write_histograms(&dir.join("entropy_hist.csv"), &eval, model.config.num_classes, cfg.eval.hist_bins)?;
    Ok(format!(
        "{}: best val accuracy {:.4} at epoch {}, test accuracy {:.4}, ROC-AUC {:.4} ({})",
        cfg.name,
        outcome.best_val_accuracy,
        outcome.best_epoch,
        eval.rows[0].value,
        eval.auc,
        dir.display()
    ))
}

/// Re-creates the run's data from the checkpoint metadata and evaluates.
pub fn cmd_eval(
    checkpoint: &Path,
    ood_kind: Option<&str>,
    samples: Option<usize>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<Vec<MetricRow>> {
    let ck = Checkpoint::load(checkpoint)?;
    let run = ck
        .metadata
        .get("run")
        .cloned()
        .ok_or_else(|| Error::Config("checkpoint has no run metadata".into()))?;
    let mut cfg: RunConfig = config::from_value(run, "run metadata")?;
    cfg.model = ck.config.clone();
    if let Some(kind) = ood_kind {
        cfg.eval.ood_kind = config::from_value(json!(kind), "ood kind")?;
    }
    if let Some(s) = samples {
        cfg.eval.samples = s;
    }
    let splits = prepare_data(&cfg)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let model = Psdebnn::new(cfg.model.clone())?;
    let eval = evaluate_run(&model, &ck.params, &cfg, &splits)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io_write(&dir.join("metrics.csv"), |f| write_metrics_csv(&eval.rows, f))?;
        write_histograms(&dir.join("entropy_hist.csv"), &eval, model.config.num_classes, cfg.eval.hist_bins)?;
    }
    Ok(eval.rows)
}

/// Writes `<out>/<name>/seed_<k>.csv` for `k` in `0..seeds`.
pub fn cmd_sample_paths(cfg: &PathsConfig, base_seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let model = Psdebnn::new(cfg.model.clone())?;
    let params = model.init_params(base_seed)?;
    let dir = out.join(&cfg.name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = Vec::with_capacity(cfg.seeds);
    for k in 0..cfg.seeds {
        let record = model.sample_path(&params, None, derive_seed(base_seed, k as u64))?;
        let path = dir.join(format!("seed_{k}.csv"));
        io_write(&path, |f| record.write_csv(f))?;
        files.push(path);
    }
    Ok(files)
}

pub fn cmd_kl_diagnose(setup: KlSetup, drift_gap: f64, steps: &[usize]) -> Result<Vec<KlRow>> {
    kl_diagnose(setup, |_, _| drift_gap, |_, _| 0.0, steps)
}

pub fn write_kl_csv<W: Write>(rows: &[KlRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "steps,kl,kl_per_step")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.steps, r.kl, r.kl_per_step)?;
    }
    Ok(())
}

/// Writes the raw (unnormalized) dataset to `<dir>/<name>.csv`.
pub fn cmd_gen_data(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let data: Dataset = cfg.dataset.generate(RunSeeds::new(cfg.seed).data)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{}.csv", cfg.name));
    data.save_csv(&path)?;
    Ok(path)
}
