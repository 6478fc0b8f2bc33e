//! Command implementations behind the `coxvae` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use coxvae_core::analysis::{self, EMBEDDING_FILE};
use coxvae_core::data::{self, DigitConfig};
use coxvae_core::training::{self, TrainError, CHECKPOINT_FILE, HISTORY_FILE};
use coxvae_core::{Checkpoint, Dataset, SyntheticConfig, TrainConfig};

pub const LOCK_FILE: &str = "config.lock.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TAU_REPORT_FILE: &str = "tau_report.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] coxvae_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    NonFinite(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use coxvae_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::NonFinite(_) => 4,
            CliError::Core(e) => match e {
                E::Config(_) | E::Calibration(_) => 2,
                E::Io(_) | E::Format(_) | E::Validation(_) => 3,
                E::Training(_) => 4,
                E::UndefinedMetric(_) => 5,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "coxvae", version, about = "Survival-aware variational autoencoder")]
pub struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides both the data and the training seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (or convert IDX digits, if configured).
    GenData,
    /// Train a model on a dataset directory.
    Train(DataArgs),
    /// Evaluate a checkpoint on the validation split.
    Eval(ModelArgs),
    /// Export a 2-component PCA embedding of every record.
    Embed(ModelArgs),
    /// Decode traversals of every latent dimension.
    Traverse(TraverseArgs),
    /// Train one model per τ and report PC1/time rank correlation.
    TauSweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding images.svi and survival.csv.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraverseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = -4.0, allow_hyphen_values = true)]
    pub lo: f64,
    #[arg(long, default_value_t = 4.0, allow_hyphen_values = true)]
    pub hi: f64,
    #[arg(long, default_value_t = 9)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.5, 0.99])]
    pub taus: Vec<f64>,
}

/// Everything a run depends on; written back as `config.lock.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: SyntheticConfig,
    pub train: TrainConfig,
    /// Fraction of records held out for validation.
    pub val_fraction: f64,
    /// IDX digit source for `gen-data`; synthetic blobs when absent.
    pub idx: Option<DigitConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: SyntheticConfig::default(),
            train: TrainConfig {
                total_steps: 2000,
                ..TrainConfig::default()
            },
            val_fraction: 0.2,
            idx: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(coxvae_core::Error::from)?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.data.seed = s;
            cfg.train.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.data.validate()?;
        self.train.validate()?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }

    fn write_lock(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))?;
        fs::write(dir.join(LOCK_FILE), text + "\n").map_err(coxvae_core::Error::from)?;
        Ok(())
    }

    fn split(&self, ds: &Dataset, seed: u64) -> CliResult<(Dataset, Dataset)> {
        Ok(data::split(ds, self.val_fraction, seed)?)
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(coxvae_core::Error::from)?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(coxvae_core::Error::from)?;
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg, out),
        Command::Train(a) => cmd_train(&cfg, &a.data, out),
        Command::Eval(a) => {
            let m = cmd_eval(&cfg, &a.checkpoint, &a.data, out)?;
            print!("{}", metrics_report(&m));
            Ok(())
        }
        Command::Embed(a) => cmd_embed(&cfg, &a.checkpoint, &a.data, out),
        Command::Traverse(a) => cmd_traverse(&cfg, &a.checkpoint, out, a.lo, a.hi, a.steps),
        Command::TauSweep(a) => cmd_tau_sweep(&cfg, &a.data, out, &a.taus),
    }
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let ds = match &cfg.idx {
        None => data::generate_blob_dataset(&cfg.data)?,
        Some(idx) => {
            let images = data::load_idx(&idx.images)?;
            let labels = data::load_idx(&idx.labels)?;
            data::digit_dataset(
                &images,
                &labels,
                idx.spread,
                idx.limit,
                cfg.data.baseline_rate,
                cfg.data.censor_rate_target,
                cfg.data.seed,
            )?
        }
    };
    create_dir(out)?;
    data::write_dataset(&ds, out)?;
    cfg.write_lock(out)
}

pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, out: &Path) -> CliResult<()> {
    let ds = data::read_dataset(data_dir)?;
    let (train, val) = cfg.split(&ds, cfg.train.seed)?;
    create_dir(out)?;
    cfg.write_lock(out)?;
    match training::train(&cfg.train, &train, &val) {
        Ok(outcome) => {
            training::save_checkpoint(&outcome.checkpoint, out.join(CHECKPOINT_FILE))?;
            training::write_history(&outcome.history, out.join(HISTORY_FILE))?;
            let metrics = training::evaluate(&outcome.checkpoint.net, &train, &val)?;
            write_json(&metrics, &out.join(METRICS_FILE))
        }
        Err(TrainError::Setup(e)) => Err(e.into()),
        Err(TrainError::NonFinite {
            step,
            last_good,
            history,
        }) => {
            training::save_checkpoint(&last_good, out.join(CHECKPOINT_FILE))?;
            training::write_history(&history, out.join(HISTORY_FILE))?;
            Err(CliError::NonFinite(format!(
                "non-finite loss at step {step}; last good checkpoint (step {}) written",
                last_good.step
            )))
        }
    }
}

/// Flat `key value` lines.
pub fn metrics_report(m: &training::EvalMetrics) -> String {
    format!("cindex {}\nibs {}\nn {}\nn_events {}\n", m.cindex, m.ibs, m.n, m.n_events)
}

/// Metrics on the validation split, with the baseline hazard fitted on
/// the training split; the split reuses the checkpoint's seed.
pub fn cmd_eval(cfg: &RunConfig, ckpt_path: &Path, data_dir: &Path, out: &Path) -> CliResult<training::EvalMetrics> {
    let ckpt = training::load_checkpoint(ckpt_path)?;
    let ds = data::read_dataset(data_dir)?;
    let (train, val) = cfg.split(&ds, ckpt.config.seed)?;
    let metrics = training::evaluate(&ckpt.net, &train, &val)?;
    create_dir(out)?;
    write_json(&metrics, &out.join(METRICS_FILE))?;
    cfg.write_lock(out)?;
    Ok(metrics)
}

pub fn cmd_embed(cfg: &RunConfig, ckpt_path: &Path, data_dir: &Path, out: &Path) -> CliResult<()> {
    let ckpt = training::load_checkpoint(ckpt_path)?;
    let ds = data::read_dataset(data_dir)?;
    create_dir(out)?;
    export(&ckpt, &ds, &out.join(EMBEDDING_FILE))?;
    cfg.write_lock(out)
}

fn export(ckpt: &Checkpoint, ds: &Dataset, path: &Path) -> CliResult<analysis::Embedding> {
    let emb = analysis::encode_dataset(&ckpt.net, ds)?;
    let p = analysis::pca(&emb.mu, 2)?;
    analysis::export_embedding(&emb, &p, path)?;
    Ok(emb)
}

pub fn cmd_traverse(cfg: &RunConfig, ckpt_path: &Path, out: &Path, lo: f64, hi: f64, steps: usize) -> CliResult<()> {
    let ckpt = training::load_checkpoint(ckpt_path)?;
    analysis::write_traversals(&ckpt, out, lo, hi, steps)?;
    cfg.write_lock(out)
}

/// One row of `tau_report.csv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub abs_spearman_pc1_time: f64,
    pub val_cindex: f64,
}

fn sweep_one(cfg: &RunConfig, tau: f64, train: &Dataset, val: &Dataset, dir: &Path) -> CliResult<SweepRow> {
    let mut run = cfg.clone();
    run.train.tau = tau;
    run.validate()?;
    create_dir(dir)?;
    run.write_lock(dir)?;
    let outcome = match training::train(&run.train, train, val) {
        Ok(o) => o,
        Err(TrainError::Setup(e)) => return Err(e.into()),
        Err(TrainError::NonFinite { step, .. }) => {
            return Err(CliError::NonFinite(format!("τ={tau}: non-finite loss at step {step}")))
        }
    };
    training::save_checkpoint(&outcome.checkpoint, dir.join(CHECKPOINT_FILE))?;
    training::write_history(&outcome.history, dir.join(HISTORY_FILE))?;
    let emb = export(&outcome.checkpoint, val, &dir.join(EMBEDDING_FILE))?;
    let metrics = training::evaluate(&outcome.checkpoint.net, train, val)?;
    write_json(&metrics, &dir.join(METRICS_FILE))?;
    Ok(SweepRow {
        tau,
        abs_spearman_pc1_time: analysis::pc1_time_correlation(&emb)?,
        val_cindex: metrics.cindex,
    })
}

/// Trains the τ values concurrently on identical data and seeds.
pub fn cmd_tau_sweep(cfg: &RunConfig, data_dir: &Path, out: &Path, taus: &[f64]) -> CliResult<()> {
    if taus.is_empty() {
        return Err(CliError::Config("tau-sweep needs at least one τ".into()));
    }
    let ds = data::read_dataset(data_dir)?;
    let (train, val) = cfg.split(&ds, cfg.train.seed)?;
    create_dir(out)?;
    cfg.write_lock(out)?;
    let rows: Vec<CliResult<SweepRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = taus
            .iter()
            .map(|&tau| {
                let dir = out.join(format!("tau_{tau}"));
                let (train, val) = (&train, &val);
                s.spawn(move || sweep_one(cfg, tau, train, val, &dir))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut report = String::from("tau,abs_spearman_pc1_time,val_cindex\n");
    for row in rows {
        let row = row?;
        report.push_str(&format!("{},{},{}\n", row.tau, row.abs_spearman_pc1_time, row.val_cindex));
    }
    fs::write(out.join(TAU_REPORT_FILE), report).map_err(coxvae_core::Error::from)?;
    Ok(())
}
