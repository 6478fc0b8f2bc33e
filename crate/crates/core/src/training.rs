//! Joint training with two Adam optimizers, evaluation and checkpoints.
//!
//! One backward pass per step over the τ-mixed objective; the gradient is
//! then split by parameter: encoder and decoder go to one optimizer at
//! `lr_vae`, the Cox head ψ to the other at `lr_cox`.
//!
//! Checkpoint layout (`model.svck`, all integers little-endian):
//!
//! ```text
//! "SVCK" u32:version
//! u32:len  JSON {"train": TrainConfig, "arch": Architecture}
//! u32:count  { u32:name_len name u32:rank u32×rank f64×numel }*   parameters
//! u64:t u32:count { record }*                                      Adam (φ, θ)
//! u64:t u32:count { record }*                                      Adam (ψ)
//! u64:step  u32:len rng-state
//! u32:crc32 of every preceding byte
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward_objective, Likelihood, LossReport, LossWeights, SurvivalBatch};
use crate::network::{AdamState, Architecture, CoxVaeNet};
use crate::survstats::{
    breslow_baseline, censoring_km, concordance_index, default_ibs_grid, integrated_brier,
};

pub const CHECKPOINT_FILE: &str = "model.svck";
pub const HISTORY_FILE: &str = "history.csv";
const CKPT_MAGIC: &[u8; 4] = b"SVCK";
const CKPT_VERSION: u32 = 1;
const FULL_BATCH_LIMIT: usize = 512;
const IBS_GRID_POINTS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: f64,
    pub beta: f64,
    pub lr_vae: f64,
    pub lr_cox: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub n_blocks: usize,
    pub likelihood: Likelihood,
    pub seed: u64,
    pub eval_every: u64,
    /// Use the whole training set as every batch, so Cox risk sets span
    /// the full data. Only for training sets of at most 512 records.
    pub full_batch_cox: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            beta: 1.0,
            lr_vae: 1e-4,
            lr_cox: 1e-5,
            batch_size: 16,
            total_steps: 16_000,
            latent_dim: 8,
            hidden_width: 128,
            n_blocks: 4,
            likelihood: Likelihood::Bernoulli,
            seed: 0,
            eval_every: 500,
            full_batch_cox: false,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            tau: self.tau,
            beta: self.beta,
            likelihood: self.likelihood,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        for (name, v) in [("lr_vae", self.lr_vae), ("lr_cox", self.lr_cox)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("latent_dim", self.latent_dim),
            ("hidden_width", self.hidden_width),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden_width: self.hidden_width,
            latent_dim: self.latent_dim,
            n_blocks: self.n_blocks,
            zero_init_residual: false,
        }
    }
}

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub net: CoxVaeNet,
    pub opt_vae: AdamState,
    pub opt_cox: AdamState,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub step: u64,
    pub report: LossReport,
    pub val_cindex: Option<f64>,
}

/// Validation metrics of a model's own risk score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub cindex: f64,
    pub ibs: f64,
    pub n: usize,
    pub n_events: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error("non-finite loss or gradient at step {step}")]
    NonFinite {
        step: u64,
        last_good: Box<Checkpoint>,
        history: Vec<HistoryRow>,
    },
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<HistoryRow>,
}

/// Live training state; [`Checkpoint`] is its frozen form.
pub struct Trainer<'a> {
    state: Checkpoint,
    train: &'a Dataset,
    val: &'a Dataset,
    batches_per_epoch: usize,
    epoch_order: Option<(u64, Vec<usize>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &TrainConfig, train: &'a Dataset, val: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let net = CoxVaeNet::new(cfg.architecture(train.pixels()), cfg.seed)?;
        let opt_vae = AdamState::new(&net.store, net.vae_params(), cfg.lr_vae);
        let opt_cox = AdamState::new(&net.store, net.cox_params(), cfg.lr_cox);
        let state = Checkpoint {
            config: cfg.clone(),
            net,
            opt_vae,
            opt_cox,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2)),
        };
        Self::from_checkpoint(state, train, val)
    }

    pub fn from_checkpoint(state: Checkpoint, train: &'a Dataset, val: &'a Dataset) -> Result<Self> {
        let cfg = &state.config;
        cfg.validate()?;
        if train.pixels() != state.net.arch.input_dim || val.pixels() != state.net.arch.input_dim {
            return Err(Error::Dimension(format!(
                "model expects {} pixels, datasets have {} and {}",
                state.net.arch.input_dim,
                train.pixels(),
                val.pixels()
            )));
        }
        let batches_per_epoch = if cfg.full_batch_cox {
            if train.len() > FULL_BATCH_LIMIT {
                return Err(Error::Config(format!(
                    "full_batch_cox needs at most {FULL_BATCH_LIMIT} training records, got {}",
                    train.len()
                )));
            }
            1
        } else {
            if cfg.batch_size > train.len() {
                return Err(Error::Config(format!(
                    "batch_size {} exceeds the {} training records",
                    cfg.batch_size,
                    train.len()
                )));
            }
            train.len() / cfg.batch_size
        };
        Ok(Self {
            state,
            train,
            val,
            batches_per_epoch,
            epoch_order: None,
        })
    }

    pub fn step(&self) -> u64 {
        self.state.step
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.state
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.state
    }

    /// Record indices of the batch for 0-based `step`. Each epoch is a fresh
    /// permutation derived from the seed and the epoch number alone.
    fn batch_indices(&mut self, step: u64) -> Vec<usize> {
        let cfg = &self.state.config;
        if cfg.full_batch_cox {
            return (0..self.train.len()).collect();
        }
        let epoch = step / self.batches_per_epoch as u64;
        let pos = (step % self.batches_per_epoch as u64) as usize;
        if self.epoch_order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
            rng.set_stream(epoch);
            let mut order: Vec<usize> = (0..self.train.len()).collect();
            order.shuffle(&mut rng);
            self.epoch_order = Some((epoch, order));
        }
        let order = &self.epoch_order.as_ref().expect("just set").1;
        let b = cfg.batch_size;
        order[pos * b..(pos + 1) * b].to_vec()
    }

    /// One optimization step. On a non-finite loss or gradient nothing is
    /// updated and the error carries the step number.
    pub fn train_step(&mut self) -> Result<LossReport> {
        let step = self.state.step;
        let idx = self.batch_indices(step);
        let sub = self.train.subset(&idx);
        let batch = SurvivalBatch::new(sub.images, sub.table)?;
        let d = self.state.net.arch.latent_dim;
        let mut eps_rng = self.state.rng.clone();
        let eps: Vec<f64> = (0..batch.len() * d).map(|_| eps_rng.sample(StandardNormal)).collect();
        let eps = Tensor::matrix(batch.len(), d, eps)?;

        let mut g = Graph::new();
        let net = &self.state.net;
        let bound = net.store.bind(&mut g, true);
        let pass = forward_objective(&mut g, net, &bound, &batch, &eps, &self.state.config.weights())?;
        let report = pass.report;
        if ![report.total, report.recon_nll, report.kl, report.cox_nll]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Training(format!("non-finite loss at step {}", step + 1)));
        }
        if report.kl < -1e-12 {
            return Err(Error::Contract(format!("negative KL {} at step {}", report.kl, step + 1)));
        }
        g.backward(pass.total)?;
        let grads = bound.grads(&g);
        if let Some(id) = net
            .store
            .ids()
            .find(|id| grads[id.index()].as_ref().is_some_and(|t| !t.is_finite()))
        {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter {} at step {}",
                net.store.name(id),
                step + 1
            )));
        }
        let Checkpoint {
            net, opt_vae, opt_cox, ..
        } = &mut self.state;
        opt_vae.step(&mut net.store, &grads)?;
        opt_cox.step(&mut net.store, &grads)?;
        self.state.rng = eps_rng;
        self.state.step += 1;
        Ok(report)
    }

    /// Trains until `total_steps`, appending one history row per step.
    pub fn run(mut self, history: &mut Vec<HistoryRow>) -> std::result::Result<Checkpoint, TrainError> {
        let total = self.state.config.total_steps;
        while self.state.step < total {
            let report = match self.train_step() {
                Ok(r) => r,
                Err(Error::Training(_)) => {
                    return Err(TrainError::NonFinite {
                        step: self.state.step + 1,
                        last_good: Box::new(self.state),
                        history: std::mem::take(history),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            let step = self.state.step;
            let val_cindex = if step % self.state.config.eval_every == 0 || step == total {
                validation_cindex(&self.state.net, self.val)?
            } else {
                None
            };
            history.push(HistoryRow {
                step,
                report,
                val_cindex,
            });
        }
        Ok(self.state)
    }
}

fn validation_cindex(net: &CoxVaeNet, val: &Dataset) -> Result<Option<f64>> {
    let r = net.risk(&net.encode_mean(&val.images)?)?;
    match concordance_index(&val.table, &r) {
        Ok(c) => Ok(Some(c)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Trains a fresh model for `cfg.total_steps`.
pub fn train(cfg: &TrainConfig, train: &Dataset, val: &Dataset) -> std::result::Result<TrainOutcome, TrainError> {
    let trainer = Trainer::new(cfg, train, val)?;
    let mut history = Vec::new();
    let checkpoint = trainer.run(&mut history)?;
    Ok(TrainOutcome { checkpoint, history })
}

/// Continues from `ckpt` until `total_steps`. The returned history covers
/// only the new steps.
pub fn resume(
    mut ckpt: Checkpoint,
    total_steps: u64,
    train: &Dataset,
    val: &Dataset,
) -> std::result::Result<TrainOutcome, TrainError> {
    ckpt.config.total_steps = total_steps;
    let trainer = Trainer::from_checkpoint(ckpt, train, val)?;
    let mut history = Vec::new();
    let checkpoint = trainer.run(&mut history)?;
    Ok(TrainOutcome { checkpoint, history })
}

/// C-index and IBS of the Cox-head risk score `ψ·μ(x)` on `ds`, with the
/// Breslow baseline fitted on `baseline`. Sampling-free.
pub fn evaluate(net: &CoxVaeNet, baseline: &Dataset, ds: &Dataset) -> Result<EvalMetrics> {
    let r_base = net.risk(&net.encode_mean(&baseline.images)?)?;
    let r = net.risk(&net.encode_mean(&ds.images)?)?;
    let cindex = concordance_index(&ds.table, &r)?;
    let h0 = breslow_baseline(&baseline.table, &r_base)?;
    let g = censoring_km(&ds.table);
    let grid = default_ibs_grid(&ds.table, IBS_GRID_POINTS)?;
    let ibs = integrated_brier(&grid, &ds.table, &h0, &r, &g)?;

    if !h0.is_nondecreasing() || h0.before_first() != 0.0 {
        return Err(Error::Contract("Breslow baseline is not nondecreasing from 0".into()));
    }
    let km = crate::survstats::kaplan_meier(&ds.table);
    if !km.is_nonincreasing() || !g.is_nonincreasing() {
        return Err(Error::Contract("Kaplan–Meier estimate is not nonincreasing".into()));
    }
    if !(0.0..=1.0).contains(&cindex) || !(0.0..=1.0).contains(&ibs) {
        return Err(Error::Contract(format!(
            "metrics out of bounds: cindex {cindex}, ibs {ibs}"
        )));
    }
    Ok(EvalMetrics {
        cindex,
        ibs,
        n: ds.len(),
        n_events: ds.table.n_events(),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    train: TrainConfig,
    arch: Architecture,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_adam(out: &mut Vec<u8>, opt: &AdamState, net: &CoxVaeNet) {
    out.extend_from_slice(&opt.t.to_le_bytes());
    put_u32(out, 2 * opt.params.len() as u32);
    for (k, &id) in opt.params.iter().enumerate() {
        put_record(out, &format!("m.{}", net.store.name(id)), &opt.m[k]);
    }
    for (k, &id) in opt.params.iter().enumerate() {
        put_record(out, &format!("v.{}", net.store.name(id)), &opt.v[k]);
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        put_u32(&mut out, CKPT_VERSION);
        let header = serde_json::to_vec(&CheckpointHeader {
            train: self.config.clone(),
            arch: self.net.arch.clone(),
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        put_u32(&mut out, header.len() as u32);
        out.extend_from_slice(&header);

        put_u32(&mut out, self.net.store.len() as u32);
        for (name, t) in self.net.store.iter() {
            put_record(&mut out, name, t);
        }
        put_adam(&mut out, &self.opt_vae, &self.net);
        put_adam(&mut out, &self.opt_cox, &self.net);
        out.extend_from_slice(&self.step.to_le_bytes());

        let mut rng = Vec::with_capacity(56);
        rng.extend_from_slice(&self.rng.get_seed());
        rng.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        rng.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        put_u32(&mut out, rng.len() as u32);
        out.extend_from_slice(&rng);

        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != CKPT_MAGIC {
            return Err(Error::Format("not an SVCK checkpoint".into()));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::Format(format!(
                "incompatible checkpoint version {version} (this build reads version {CKPT_VERSION})"
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Format("checkpoint failed its checksum".into()));
        }
        r.bytes = body;

        let len = r.u32()? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        header.train.validate()?;
        if header.train.architecture(header.arch.input_dim) != header.arch {
            return Err(Error::Format("checkpoint architecture disagrees with its config".into()));
        }
        let mut net = CoxVaeNet::new(header.arch, 0)?;

        let count = r.u32()? as usize;
        if count != net.store.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} parameters, architecture needs {}",
                net.store.len()
            )));
        }
        for id in net.store.ids().collect::<Vec<_>>() {
            let (name, t) = r.record()?;
            if name != net.store.name(id) {
                return Err(Error::Format(format!(
                    "expected parameter {}, found {name}",
                    net.store.name(id)
                )));
            }
            if t.shape() != net.store.get(id).shape() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    net.store.get(id).shape()
                )));
            }
            *net.store.get_mut(id) = t;
        }

        let mut opt_vae = AdamState::new(&net.store, net.vae_params(), header.train.lr_vae);
        let mut opt_cox = AdamState::new(&net.store, net.cox_params(), header.train.lr_cox);
        for opt in [&mut opt_vae, &mut opt_cox] {
            opt.t = r.u64()?;
            let count = r.u32()? as usize;
            if count != 2 * opt.params.len() {
                return Err(Error::Format("optimizer state size mismatch".into()));
            }
            for (prefix, bufs) in [("m", &mut opt.m), ("v", &mut opt.v)] {
                for (k, &id) in opt.params.iter().enumerate() {
                    let (name, t) = r.record()?;
                    let expect = format!("{prefix}.{}", net.store.name(id));
                    if name != expect || t.shape() != bufs[k].shape() {
                        return Err(Error::Format(format!(
                            "optimizer record {name} {:?} does not match {expect} {:?}",
                            t.shape(),
                            bufs[k].shape()
                        )));
                    }
                    bufs[k] = t;
                }
            }
        }
        let step = r.u64()?;
        let rng_len = r.u32()? as usize;
        let rng_bytes = r.take(rng_len)?;
        if rng_len != 56 {
            return Err(Error::Format(format!("RNG state of {rng_len} bytes")));
        }
        let mut rng = ChaCha8Rng::from_seed(rng_bytes[..32].try_into().expect("32 bytes"));
        rng.set_stream(u64::from_le_bytes(rng_bytes[32..40].try_into().expect("8 bytes")));
        rng.set_word_pos(u128::from_le_bytes(rng_bytes[40..56].try_into().expect("16 bytes")));
        if r.pos != body.len() {
            return Err(Error::Format(format!("trailing bytes at offset {}", r.pos)));
        }
        Ok(Self {
            config: header.train,
            net,
            opt_vae,
            opt_cox,
            step,
            rng,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at offset {}", self.pos)))?;
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn record(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format(format!("parameter name at offset {} is not UTF-8", self.pos)))?;
        let rank = self.u32()? as usize;
        let dims = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = self.take(n * 8).map_err(|_| {
            Error::Format(format!("parameter {name} with shape {dims:?} is truncated"))
        })?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        Ok((name, Tensor::new(dims, data)?))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// `history.csv` text; `val_cindex` is empty on non-evaluation steps.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("step,total,recon,kl,cox,n_events,val_cindex\n");
    for row in rows {
        let r = &row.report;
        let _ = write!(
            out,
            "{},{},{},{},{},{},",
            row.step, r.total, r.recon_nll, r.kl, r.cox_nll, r.n_events_in_batch
        );
        if let Some(c) = row.val_cindex {
            let _ = write!(out, "{c}");
        }
        out.push('\n');
    }
    out
}

pub fn write_history(rows: &[HistoryRow], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, history_csv(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blob_dataset, split, SyntheticConfig};

    fn tiny_data(n: usize) -> (Dataset, Dataset) {
        let ds = generate_blob_dataset(&SyntheticConfig {
            n_samples: n,
            image_side: 8,
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        split(&ds, 0.25, 0).unwrap()
    }

    fn tiny_cfg(steps: u64) -> TrainConfig {
        TrainConfig {
            total_steps: steps,
            hidden_width: 16,
            latent_dim: 3,
            batch_size: 8,
            eval_every: 5,
            lr_vae: 1e-3,
            lr_cox: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn tau_one_leaves_psi_untouched() {
        let (tr, va) = tiny_data(80);
        let cfg = TrainConfig {
            tau: 1.0,
            ..tiny_cfg(10)
        };
        let init = CoxVaeNet::new(cfg.architecture(64), cfg.seed).unwrap();
        let out = train(&cfg, &tr, &va).unwrap();
        assert_eq!(out.checkpoint.net.cox_weights(), init.cox_weights());
        assert_ne!(out.checkpoint.net.store, init.store);
    }

    #[test]
    fn tau_zero_leaves_decoder_untouched() {
        let (tr, va) = tiny_data(80);
        let cfg = TrainConfig {
            tau: 0.0,
            ..tiny_cfg(10)
        };
        let init = CoxVaeNet::new(cfg.architecture(64), cfg.seed).unwrap();
        let out = train(&cfg, &tr, &va).unwrap();
        for id in init.decoder_params() {
            assert_eq!(out.checkpoint.net.store.get(id), init.store.get(id));
        }
        assert_ne!(out.checkpoint.net.cox_weights(), init.cox_weights());
    }

    #[test]
    fn training_is_deterministic_and_history_complete() {
        let (tr, va) = tiny_data(80);
        let cfg = tiny_cfg(12);
        let a = train(&cfg, &tr, &va).unwrap();
        let b = train(&cfg, &tr, &va).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.history.len(), 12);
        let steps: Vec<u64> = a.history.iter().map(|r| r.step).collect();
        assert_eq!(steps, (1..=12).collect::<Vec<_>>());
        assert!(a.history[4].val_cindex.is_some());
        assert!(a.history[5].val_cindex.is_none());
        assert!(a.history[11].val_cindex.is_some());
    }

    #[test]
    fn combined_report_identity() {
        let (tr, va) = tiny_data(80);
        let cfg = tiny_cfg(6);
        let out = train(&cfg, &tr, &va).unwrap();
        for row in &out.history {
            let r = row.report;
            if r.n_events_in_batch > 0 {
                let expect = cfg.tau * (r.recon_nll + cfg.beta * r.kl) + (1.0 - cfg.tau) * r.cox_nll;
                assert!((r.total - expect).abs() < 1e-9 * expect.abs());
            }
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (tr, va) = tiny_data(80);
        let full = train(&tiny_cfg(20), &tr, &va).unwrap();
        let head = train(&tiny_cfg(10), &tr, &va).unwrap();
        let bytes = head.checkpoint.to_bytes().unwrap();
        let restored = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(restored, head.checkpoint);
        let tail = resume(restored, 20, &tr, &va).unwrap();
        assert_eq!(tail.checkpoint.to_bytes().unwrap(), full.checkpoint.to_bytes().unwrap());
        assert_eq!(&full.history[10..], &tail.history[..]);
    }

    #[test]
    fn checkpoint_round_trip_bytes() {
        let (tr, va) = tiny_data(40);
        let out = train(&tiny_cfg(3), &tr, &va).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(CHECKPOINT_FILE);
        save_checkpoint(&out.checkpoint, &p).unwrap();
        let loaded = load_checkpoint(&p).unwrap();
        assert_eq!(loaded.to_bytes().unwrap(), fs::read(&p).unwrap());
    }

    #[test]
    fn checkpoint_version_and_tampering() {
        let (tr, va) = tiny_data(40);
        let out = train(&tiny_cfg(2), &tr, &va).unwrap();
        let bytes = out.checkpoint.to_bytes().unwrap();

        let mut v2 = bytes.clone();
        v2[4] = 2;
        let err = Checkpoint::from_bytes(&v2).unwrap_err();
        assert!(err.to_string().contains("incompatible"), "{err}");

        // Rewrite the first dimension of encoder.input.weight and re-seal.
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let first = 12 + hlen + 4;
        let name_len = u32::from_le_bytes(bytes[first..first + 4].try_into().unwrap()) as usize;
        let dim0 = first + 4 + name_len + 4;
        let mut tampered = bytes[..bytes.len() - 4].to_vec();
        tampered[dim0..dim0 + 4].copy_from_slice(&15u32.to_le_bytes());
        let crc = crc32fast::hash(&tampered);
        tampered.extend_from_slice(&crc.to_le_bytes());
        let err = Checkpoint::from_bytes(&tampered).unwrap_err().to_string();
        assert!(err.contains("encoder.input.weight"), "{err}");

        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x10;
        assert!(Checkpoint::from_bytes(&flipped).unwrap_err().to_string().contains("checksum"));
    }

    #[test]
    fn nan_aborts_with_last_good_checkpoint() {
        let (tr, va) = tiny_data(40);
        let cfg = TrainConfig {
            lr_vae: 1e300,
            ..tiny_cfg(20)
        };
        match train(&cfg, &tr, &va) {
            Err(TrainError::NonFinite {
                step,
                last_good,
                history,
            }) => {
                assert_eq!(last_good.step + 1, step);
                assert_eq!(history.len() as u64, last_good.step);
                assert!(last_good.net.store.iter().all(|(_, t)| t.is_finite()));
            }
            other => panic!("expected a non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn batch_size_larger_than_data_is_rejected() {
        let (tr, va) = tiny_data(40);
        let cfg = TrainConfig {
            batch_size: 100,
            ..tiny_cfg(2)
        };
        assert!(matches!(train(&cfg, &tr, &va), Err(TrainError::Setup(Error::Config(_)))));
        let full = TrainConfig {
            full_batch_cox: true,
            ..tiny_cfg(2)
        };
        let out = train(&full, &tr, &va).unwrap();
        assert_eq!(out.history[0].report.n_events_in_batch, tr.table.n_events());
    }

    #[test]
    fn evaluation_is_deterministic_and_bounded() {
        let (tr, va) = tiny_data(200);
        let net = CoxVaeNet::new(tiny_cfg(1).architecture(64), 3).unwrap();
        let a = evaluate(&net, &tr, &va).unwrap();
        let b = evaluate(&net, &tr, &va).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.cindex));
        assert!((0.0..=1.0).contains(&a.ibs));
        assert_eq!(a.n, va.len());
    }

    #[test]
    fn history_csv_format() {
        let rows = vec![
            HistoryRow {
                step: 1,
                report: LossReport {
                    total: 1.5,
                    recon_nll: 2.0,
                    kl: 0.25,
                    cox_nll: 0.5,
                    n_events_in_batch: 3,
                },
                val_cindex: None,
            },
            HistoryRow {
                step: 2,
                report: LossReport {
                    total: 1.0,
                    recon_nll: 1.0,
                    kl: 0.0,
                    cox_nll: 1.0,
                    n_events_in_batch: 0,
                },
                val_cindex: Some(0.625),
            },
        ];
        assert_eq!(
            history_csv(&rows),
            "step,total,recon,kl,cox,n_events,val_cindex\n1,1.5,2,0.25,0.5,3,\n2,1,1,0,1,0,0.625\n"
        );
    }
}
