//! CoxVAE objective: β-weighted ELBO, Cox negative partial log-likelihood
//! and their τ-mixture, plus the reparameterization trick and hazard-ratio
//! interpretation of the linear Cox head.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::network::{Bound, CoxVaeNet, LinearLayer};
use crate::survstats::SurvivalTable;

/// Encoder output: posterior means and log-variances, both `[B×d]`.
#[derive(Clone, Copy, Debug)]
pub struct LatentGaussian {
    pub mu: Var,
    pub logvar: Var,
}

/// Images with their survival labels.
#[derive(Clone, Debug)]
pub struct SurvivalBatch {
    pub x: Tensor,
    pub table: SurvivalTable,
}

impl SurvivalBatch {
    pub fn new(x: Tensor, table: SurvivalTable) -> Result<Self> {
        if x.rank() != 2 || x.shape()[0] != table.len() {
            return Err(Error::Dimension(format!(
                "batch images {:?} vs {} survival records",
                x.shape(),
                table.len()
            )));
        }
        Ok(Self { x, table })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Scalars from one evaluation of the combined objective. `recon_nll` and
/// `kl` are per-sample means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub recon_nll: f64,
    pub kl: f64,
    pub cox_nll: f64,
    pub n_events_in_batch: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Likelihood {
    /// Per-pixel Bernoulli on sigmoid(logits); images in [0,1].
    #[default]
    Bernoulli,
    /// Unit-variance Gaussian with the decoder output as mean.
    Gaussian,
}

/// `z = μ + exp(logvar/2) ⊙ ε`; `eps` is a constant.
pub fn reparameterize(g: &mut Graph, lg: LatentGaussian, eps: &Tensor) -> Result<Var> {
    if eps.shape() != g.shape(lg.mu) {
        return Err(Error::Dimension(format!(
            "eps shape {:?} does not match latent shape {:?}",
            eps.shape(),
            g.shape(lg.mu)
        )));
    }
    let e = g.constant(eps.clone());
    let half = g.scale(lg.logvar, 0.5)?;
    let sigma = g.exp(half)?;
    let noise = g.mul(sigma, e)?;
    g.add(lg.mu, noise)
}

/// Batch mean of `½ Σ_d (μ² + σ² − 1 − log σ²)`.
pub fn kl_divergence(g: &mut Graph, lg: LatentGaussian) -> Result<Var> {
    let b = g.shape(lg.mu)[0] as f64;
    let mu2 = g.mul(lg.mu, lg.mu)?;
    let var = g.exp(lg.logvar)?;
    let s = g.add(mu2, var)?;
    let s = g.sub(s, lg.logvar)?;
    let one = g.constant(Tensor::scalar(1.0));
    let s = g.sub(s, one)?;
    let total = g.sum(s)?;
    g.scale(total, 0.5 / b)
}

/// Reconstruction negative log-likelihood summed over pixels, averaged over
/// the batch. The Bernoulli form is `softplus(l) − x·l`.
pub fn recon_nll(g: &mut Graph, logits: Var, x: &Tensor, likelihood: Likelihood) -> Result<Var> {
    if g.shape(logits) != x.shape() {
        return Err(Error::Dimension(format!(
            "logits {:?} vs images {:?}",
            g.shape(logits),
            x.shape()
        )));
    }
    let b = x.shape()[0] as f64;
    let xv = g.constant(x.clone());
    let per_pixel = match likelihood {
        Likelihood::Bernoulli => {
            if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain(format!("pixel value {v} outside [0, 1]")));
            }
            let sp = g.softplus(logits)?;
            let xl = g.mul(xv, logits)?;
            g.sub(sp, xl)?
        }
        Likelihood::Gaussian => {
            let d = g.sub(xv, logits)?;
            let d2 = g.mul(d, d)?;
            g.scale(d2, 0.5)?
        }
    };
    let total = g.sum(per_pixel)?;
    g.scale(total, 1.0 / b)
}

/// `recon_nll + β·kl`.
pub fn elbo_loss(
    g: &mut Graph,
    lg: LatentGaussian,
    logits: Var,
    x: &Tensor,
    beta: f64,
    likelihood: Likelihood,
) -> Result<Var> {
    check_beta(beta)?;
    let recon = recon_nll(g, logits, x, likelihood)?;
    let kl = kl_divergence(g, lg)?;
    let weighted = g.scale(kl, beta)?;
    g.add(recon, weighted)
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be a finite value >= 0, got {beta}")));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
    }
    Ok(())
}

/// Log-hazard `r = z·ψᵀ`, one scalar per row of `z`.
pub fn cox_head(g: &mut Graph, bound: &Bound, psi: &LinearLayer, z: Var) -> Result<Var> {
    if psi.out_dim != 1 || psi.bias.is_some() {
        return Err(Error::Contract("Cox head must be a bias-free d -> 1 layer".into()));
    }
    let shape = g.shape(z);
    if shape.len() != 2 || shape[1] != psi.in_dim {
        return Err(Error::Dimension(format!(
            "Cox head expects [B×{}] latents, got {shape:?}",
            psi.in_dim
        )));
    }
    let b = shape[0];
    let r = psi.forward(g, bound, z)?;
    g.reshape(r, &[b])
}

/// Value and gradient of the Cox negative partial log-likelihood with
/// Breslow ties:
///
/// `L = −(1/D) Σᵢ δᵢ (rᵢ − log Σ_{j: tⱼ ≥ tᵢ} exp rⱼ)`.
///
/// Runs in `O(n log n)`: one descending sweep builds the risk-set
/// log-sum-exps, one ascending sweep accumulates `Σ_k exp(−LSE_k)` in log
/// space for the gradient. Returns `None` when there are no events.
pub fn cox_nll_with_grad(r: &[f64], table: &SurvivalTable) -> Result<Option<(f64, Vec<f64>)>> {
    let n = table.len();
    if r.len() != n {
        return Err(Error::Dimension(format!("{} log-hazards for {n} records", r.len())));
    }
    let (time, event) = (table.time(), table.event());
    let n_events = table.n_events();
    if n_events == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));

    // Tie groups in descending time; each gets the LSE over its full risk set.
    let mut groups: Vec<(usize, usize, f64)> = Vec::new(); // (start, end, lse)
    let mut running = f64::NEG_INFINITY;
    let mut i = 0;
    while i < n {
        let t = time[order[i]];
        let mut j = i;
        while j < n && time[order[j]] == t {
            running = log_add(running, r[order[j]]);
            j += 1;
        }
        groups.push((i, j, running));
        i = j;
    }

    let inv_d = 1.0 / n_events as f64;
    let mut loss = 0.0;
    for &(s, e, lse) in &groups {
        for &k in &order[s..e] {
            if event[k] {
                loss += r[k] - lse;
            }
        }
    }
    loss *= -inv_d;

    // ∂L/∂r_j = −(1/D)[δ_j − exp(r_j) Σ_{events k: t_k ≤ t_j} exp(−LSE_k)]
    let mut grad = vec![0.0; n];
    let mut acc = f64::NEG_INFINITY; // log Σ exp(−LSE_k) over events so far
    for &(s, e, lse) in groups.iter().rev() {
        let d = order[s..e].iter().filter(|&&k| event[k]).count();
        if d > 0 {
            acc = log_add(acc, (d as f64).ln() - lse);
        }
        for &k in &order[s..e] {
            let delta = if event[k] { 1.0 } else { 0.0 };
            let expected = if acc == f64::NEG_INFINITY { 0.0 } else { (r[k] + acc).exp() };
            grad[k] = -inv_d * (delta - expected);
        }
    }
    Ok(Some((loss, grad)))
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// The Cox term of one batch. `loss` is `None` for an all-censored batch,
/// in which case the term must be left out of the objective.
#[derive(Clone, Copy, Debug)]
pub struct CoxTerm {
    pub loss: Option<Var>,
    pub n_events: usize,
}

impl CoxTerm {
    pub fn value(&self, g: &Graph) -> f64 {
        self.loss.map_or(0.0, |v| g.value(v).data()[0])
    }
}

/// Records the Cox negative partial log-likelihood of `r` [B] on `g`.
pub fn cox_partial_nll(g: &mut Graph, r: Var, table: &SurvivalTable) -> Result<CoxTerm> {
    if g.shape(r) != [table.len()] {
        return Err(Error::Dimension(format!(
            "log-hazards {:?} for {} records",
            g.shape(r),
            table.len()
        )));
    }
    let n_events = table.n_events();
    let Some((value, grad)) = cox_nll_with_grad(g.value(r).data(), table)? else {
        return Ok(CoxTerm { loss: None, n_events });
    };
    let loss = g.custom(&[r], Tensor::scalar(value), move |up| {
        vec![grad.iter().map(|d| d * up[0]).collect()]
    });
    Ok(CoxTerm {
        loss: Some(loss),
        n_events,
    })
}

/// `τ·elbo + (1−τ)·cox`. Terms with zero weight are not recorded, so they
/// contribute no gradient at all; a missing Cox term is skipped.
pub fn combined_loss(g: &mut Graph, elbo: Var, cox: Option<Var>, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let elbo_part = (tau != 0.0).then_some(elbo);
    let cox_part = cox.filter(|_| tau != 1.0);
    match (elbo_part, cox_part) {
        (Some(e), Some(c)) => {
            let a = g.scale(e, tau)?;
            let b = g.scale(c, 1.0 - tau)?;
            g.add(a, b)
        }
        (Some(e), None) => g.scale(e, tau),
        (None, Some(c)) => g.scale(c, 1.0 - tau),
        (None, None) => Ok(g.constant(Tensor::scalar(0.0))),
    }
}

/// Weights of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub tau: f64,
    pub beta: f64,
    pub likelihood: Likelihood,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            tau: 0.2,
            beta: 1.0,
            likelihood: Likelihood::Bernoulli,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        check_beta(self.beta)
    }
}

/// Handles into a recorded forward pass of the full objective.
#[derive(Clone, Copy, Debug)]
pub struct ForwardPass {
    pub total: Var,
    pub latent: LatentGaussian,
    pub z: Var,
    pub logits: Var,
    pub risk: Var,
    pub report: LossReport,
}

/// Encoder → reparameterize → decoder and Cox head → combined objective.
pub fn forward_objective(
    g: &mut Graph,
    net: &CoxVaeNet,
    bound: &Bound,
    batch: &SurvivalBatch,
    eps: &Tensor,
    weights: &LossWeights,
) -> Result<ForwardPass> {
    weights.validate()?;
    let x = g.constant(batch.x.clone());
    let (mu, logvar) = net.encoder.forward(g, bound, x)?;
    let latent = LatentGaussian { mu, logvar };
    let z = reparameterize(g, latent, eps)?;
    let logits = net.decoder.forward(g, bound, z)?;
    let recon = recon_nll(g, logits, &batch.x, weights.likelihood)?;
    let kl = kl_divergence(g, latent)?;
    let bkl = g.scale(kl, weights.beta)?;
    let elbo = g.add(recon, bkl)?;
    let risk = cox_head(g, bound, &net.cox_head, z)?;
    let cox = cox_partial_nll(g, risk, &batch.table)?;
    let total = combined_loss(g, elbo, cox.loss, weights.tau)?;
    let report = LossReport {
        total: g.value(total).data()[0],
        recon_nll: g.value(recon).data()[0],
        kl: g.value(kl).data()[0],
        cox_nll: cox.value(g),
        n_events_in_batch: cox.n_events,
    };
    Ok(ForwardPass {
        total,
        latent,
        z,
        logits,
        risk,
        report,
    })
}

/// Multiplicative hazard change per unit of a latent dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazardRatio {
    pub ratio: f64,
    pub percent_change: f64,
}

/// `(exp w, 100·(exp w − 1))`.
pub fn hazard_ratio(weight: f64) -> HazardRatio {
    let ratio = weight.exp();
    HazardRatio {
        ratio,
        percent_change: 100.0 * (ratio - 1.0),
    }
}

/// Plain-slice Cox loss for callers without a graph.
pub fn cox_nll_value(r: &[f64], table: &SurvivalTable) -> Result<Option<f64>> {
    Ok(cox_nll_with_grad(r, table)?.map(|(v, _)| v))
}
