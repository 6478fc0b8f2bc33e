//! Linear layers, residual MLP blocks, the encoder/decoder/Cox-head
//! assembly and the Adam optimizer.
//!
//! All trainable arrays live in a [`ParamStore`]; layers hold [`ParamId`]s
//! into it. A forward pass first binds the store onto a [`Graph`], which
//! yields one leaf per parameter in store order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.entries.push((name.into(), value));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every parameter on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| {
                if trainable {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameter-to-graph mapping produced by [`ParamStore::bind`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients for every parameter, `None` where backward never reached.
    pub fn grads(&self, g: &Graph) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|&v| g.grad(v)).collect()
    }
}

/// Uniform Glorot initialization in `±√(6/(fan_in+fan_out))`.
pub fn xavier_uniform<R: Rng>(rng: &mut R, fan_out: usize, fan_in: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_out * fan_in)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(vec![fan_out, fan_in], data).expect("shape matches")
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "layer {name} has zero width ({in_dim} -> {out_dim})"
            )));
        }
        let weight = store.add(format!("{name}.weight"), xavier_uniform(rng, out_dim, in_dim));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul_nt(x, bound.var(self.weight))?;
        match self.bias {
            Some(b) => g.add_bias(y, bound.var(b)),
            None => Ok(y),
        }
    }
}

/// `x + fc2(leaky(fc1(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub fc1: LinearLayer,
    pub fc2: LinearLayer,
}

impl ResidualBlock {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        width: usize,
        zero_init_second: bool,
    ) -> Result<Self> {
        let fc1 = LinearLayer::init(store, rng, &format!("{name}.fc1"), width, width, true)?;
        let fc2 = LinearLayer::init(store, rng, &format!("{name}.fc2"), width, width, true)?;
        if zero_init_second {
            store.get_mut(fc2.weight).data_mut().fill(0.0);
        }
        Ok(Self { fc1, fc2 })
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, bound, x)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE)?;
        let y = self.fc2.forward(g, bound, h)?;
        g.add(x, y)
    }
}

/// Shape of a CoxVAE network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub latent_dim: usize,
    pub n_blocks: usize,
    #[serde(default)]
    pub zero_init_residual: bool,
}

impl Architecture {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_width: 128,
            latent_dim: 8,
            n_blocks: 4,
            zero_init_residual: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_width", self.hidden_width),
            ("latent_dim", self.latent_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderNet {
    pub input: LinearLayer,
    pub blocks: Vec<ResidualBlock>,
    pub mu_head: LinearLayer,
    pub logvar_head: LinearLayer,
}

impl EncoderNet {
    /// Returns `(mu, logvar)`, each `[B×d]`; `logvar` is clamped.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<(Var, Var)> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.input.in_dim {
            return Err(Error::Dimension(format!(
                "encoder expects [B×{}] pixels, got {:?}",
                self.input.in_dim, shape
            )));
        }
        let mut h = self.input.forward(g, bound, x)?;
        h = g.leaky_relu(h, LEAKY_SLOPE)?;
        for block in &self.blocks {
            h = block.forward(g, bound, h)?;
        }
        let mu = self.mu_head.forward(g, bound, h)?;
        let raw = self.logvar_head.forward(g, bound, h)?;
        let logvar = g.clamp(raw, LOGVAR_MIN, LOGVAR_MAX)?;
        Ok((mu, logvar))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderNet {
    pub input: LinearLayer,
    pub blocks: Vec<ResidualBlock>,
    pub output: LinearLayer,
}

impl DecoderNet {
    /// Per-pixel logits `[B×P]`.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, z: Var) -> Result<Var> {
        let shape = g.shape(z);
        if shape.len() != 2 || shape[1] != self.input.in_dim {
            return Err(Error::Dimension(format!(
                "decoder expects [B×{}] latents, got {:?}",
                self.input.in_dim, shape
            )));
        }
        let mut h = self.input.forward(g, bound, z)?;
        h = g.leaky_relu(h, LEAKY_SLOPE)?;
        for block in &self.blocks {
            h = block.forward(g, bound, h)?;
        }
        self.output.forward(g, bound, h)
    }
}

/// Encoder φ, decoder θ and bias-free linear Cox head ψ over one store.
#[derive(Clone, Debug, PartialEq)]
pub struct CoxVaeNet {
    pub arch: Architecture,
    pub store: ParamStore,
    pub encoder: EncoderNet,
    pub decoder: DecoderNet,
    pub cox_head: LinearLayer,
}

impl CoxVaeNet {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (w, d) = (arch.hidden_width, arch.latent_dim);
        let zero = arch.zero_init_residual;

        let input = LinearLayer::init(&mut store, &mut rng, "encoder.input", arch.input_dim, w, true)?;
        let blocks = (0..arch.n_blocks)
            .map(|i| ResidualBlock::init(&mut store, &mut rng, &format!("encoder.block{i}"), w, zero))
            .collect::<Result<_>>()?;
        let mu_head = LinearLayer::init(&mut store, &mut rng, "encoder.mu", w, d, true)?;
        let logvar_head = LinearLayer::init(&mut store, &mut rng, "encoder.logvar", w, d, true)?;
        let encoder = EncoderNet {
            input,
            blocks,
            mu_head,
            logvar_head,
        };

        let input = LinearLayer::init(&mut store, &mut rng, "decoder.input", d, w, true)?;
        let blocks = (0..arch.n_blocks)
            .map(|i| ResidualBlock::init(&mut store, &mut rng, &format!("decoder.block{i}"), w, zero))
            .collect::<Result<_>>()?;
        let output = LinearLayer::init(&mut store, &mut rng, "decoder.output", w, arch.input_dim, true)?;
        let decoder = DecoderNet {
            input,
            blocks,
            output,
        };

        let cox_head = LinearLayer::init(&mut store, &mut rng, "cox.psi", d, 1, false)?;

        Ok(Self {
            arch,
            store,
            encoder,
            decoder,
            cox_head,
        })
    }

    /// Encoder and decoder parameters (φ, θ).
    pub fn vae_params(&self) -> Vec<ParamId> {
        self.store.ids().filter(|&id| id != self.cox_head.weight).collect()
    }

    /// Cox head parameters (ψ).
    pub fn cox_params(&self) -> Vec<ParamId> {
        vec![self.cox_head.weight]
    }

    pub fn decoder_params(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| self.store.name(id).starts_with("decoder."))
            .collect()
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| self.store.name(id).starts_with("encoder."))
            .collect()
    }

    /// Cox weights ψ as a plain vector of length d.
    pub fn cox_weights(&self) -> &[f64] {
        self.store.get(self.cox_head.weight).data()
    }

    /// Posterior means for a batch of images, without gradient tracking.
    pub fn encode_mean(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let (mu, _) = self.encoder.forward(&mut g, &bound, xv)?;
        Ok(g.value(mu).clone())
    }

    /// Decoder logits for a batch of latent vectors, without gradient tracking.
    pub fn decode_logits(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.store.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let logits = self.decoder.forward(&mut g, &bound, zv)?;
        Ok(g.value(logits).clone())
    }

    /// Linear log-hazard `z·ψ` for each row of `z`.
    pub fn risk(&self, z: &Tensor) -> Result<Vec<f64>> {
        let d = self.arch.latent_dim;
        if z.rank() != 2 || z.shape()[1] != d {
            return Err(Error::Dimension(format!(
                "risk expects [n×{d}] latents, got {:?}",
                z.shape()
            )));
        }
        let psi = self.cox_weights();
        Ok(z
            .data()
            .chunks_exact(d)
            .map(|row| row.iter().zip(psi).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Glorot-initialized chain of biased linear layers `widths[i] -> widths[i+1]`.
pub fn init_params(widths: &[usize], seed: u64) -> Result<(ParamStore, Vec<LinearLayer>)> {
    if widths.len() < 2 {
        return Err(Error::Config("need at least an input and an output width".into()));
    }
    if let Some(i) = widths.iter().position(|&w| w == 0) {
        return Err(Error::Config(format!("width {i} is zero")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| LinearLayer::init(&mut store, &mut rng, &format!("layer{i}"), w[0], w[1], true))
        .collect::<Result<_>>()?;
    Ok((store, layers))
}

/// Adam with bias correction over a fixed subset of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub params: Vec<ParamId>,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, params: Vec<ParamId>, lr: f64) -> Self {
        let m: Vec<Tensor> = params.iter().map(|&id| Tensor::zeros(store.get(id).shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            params,
            v: m.clone(),
            m,
        }
    }

    /// One update. `grads` is indexed by [`ParamId`]; a missing entry counts
    /// as a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        for &id in &self.params {
            if let Some(g) = &grads[id.0] {
                if g.shape() != store.get(id).shape() {
                    return Err(Error::Dimension(format!(
                        "gradient for {} has shape {:?}, parameter has {:?}",
                        store.name(id),
                        g.shape(),
                        store.get(id).shape()
                    )));
                }
                if !g.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite gradient for parameter {}",
                        store.name(id)
                    )));
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, &id) in self.params.iter().enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let w = store.get_mut(id).data_mut();
            match &grads[id.0] {
                Some(g) => {
                    for (((wi, mi), vi), &gi) in w.iter_mut().zip(m).zip(v).zip(g.data()) {
                        *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                        *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                        *wi -= self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                    }
                }
                None => {
                    for ((wi, mi), vi) in w.iter_mut().zip(m).zip(v) {
                        *mi *= self.beta1;
                        *vi *= self.beta2;
                        *wi -= self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
