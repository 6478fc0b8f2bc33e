//! Cox-regularized variational autoencoder for survival-oriented image
//! embeddings.
//!
//! The crate bundles everything the model needs and nothing more: a small
//! define-by-run autodiff engine ([`autodiff`]), residual-MLP encoder and
//! decoder with Adam ([`network`]), the ELBO / Cox / combined objectives
//! ([`model`]), classical survival estimators and metrics ([`survstats`]),
//! synthetic survival-image data and file formats ([`data`]), the
//! dual-optimizer training loop with checkpoints ([`training`]) and
//! latent-space analysis ([`analysis`]).

pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod model;
pub mod network;
pub mod survstats;
pub mod training;

pub use analysis::{Embedding, PcaResult};
pub use autodiff::{Graph, Tensor, Var};
pub use data::{Dataset, SyntheticConfig};
pub use error::{Error, Result};
pub use model::{hazard_ratio, LossReport, LossWeights};
pub use network::{Architecture, CoxVaeNet};
pub use survstats::{StepFunction, SurvivalTable};
pub use training::{Checkpoint, HistoryRow, TrainConfig};
