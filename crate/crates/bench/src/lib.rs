//! Fixtures shared by the criterion benchmarks in `benches/`.

use coxvae_core::data::generate_blob_dataset;
use coxvae_core::{Dataset, SurvivalTable, SyntheticConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random survival table with `levels` distinct times and roughly `censor_p` censored.
pub fn random_table(n: usize, censor_p: f64, levels: u32, seed: u64) -> SurvivalTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let time = (0..n).map(|_| f64::from(rng.gen_range(1..=levels))).collect();
    let event = (0..n).map(|i| i == 0 || !rng.gen_bool(censor_p)).collect();
    SurvivalTable::new(time, event).expect("valid table")
}

pub fn random_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Small blob dataset at the default image side.
pub fn blob_dataset(n_samples: usize) -> Dataset {
    generate_blob_dataset(&SyntheticConfig {
        n_samples,
        ..Default::default()
    })
    .expect("default config generates")
}
