#![allow(dead_code)]

use coxvae_core::SurvivalTable;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Random survival records. Times are drawn from `1..=levels` so ties are
/// common when `levels` is small.
pub fn random_table(rng: &mut ChaCha8Rng, n: usize, censor_p: f64, levels: u32) -> SurvivalTable {
    let time = (0..n).map(|_| rng.gen_range(1..=levels) as f64).collect();
    let event = (0..n).map(|_| rng.gen::<f64>() >= censor_p).collect();
    SurvivalTable::new(time, event).unwrap()
}

pub fn random_normal(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Harrell's C over unordered pairs: the member with the strictly earlier
/// time must have an event for the pair to count.
pub fn cindex_oracle(time: &[f64], event: &[bool], r: &[f64]) -> Option<f64> {
    let mut comparable = 0.0;
    let mut concordant = 0.0;
    for a in 0..time.len() {
        for b in (a + 1)..time.len() {
            let (early, late) = match time[a].partial_cmp(&time[b]).unwrap() {
                std::cmp::Ordering::Less => (a, b),
                std::cmp::Ordering::Greater => (b, a),
                std::cmp::Ordering::Equal => continue,
            };
            if !event[early] {
                continue;
            }
            comparable += 1.0;
            if r[early] > r[late] {
                concordant += 1.0;
            } else if r[early] == r[late] {
                concordant += 0.5;
            }
        }
    }
    (comparable > 0.0).then(|| concordant / comparable)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
