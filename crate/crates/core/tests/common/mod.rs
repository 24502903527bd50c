#![allow(dead_code)]

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use whstamp_core::container::{ParameterSet, Tensor};
use whstamp_core::WatermarkKey;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_key(rng: &mut impl RngCore) -> WatermarkKey {
    loop {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        if let Ok(k) = WatermarkKey::from_bytes(&bytes) {
            return k;
        }
    }
}

pub fn random_bytes(rng: &mut impl RngCore, len: usize) -> Vec<u8> {
    let mut v = vec![0u8; len];
    rng.fill_bytes(&mut v);
    v
}

fn shape_for(len: usize, rng: &mut impl Rng) -> Vec<usize> {
    let candidates: Vec<usize> = [3usize, 4, 8, 9, 16, 27, 64]
        .into_iter()
        .filter(|d| len.is_multiple_of(*d) && len / d > 1)
        .collect();
    match rng.gen_range(0..3) {
        0 if !candidates.is_empty() => {
            let d = candidates[rng.gen_range(0..candidates.len())];
            vec![len / d, d]
        }
        1 if len.is_multiple_of(36) => vec![len / 36, 4, 3, 3],
        _ => vec![len],
    }
}

/// Synthetic model with `n` parameters spread over a few tensors of mixed
/// shapes, values ~ N(0, sigma^2).
pub fn synthetic_model(n: usize, sigma: f64, rng: &mut impl Rng) -> ParameterSet {
    let normal = Normal::new(0.0, sigma).unwrap();
    let tensors = rng.gen_range(1..=6).min(n);
    let mut cuts: Vec<usize> = (0..tensors - 1).map(|_| rng.gen_range(1..n)).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(n);
    let mut set = ParameterSet::new();
    for (i, w) in bounds.windows(2).enumerate() {
        let len = w[1] - w[0];
        let values: Vec<f64> = (0..len).map(|_| normal.sample(rng)).collect();
        let name = if i % 2 == 0 {
            format!("layers.{i}.weight")
        } else {
            format!("layers.{i}.bias")
        };
        set.insert(name, Tensor::from_f64(shape_for(len, rng), values).unwrap());
    }
    set
}
