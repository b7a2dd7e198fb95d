#![allow(dead_code)]

use cryforge::{EpsilonNet, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn toy_config(layers: usize, channels: usize, len: usize) -> ModelConfig {
    ModelConfig {
        residual_layers: layers,
        residual_channels: channels,
        skip_channels: channels,
        audio_length: len,
        ..ModelConfig::default()
    }
}

/// Gives the zero-initialized output layer random weights so every
/// parameter influences the prediction.
pub fn wake_head(net: &mut EpsilonNet, seed: u64) {
    let mut r = rng(seed);
    for name in ["out_conv2.weight", "out_conv2.bias"] {
        let p = net.parameter_mut(name).unwrap();
        for v in p.tensor.values_mut() {
            *v = r.random_range(-0.5..0.5);
        }
    }
}

pub fn normal_vec(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.sample(rand_distr::StandardNormal)).collect()
}

/// `sin` then `cos` of the step embedding at `t = 1`, from the checked-in
/// high-precision table.
pub fn embedding_reference() -> Vec<f64> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/step_embedding_t1.txt");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.trim().parse().unwrap())
        .collect()
}
