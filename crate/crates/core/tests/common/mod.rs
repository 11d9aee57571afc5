#![allow(dead_code)]

use std::path::PathBuf;

use cerebra_core::codec::{encode_sample, RngSeed, SpikeTrain};
use cerebra_core::compiler::NetworkDescription;
use cerebra_core::fixed::ONE_RAW;
use cerebra_core::neuron::{DecaySelector, ResetMode};
use cerebra_core::oracle::Raster;
use rand::Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn digits_net() -> PathBuf {
    fixtures().join("mnist14_196_32_10.json")
}

pub fn digits_dir() -> PathBuf {
    fixtures().join("digits")
}

/// A representable Q16.16 value drawn from [lo, hi] raw units.
fn raw_f64<R: Rng>(rng: &mut R, lo: i32, hi: i32) -> f64 {
    rng.gen_range(lo..=hi) as f64 / ONE_RAW as f64
}

/// Random feedforward network: 1 to 3 non-input layers, at most
/// `max_neurons` physical neurons, a quarter of the weights zero. Layers are
/// capped at 64 neurons for small budgets and half the budget otherwise.
pub fn random_network<R: Rng>(rng: &mut R, max_neurons: usize, decays: &[DecaySelector]) -> NetworkDescription {
    let stages = rng.gen_range(1..=3usize);
    let mut layers = vec![rng.gen_range(1..=48usize)];
    let mut remaining = max_neurons;
    let cap = if max_neurons > 128 { max_neurons / 2 } else { 64 };
    for s in 0..stages {
        let max = (remaining - (stages - s - 1)).min(cap);
        let n = rng.gen_range(1..=max);
        remaining -= n;
        layers.push(n);
    }
    let weights = (0..stages)
        .map(|l| {
            (0..layers[l + 1])
                .map(|_| {
                    (0..layers[l])
                        .map(|_| if rng.gen_bool(0.25) { 0.0 } else { raw_f64(rng, -3 * ONE_RAW / 2, 2 * ONE_RAW) })
                        .collect()
                })
                .collect()
        })
        .collect();
    NetworkDescription {
        weights,
        threshold: (0..stages).map(|_| raw_f64(rng, 1, 2 * ONE_RAW)).collect(),
        decay: (0..stages).map(|_| decays[rng.gen_range(0..decays.len())]).collect(),
        reset: (0..stages).map(|_| ResetMode::ALL[rng.gen_range(0..3)]).collect(),
        layers,
    }
}

/// Rate-coded stimulus with a random rate per input.
pub fn random_stimulus<R: Rng>(rng: &mut R, inputs: usize, steps: usize) -> Vec<SpikeTrain> {
    let rates: Vec<f64> = (0..inputs).map(|_| rng.gen_range(0.0..=1.0)).collect();
    encode_sample(&rates, steps, RngSeed(rng.gen()), 0).expect("rates in range")
}

/// First (step, layer, neuron) where two rasters differ.
pub fn first_divergence(a: &Raster, b: &Raster) -> Option<(usize, usize, usize)> {
    if a.len() != b.len() {
        return Some((a.len().min(b.len()), 0, 0));
    }
    for (t, (x, y)) in a.iter().zip(b).enumerate() {
        for (l, (p, q)) in x.iter().zip(y).enumerate() {
            if let Some(n) = p.iter().zip(q).position(|(u, v)| u != v) {
                return Some((t, l, n));
            }
        }
    }
    None
}
