//! Reference models without any cycle structure.
//!
//! Both evaluate the network layer by layer with the fabric's timing: inputs
//! active at step t are integrated by the first layer at step t, and a neuron
//! of layer l that fires at step t is integrated by layer l + 1 at step t + 1.

use crate::compiler::{NetworkDescription, QuantizedNetwork};
use crate::neuron::{NeuronState, ResetMode};

/// Fired flags indexed `[step][layer][neuron]`, where layer 0 is the first
/// non-input layer.
pub type Raster = Vec<Vec<Vec<bool>>>;

/// Spikes per output neuron over the whole window.
pub fn output_counts(raster: &Raster) -> Vec<u32> {
    let Some(first) = raster.first() else { return Vec::new() };
    let last = first.len() - 1;
    let mut counts = vec![0u32; first[last].len()];
    for step in raster {
        for (c, &f) in counts.iter_mut().zip(&step[last]) {
            *c += u32::from(f);
        }
    }
    counts
}

/// Bit-exact fixed-point model: same saturation, shifts and reset as a neuron core.
pub fn behavioral_run(net: &QuantizedNetwork, stimulus: &[Vec<usize>]) -> Raster {
    let stages = net.layers.len() - 1;
    let mut states: Vec<Vec<NeuronState>> = (1..=stages).map(|l| vec![NeuronState::default(); net.layers[l]]).collect();
    let mut prev: Vec<Vec<bool>> = (1..=stages).map(|l| vec![false; net.layers[l]]).collect();
    let mut raster = Vec::with_capacity(stimulus.len());
    for active in stimulus {
        for l in 0..stages {
            let w = &net.weights[l];
            let sources: Vec<usize> = if l == 0 {
                active.clone()
            } else {
                prev[l - 1].iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect()
            };
            for (o, state) in states[l].iter_mut().enumerate() {
                for &i in &sources {
                    state.accumulate(w[o][i]);
                }
            }
        }
        let fired: Vec<Vec<bool>> = states
            .iter_mut()
            .zip(&net.configs)
            .map(|(layer, cfg)| layer.iter_mut().map(|s| s.step(cfg)).collect())
            .collect();
        prev = fired.clone();
        raster.push(fired);
    }
    raster
}

/// Real-valued LIF reference: `v <- beta * v + I`, fire on `v >= threshold`.
pub fn float_run(net: &NetworkDescription, stimulus: &[Vec<usize>]) -> Raster {
    let stages = net.layers.len() - 1;
    let mut v: Vec<Vec<f64>> = (1..=stages).map(|l| vec![0.0; net.layers[l]]).collect();
    let mut prev: Vec<Vec<bool>> = (1..=stages).map(|l| vec![false; net.layers[l]]).collect();
    let mut raster = Vec::with_capacity(stimulus.len());
    for active in stimulus {
        let mut fired = Vec::with_capacity(stages);
        for l in 0..stages {
            let w = &net.weights[l];
            let sources: Vec<usize> = if l == 0 {
                active.clone()
            } else {
                prev[l - 1].iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect()
            };
            let (beta, theta, reset) = (net.decay[l].retained(), net.threshold[l], net.reset[l]);
            let layer: Vec<bool> = v[l]
                .iter_mut()
                .enumerate()
                .map(|(o, m)| {
                    let input: f64 = sources.iter().map(|&i| w[o][i]).sum();
                    *m = beta * *m + input;
                    let f = *m >= theta;
                    if f {
                        match reset {
                            ResetMode::Hold => {}
                            ResetMode::Zero => *m = 0.0,
                            ResetMode::Subtract => *m -= theta,
                        }
                    }
                    f
                })
                .collect();
            fired.push(layer);
        }
        prev = fired.clone();
        raster.push(fired);
    }
    raster
}

/// Upper bound on any accumulator or membrane magnitude (raw units) reached
/// in a run, whatever order the weights arrive in. Below 2^31 nothing saturates,
/// so the fixed-point result does not depend on delivery order.
pub fn saturation_bound(net: &QuantizedNetwork, stimulus: &[Vec<usize>]) -> i64 {
    let stages = net.layers.len() - 1;
    let mut bound = 0i64;
    let mut states: Vec<Vec<NeuronState>> = (1..=stages).map(|l| vec![NeuronState::default(); net.layers[l]]).collect();
    let mut prev: Vec<Vec<bool>> = (1..=stages).map(|l| vec![false; net.layers[l]]).collect();
    for active in stimulus {
        let mut fired = Vec::with_capacity(stages);
        for l in 0..stages {
            let sources: Vec<usize> = if l == 0 {
                active.clone()
            } else {
                prev[l - 1].iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect()
            };
            let cfg = net.configs[l];
            let mut layer = Vec::with_capacity(states[l].len());
            for (o, state) in states[l].iter_mut().enumerate() {
                let reach: i64 = sources.iter().map(|&i| (net.weights[l][o][i].raw() as i64).abs()).sum();
                let decayed = crate::neuron::decay(state.membrane, cfg.decay);
                bound = bound.max(reach + (decayed.raw() as i64).abs());
                for &i in &sources {
                    state.accumulate(net.weights[l][o][i]);
                }
                layer.push(state.step(&cfg));
            }
            fired.push(layer);
        }
        prev = fired;
    }
    bound
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::DecaySelector;

    fn one_neuron() -> NetworkDescription {
        NetworkDescription {
            layers: vec![1, 1],
            weights: vec![vec![vec![2.0]]],
            threshold: vec![1.0],
            decay: vec![DecaySelector::D500],
            reset: vec![ResetMode::Zero],
        }
    }

    #[test]
    fn quiescent_network() {
        let net = one_neuron();
        let stim = vec![vec![]; 10];
        let r = behavioral_run(&net.quantize().unwrap(), &stim);
        assert!(r.iter().flatten().flatten().all(|f| !f));
        assert_eq!(output_counts(&r), vec![0]);
        assert_eq!(float_run(&net, &stim), r);
    }

    #[test]
    fn single_transition() {
        let net = one_neuron();
        let stim = vec![vec![0], vec![], vec![0]];
        let r = behavioral_run(&net.quantize().unwrap(), &stim);
        assert_eq!(r, vec![vec![vec![true]], vec![vec![false]], vec![vec![true]]]);
        assert_eq!(float_run(&net, &stim), r);
    }

    #[test]
    fn hidden_layer_adds_one_step() {
        let net = NetworkDescription {
            layers: vec![1, 1, 1],
            weights: vec![vec![vec![1.0]], vec![vec![1.0]]],
            threshold: vec![1.0, 1.0],
            decay: vec![DecaySelector::D500; 2],
            reset: vec![ResetMode::Zero; 2],
        };
        let r = behavioral_run(&net.quantize().unwrap(), &[vec![0], vec![], vec![]]);
        assert_eq!(r[0], vec![vec![true], vec![false]]);
        assert_eq!(r[1], vec![vec![false], vec![true]]);
        assert_eq!(r[2], vec![vec![false], vec![false]]);
    }

    #[test]
    fn float_zero_weights_decode_to_class_zero() {
        let net = NetworkDescription {
            layers: vec![3, 4],
            weights: vec![vec![vec![0.0; 3]; 4]],
            threshold: vec![1.0],
            decay: vec![DecaySelector::D750],
            reset: vec![ResetMode::Subtract],
        };
        let r = float_run(&net, &vec![vec![0, 1, 2]; 20]);
        assert_eq!(output_counts(&r), vec![0; 4]);
        assert_eq!(crate::codec::decode_spikes(&output_counts(&r)), Ok(0));
    }

    #[test]
    fn float_is_scale_invariant() {
        let net = NetworkDescription {
            layers: vec![3, 2],
            weights: vec![vec![vec![0.3, 0.5, -0.2], vec![0.9, 0.1, 0.4]]],
            threshold: vec![0.7],
            decay: vec![DecaySelector::D750],
            reset: vec![ResetMode::Subtract],
        };
        // Scaling by a power of two keeps every f64 operation exact.
        let mut scaled = net.clone();
        scaled.weights[0].iter_mut().flatten().for_each(|w| *w *= 4.0);
        scaled.threshold[0] *= 4.0;
        let stim: Vec<Vec<usize>> = (0..30).map(|t| (0..3).filter(|i| (t + i) % 2 == 0).collect()).collect();
        assert_eq!(float_run(&net, &stim), float_run(&scaled, &stim));
    }
}
