use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CompileError;
use crate::fixed::Potential;
use crate::neuron::{DecaySelector, NeuronConfig, ResetMode};

/// Feedforward network file.
///
/// ```json
/// {
///   "layers": [196, 32, 10],
///   "weights": [[[...196 per row] x32], [[...32 per row] x10]],
///   "threshold": [1.0, 1.0],
///   "decay": ["D750", "D750"],
///   "reset": ["Subtract", "Subtract"]
/// }
/// ```
///
/// `weights[l][o][i]` connects neuron `i` of layer `l` to neuron `o` of layer
/// `l + 1`. Neuron parameters are given per non-input layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDescription {
    pub layers: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub threshold: Vec<f64>,
    pub decay: Vec<DecaySelector>,
    pub reset: Vec<ResetMode>,
}

/// A network with Q16.16 weights and per-layer neuron configs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedNetwork {
    pub layers: Vec<usize>,
    pub weights: Vec<Vec<Vec<Potential>>>,
    pub configs: Vec<NeuronConfig>,
}

impl NetworkDescription {
    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        let net: NetworkDescription = serde_json::from_str(text).map_err(|e| CompileError::Schema(e.to_string()))?;
        net.validate()?;
        Ok(net)
    }

    pub fn load(path: &Path) -> Result<Self, CompileError> {
        let text = fs::read_to_string(path).map_err(|e| CompileError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn inputs(&self) -> usize {
        self.layers[0]
    }

    pub fn outputs(&self) -> usize {
        *self.layers.last().expect("validated")
    }

    pub fn validate(&self) -> Result<(), CompileError> {
        let schema = |m: String| Err(CompileError::Schema(m));
        if self.layers.len() < 2 {
            return schema(format!("need at least an input and an output layer, got {} layers", self.layers.len()));
        }
        if let Some(l) = self.layers.iter().position(|&n| n == 0) {
            return schema(format!("layer {l} is empty"));
        }
        let stages = self.layers.len() - 1;
        for (name, len) in [
            ("weights", self.weights.len()),
            ("threshold", self.threshold.len()),
            ("decay", self.decay.len()),
            ("reset", self.reset.len()),
        ] {
            if len != stages {
                return schema(format!("{name} has {len} entries, expected {stages} (one per non-input layer)"));
            }
        }
        for (l, m) in self.weights.iter().enumerate() {
            let (rows, cols) = (self.layers[l + 1], self.layers[l]);
            if m.len() != rows {
                return schema(format!("weights[{l}] has {} rows, expected {rows}", m.len()));
            }
            for (o, row) in m.iter().enumerate() {
                if row.len() != cols {
                    return schema(format!("weights[{l}][{o}] has {} columns, expected {cols}", row.len()));
                }
                if let Some(i) = row.iter().position(|w| !w.is_finite()) {
                    return schema(format!("weights[{l}][{o}][{i}] is not finite"));
                }
            }
        }
        for (l, &t) in self.threshold.iter().enumerate() {
            if !(t.is_finite() && t > 0.0) {
                return schema(format!("threshold[{l}] = {t} must be positive and finite"));
            }
        }
        Ok(())
    }

    pub fn quantize(&self) -> Result<QuantizedNetwork, CompileError> {
        self.validate()?;
        let weights = self
            .weights
            .iter()
            .enumerate()
            .map(|(l, m)| {
                m.iter()
                    .enumerate()
                    .map(|(o, row)| {
                        row.iter()
                            .enumerate()
                            .map(|(i, &w)| {
                                Potential::quantize(w).map_err(|source| CompileError::Quantize {
                                    what: format!("weights[{l}][{o}][{i}]"),
                                    source,
                                })
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<Vec<Potential>>>, _>>()?;
        let configs = (0..self.threshold.len())
            .map(|l| {
                let t = Potential::quantize(self.threshold[l])
                    .map_err(|source| CompileError::Quantize { what: format!("threshold[{l}]"), source })?;
                NeuronConfig::new(t, self.decay[l], self.reset[l])
                    .map_err(|_| CompileError::Schema(format!("threshold[{l}] quantizes to zero")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(QuantizedNetwork { layers: self.layers.clone(), weights, configs })
    }
}

impl QuantizedNetwork {
    /// Number of neurons that need a physical slot (all but the input layer).
    pub fn physical_neurons(&self) -> usize {
        self.layers[1..].iter().sum()
    }
}
