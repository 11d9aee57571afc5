//! Layer-sequential placement of neurons onto cluster slots.
//!
//! Non-input layers are packed one after another into physical slots
//! `cluster * 32 + neuron`. A layer of at most one group (128 neurons) that
//! would straddle a group boundary starts at the next group instead when that
//! still fits, so small layers stay behind a single L1 router.
//!
//! Inputs have no physical slot; they are virtual sources injected by the
//! host. They take the packed ids 1024..2047 (clusters 32..63) and, beyond
//! that, the ids of output-layer neurons, which never emit into the fabric.

use serde::{Deserialize, Serialize};

use super::{CompileError, QuantizedNetwork};
use crate::packet::{ClusterId, NeuronId, SpikePacket, NEURONS_PER_CLUSTER, PHYSICAL_NEURONS, SOURCE_IDS};

/// First packed id of the virtual input range.
pub const VIRTUAL_ID_BASE: usize = PHYSICAL_NEURONS;
pub const PHYSICAL_ID_LIMIT: usize = PHYSICAL_NEURONS;
const GROUP_NEURONS: usize = 128;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    /// Physical slot (packed id) of every neuron, per non-input layer.
    pub layers: Vec<Vec<u16>>,
    /// Packed source id of every input.
    pub inputs: Vec<u16>,
}

fn slot(id: u16) -> (ClusterId, NeuronId) {
    let p = SpikePacket::unpack(id).expect("ids are 11-bit");
    (p.src_cluster, p.src_neuron)
}

impl Placement {
    /// Slot of neuron `index` of network layer `layer` (1-based: 0 is the input layer).
    pub fn slot(&self, layer: usize, index: usize) -> (ClusterId, NeuronId) {
        slot(self.layers[layer - 1][index])
    }

    pub fn input_packet(&self, index: usize) -> SpikePacket {
        SpikePacket::unpack(self.inputs[index]).expect("ids are 11-bit")
    }

    pub fn outputs(&self) -> Vec<(ClusterId, NeuronId)> {
        self.layers.last().expect("at least one layer").iter().map(|&id| slot(id)).collect()
    }

    /// Number of physical clusters holding at least one neuron.
    pub fn clusters_used(&self) -> usize {
        let mut used = [false; PHYSICAL_NEURONS / NEURONS_PER_CLUSTER];
        for &id in self.layers.iter().flatten() {
            used[id as usize / NEURONS_PER_CLUSTER] = true;
        }
        used.iter().filter(|u| **u).count()
    }

    pub fn groups_used(&self) -> usize {
        let mut used = [false; PHYSICAL_NEURONS / GROUP_NEURONS];
        for &id in self.layers.iter().flatten() {
            used[id as usize / GROUP_NEURONS] = true;
        }
        used.iter().filter(|u| **u).count()
    }
}

pub fn place(net: &QuantizedNetwork) -> Result<Placement, CompileError> {
    let physical = net.physical_neurons();
    if physical > PHYSICAL_NEURONS {
        return Err(CompileError::CapacityExceeded(format!(
            "{physical} hidden and output neurons, the fabric has {PHYSICAL_NEURONS}"
        )));
    }
    let mut cursor = 0usize;
    let mut layers = Vec::with_capacity(net.layers.len() - 1);
    for &n in &net.layers[1..] {
        let offset = cursor % GROUP_NEURONS;
        let aligned = cursor - offset + GROUP_NEURONS;
        if n <= GROUP_NEURONS && offset != 0 && offset + n > GROUP_NEURONS && aligned + n <= PHYSICAL_NEURONS {
            cursor = aligned;
        }
        if cursor + n > PHYSICAL_NEURONS {
            return Err(CompileError::CapacityExceeded(format!(
                "layer of {n} neurons does not fit after {cursor} occupied slots ({PHYSICAL_NEURONS} total)"
            )));
        }
        layers.push((cursor..cursor + n).map(|p| p as u16).collect::<Vec<u16>>());
        cursor += n;
    }

    let n_inputs = net.layers[0];
    let outputs = layers.last().expect("validated network has an output layer");
    let virtual_ids = SOURCE_IDS - VIRTUAL_ID_BASE;
    if n_inputs > virtual_ids + outputs.len() {
        return Err(CompileError::CapacityExceeded(format!(
            "{n_inputs} inputs need source ids, only {virtual_ids} virtual ids plus {} reusable output ids exist",
            outputs.len()
        )));
    }
    let inputs = (0..n_inputs)
        .map(|i| if i < virtual_ids { (VIRTUAL_ID_BASE + i) as u16 } else { outputs[i - virtual_ids] })
        .collect();
    Ok(Placement { layers, inputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::Potential;
    use crate::neuron::{DecaySelector, NeuronConfig, ResetMode};

    fn shape(layers: &[usize]) -> QuantizedNetwork {
        let cfg = NeuronConfig::new(Potential::ONE, DecaySelector::D500, ResetMode::Zero).unwrap();
        QuantizedNetwork {
            layers: layers.to_vec(),
            weights: layers.windows(2).map(|w| vec![vec![Potential::ZERO; w[0]]; w[1]]).collect(),
            configs: vec![cfg; layers.len() - 1],
        }
    }

    #[test]
    fn small_net_packs_into_cluster_zero() {
        let p = place(&shape(&[4, 3, 2])).unwrap();
        assert_eq!(p.layers, vec![vec![0, 1, 2], vec![3, 4]]);
        assert_eq!(p.inputs, vec![1024, 1025, 1026, 1027]);
        assert_eq!(p.clusters_used(), 1);
        assert_eq!(p.input_packet(0).src_cluster.get(), 32);
    }

    #[test]
    fn digits_net_fits_in_one_group() {
        let p = place(&shape(&[196, 32, 10])).unwrap();
        assert_eq!(p.layers[0], (0..32).collect::<Vec<u16>>());
        assert_eq!(p.layers[1], (32..42).collect::<Vec<u16>>());
        assert!(p.groups_used() <= 2);
    }

    #[test]
    fn small_layers_align_to_groups() {
        let p = place(&shape(&[8, 100, 60, 10])).unwrap();
        assert_eq!(p.layers[0][0], 0);
        assert_eq!(p.layers[1][0], 128);
        assert_eq!(p.layers[2][0], 188);
        let p = place(&shape(&[8, 1000, 24])).unwrap();
        assert_eq!(p.layers[1][0], 1000);
    }

    #[test]
    fn capacity_limits() {
        assert!(matches!(place(&shape(&[4, 1025])), Err(CompileError::CapacityExceeded(_))));
        assert!(matches!(place(&shape(&[4, 1000, 25])), Err(CompileError::CapacityExceeded(_))));
        let p = place(&shape(&[1030, 16, 10])).unwrap();
        assert_eq!(p.inputs[1023], 2047);
        assert_eq!(&p.inputs[1024..], &p.layers[1][..6]);
        assert!(matches!(place(&shape(&[1035, 16, 10])), Err(CompileError::CapacityExceeded(_))));
    }
}
