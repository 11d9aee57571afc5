//! First-generation bus-based fabric: a flat 1024-neuron array, an adjacency
//! matrix, and a shared bus carrying one weighted synaptic event per cycle.
//! Decay is a fixed-point multiply instead of a shift.

use thiserror::Error;

use crate::compiler::BaselineImage;
use crate::fabric::TimestepReport;
use crate::fixed::{decay_mult, DecayFactor, Potential};
use crate::neuron::{DecaySelector, NeuronConfig, NeuronState, ResetMode};
use crate::packet::PHYSICAL_NEURONS;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BaselineError {
    #[error("neuron address {0} out of range (array has {PHYSICAL_NEURONS})")]
    AddressOutOfRange(u32),
    #[error("input {0} does not exist")]
    UnknownInput(usize),
}

/// Multiplier equivalent of a shift-decay selector.
pub fn lambda_for(sel: DecaySelector) -> DecayFactor {
    let raw = match sel {
        DecaySelector::D125 => 8192,
        DecaySelector::D250 => 16384,
        DecaySelector::D500 => 32768,
        DecaySelector::D750 => 49152,
    };
    DecayFactor::from_raw(raw).expect("all retained fractions are in (0, 1)")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BusTransaction {
    pub dest: u16,
    pub weight: Potential,
}

/// Sparse storage of the dense 1024 x 1024 synapse matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    rows: Vec<Vec<(u16, Potential)>>,
}

impl Default for AdjacencyMatrix {
    fn default() -> Self {
        AdjacencyMatrix { rows: vec![Vec::new(); PHYSICAL_NEURONS] }
    }
}

fn check(id: u16) -> Result<usize, BaselineError> {
    if (id as usize) < PHYSICAL_NEURONS {
        Ok(id as usize)
    } else {
        Err(BaselineError::AddressOutOfRange(id as u32))
    }
}

impl AdjacencyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets entry (src, dst); zero removes the synapse.
    pub fn set(&mut self, src: u16, dst: u16, weight: Potential) -> Result<(), BaselineError> {
        let row = &mut self.rows[check(src)?];
        check(dst)?;
        match row.binary_search_by_key(&dst, |&(d, _)| d) {
            Ok(i) if weight.is_zero() => {
                row.remove(i);
            }
            Ok(i) => row[i].1 = weight,
            Err(_) if weight.is_zero() => {}
            Err(i) => row.insert(i, (dst, weight)),
        }
        Ok(())
    }

    pub fn get(&self, src: u16, dst: u16) -> Potential {
        let Some(row) = self.rows.get(src as usize) else { return Potential::ZERO };
        row.binary_search_by_key(&dst, |&(d, _)| d).map_or(Potential::ZERO, |i| row[i].1)
    }

    /// Nonzero outgoing synapses of `src`, ascending by destination.
    pub fn row(&self, src: u16) -> &[(u16, Potential)] {
        &self.rows[src as usize]
    }

    pub fn nonzero(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Bus schedule for one timestep: stimulus events first, in the given order,
/// then every spiking source in ascending id order with its synapses in
/// ascending destination order. One transaction per cycle.
pub fn propagate(
    matrix: &AdjacencyMatrix,
    spiking: &[u16],
    stimulus: &[(u16, Potential)],
) -> Result<Vec<BusTransaction>, BaselineError> {
    let mut sources = spiking.to_vec();
    for &s in &sources {
        check(s)?;
    }
    sources.sort_unstable();
    sources.dedup();
    let mut txns = Vec::new();
    for &(dest, weight) in stimulus {
        check(dest)?;
        txns.push(BusTransaction { dest, weight });
    }
    for s in sources {
        txns.extend(matrix.row(s).iter().map(|&(dest, weight)| BusTransaction { dest, weight }));
    }
    Ok(txns)
}

/// Address match performed by every neuron on the bus.
pub fn snoops(neuron: u16, txn: &BusTransaction) -> bool {
    txn.dest == neuron
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Params {
    threshold: Potential,
    lambda: DecayFactor,
    reset: ResetMode,
}

#[derive(Clone, Debug)]
pub struct CerebraS {
    matrix: AdjacencyMatrix,
    inputs: Vec<Vec<(u16, Potential)>>,
    params: Vec<Option<Params>>,
    states: Vec<NeuronState>,
    spiking: Vec<u16>,
    timestep: u64,
}

impl CerebraS {
    pub fn from_image(image: &BaselineImage) -> Result<Self, BaselineError> {
        let mut matrix = AdjacencyMatrix::new();
        for &(s, d, w) in &image.synapses {
            matrix.set(s, d, w)?;
        }
        let mut params = vec![None; PHYSICAL_NEURONS];
        for &(id, cfg) in &image.configs {
            params[check(id)?] = Some(Self::params(&cfg));
        }
        for list in &image.inputs {
            for &(d, _) in list {
                check(d)?;
            }
        }
        Ok(CerebraS {
            matrix,
            inputs: image.inputs.clone(),
            params,
            states: vec![NeuronState::default(); PHYSICAL_NEURONS],
            spiking: Vec::new(),
            timestep: 0,
        })
    }

    fn params(cfg: &NeuronConfig) -> Params {
        Params { threshold: cfg.threshold(), lambda: lambda_for(cfg.decay), reset: cfg.reset }
    }

    pub fn matrix(&self) -> &AdjacencyMatrix {
        &self.matrix
    }

    pub fn state(&self, id: u16) -> &NeuronState {
        &self.states[id as usize]
    }

    pub fn fired(&self, id: u16) -> bool {
        self.states[id as usize].fired
    }

    pub fn clear_activity(&mut self) {
        self.states.iter_mut().for_each(|s| *s = NeuronState::default());
        self.spiking.clear();
        self.timestep = 0;
    }

    /// Applies one bus transaction. Only the addressed neuron changes.
    pub fn snoop_and_integrate(&mut self, txn: &BusTransaction) {
        self.states[txn.dest as usize].accumulate(txn.weight);
    }

    /// One timestep with the given inputs active. Cycles are one per bus
    /// transaction plus one for the neuron update.
    pub fn run_timestep(&mut self, active_inputs: &[usize]) -> Result<TimestepReport, BaselineError> {
        let mut stimulus = Vec::new();
        for &i in active_inputs {
            stimulus.extend_from_slice(self.inputs.get(i).ok_or(BaselineError::UnknownInput(i))?);
        }
        let txns = propagate(&self.matrix, &self.spiking, &stimulus)?;
        for txn in &txns {
            self.snoop_and_integrate(txn);
        }
        let driving = self.spiking.iter().filter(|&&s| !self.matrix.row(s).is_empty()).count();
        let mut report = TimestepReport {
            index: self.timestep,
            cycles_elapsed: txns.len() as u64 + 1,
            spikes_in: (active_inputs.len() + driving) as u64,
            spikes_out: 0,
            sops: txns.iter().filter(|t| !t.weight.is_zero()).count() as u64,
        };
        self.spiking.clear();
        for (id, (state, p)) in self.states.iter_mut().zip(&self.params).enumerate() {
            let Some(p) = p else {
                state.accumulator = Potential::ZERO;
                continue;
            };
            let decayed = decay_mult(state.membrane, p.lambda);
            if state.integrate_and_fire(decayed, p.threshold, p.reset) {
                self.spiking.push(id as u16);
            }
        }
        report.spikes_out = self.spiking.len() as u64;
        self.timestep += 1;
        Ok(report)
    }
}
