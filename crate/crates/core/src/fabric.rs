//! Second-generation fabric: 32 clusters, 8 weight stores and the dual-path
//! NoC, driven by the accelerator controller's timestep sequencer.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Cluster, ConfigError};
use crate::neuron::{NeuronConfig, NeuronState};
use crate::noc::{
    ControlDest, ControlFlit, ControlPath, ControlSource, MulticastTable, NocError, SpikeNetConfig, SpikeNetwork,
    TraceRecord,
};
use crate::packet::{ClusterId, NeuronId, SpikePacket, CLUSTERS_PER_GROUP, CLUSTER_GROUPS, PHYSICAL_CLUSTERS};
use crate::weight_store::{MemoryMode, RowAddr, WeightStore, WeightStoreError};

/// Cycle budget for one timestep before the sequencer gives up.
pub const DEFAULT_CYCLE_GUARD: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FabricMode {
    Initialization,
    SpikeProcessing,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepReport {
    pub index: u64,
    pub cycles_elapsed: u64,
    /// Packets put on the spike path: stimulus plus latched fabric spikes.
    pub spikes_in: u64,
    /// Neurons that fired at the end of the step.
    pub spikes_out: u64,
    /// Nonzero-weight accumulations.
    pub sops: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FabricError {
    #[error("operation needs {expected:?} mode, fabric is in {actual:?}")]
    WrongMode { expected: FabricMode, actual: FabricMode },
    #[error(transparent)]
    Noc(#[from] NocError),
    #[error("cluster {cluster}: {source}")]
    Config { cluster: u8, source: ConfigError },
    #[error("memory group {group}: {source}")]
    Memory { group: u8, source: WeightStoreError },
    #[error("watch target ({0},{1}) is not a physical neuron")]
    WatchTargetOutOfRange(u8, u8),
    #[error("timestep {timestep} did not reach its barrier within {cycles} cycles")]
    Deadlock { timestep: u64, cycles: u64 },
}

/// Everything the host streams into the fabric during initialization.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InitImage {
    /// Config streams per physical cluster.
    pub cluster_streams: BTreeMap<u8, Vec<u8>>,
    /// Byte-serial weight streams per cluster group.
    pub memory_streams: BTreeMap<u8, Vec<u8>>,
    /// Spike-path routing tables.
    pub multicast: MulticastTable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FabricConfig {
    pub spike_net: SpikeNetConfig,
    pub cycle_guard: u64,
}

impl Default for FabricConfig {
    fn default() -> Self {
        FabricConfig { spike_net: SpikeNetConfig::default(), cycle_guard: DEFAULT_CYCLE_GUARD }
    }
}

/// Architectural state used to compare two fabrics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FabricSnapshot {
    pub mode: FabricMode,
    pub neurons: Vec<(NeuronConfig, NeuronState)>,
    pub forwarders: Vec<Vec<(SpikePacket, RowAddr)>>,
    pub emission_masks: Vec<u32>,
    pub memories: Vec<Vec<u8>>,
    pub multicast: Vec<(usize, u32)>,
}

#[derive(Clone, Debug)]
pub struct Fabric {
    config: FabricConfig,
    mode: FabricMode,
    clusters: Vec<Cluster>,
    stores: Vec<WeightStore>,
    net: SpikeNetwork,
    timestep: u64,
    load_cycles: u64,
}

impl Default for Fabric {
    fn default() -> Self {
        Self::new(FabricConfig::default())
    }
}

impl Fabric {
    pub fn new(config: FabricConfig) -> Self {
        Fabric {
            config,
            mode: FabricMode::Initialization,
            clusters: (0..PHYSICAL_CLUSTERS as u8).map(|c| Cluster::new(ClusterId::new(c).expect("c < 32"))).collect(),
            stores: (0..CLUSTER_GROUPS).map(|_| WeightStore::new()).collect(),
            net: SpikeNetwork::new(config.spike_net, MulticastTable::new()),
            timestep: 0,
            load_cycles: 0,
        }
    }

    pub fn config(&self) -> FabricConfig {
        self.config
    }

    pub fn mode(&self) -> FabricMode {
        self.mode
    }

    pub fn cluster(&self, id: ClusterId) -> &Cluster {
        &self.clusters[id.index()]
    }

    pub fn store(&self, group: usize) -> &WeightStore {
        &self.stores[group]
    }

    pub fn spike_network(&self) -> &SpikeNetwork {
        &self.net
    }

    /// Timesteps executed since the last load or activity clear.
    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    /// Control-path cycles spent by the last successful load.
    pub fn load_cycles(&self) -> u64 {
        self.load_cycles
    }

    pub fn set_trace(&mut self, on: bool) {
        self.net.set_trace(on);
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.net.take_trace()
    }

    fn expect_mode(&self, expected: FabricMode) -> Result<(), FabricError> {
        if self.mode != expected {
            return Err(FabricError::WrongMode { expected, actual: self.mode });
        }
        Ok(())
    }

    /// Streams the image over the control path and switches to spike
    /// processing. On error nothing is changed.
    pub fn load_model(&mut self, image: &InitImage) -> Result<(), FabricError> {
        self.expect_mode(FabricMode::Initialization)?;
        let mut flits = Vec::new();
        for (&c, bytes) in &image.cluster_streams {
            let id = ClusterId::new(c).ok_or(NocError::UnknownDestination(c))?;
            flits.extend(bytes.iter().map(|&payload| ControlFlit { dest: ControlDest::Cluster(id), payload }));
        }
        for (&g, bytes) in &image.memory_streams {
            flits.extend(bytes.iter().map(|&payload| ControlFlit { dest: ControlDest::MemoryGroup(g), payload }));
        }
        let mut path = ControlPath::new();
        let mut deliveries = path.transmit(ControlSource::Host, &flits)?;
        deliveries.sort_by_key(|d| d.index);
        let mut received: BTreeMap<ControlDest, Vec<u8>> = BTreeMap::new();
        for d in &deliveries {
            received.entry(d.dest).or_default().push(d.payload);
        }

        let mut clusters = self.clusters.clone();
        let mut stores = self.stores.clone();
        for (dest, bytes) in &received {
            match *dest {
                ControlDest::Cluster(c) => clusters[c.index()]
                    .handle_config(bytes)
                    .map_err(|source| FabricError::Config { cluster: c.get(), source })?,
                ControlDest::MemoryGroup(g) => {
                    stores[g as usize]
                        .memory_mut()
                        .init_write(bytes)
                        .map_err(|source| FabricError::Memory { group: g, source })?;
                }
            }
        }
        for s in &mut stores {
            s.memory_mut().set_mode(MemoryMode::Inference);
        }
        self.clusters = clusters;
        self.stores = stores;
        self.net = SpikeNetwork::new(self.config.spike_net, image.multicast.clone());
        self.mode = FabricMode::SpikeProcessing;
        self.timestep = 0;
        self.load_cycles = path.cycle();
        Ok(())
    }

    /// Runs one timestep: inject, route and deliver until the barrier holds,
    /// then step every neuron and latch the fired flags for the next step.
    pub fn run_timestep(&mut self, stimulus: &[SpikePacket]) -> Result<TimestepReport, FabricError> {
        self.expect_mode(FabricMode::SpikeProcessing)?;
        let mut host: VecDeque<SpikePacket> = stimulus.iter().copied().collect();
        let mut report = TimestepReport { index: self.timestep, ..Default::default() };
        loop {
            if report.cycles_elapsed >= self.config.cycle_guard {
                return Err(FabricError::Deadlock { timestep: self.timestep, cycles: report.cycles_elapsed });
            }
            report.cycles_elapsed += 1;
            self.net.begin_cycle();

            for cluster in &mut self.clusters {
                if let Some(pkt) = cluster.encoder().peek() {
                    if self.net.inject(cluster.id(), pkt) {
                        cluster.encoder_mut().pop();
                        report.spikes_in += 1;
                    }
                }
            }
            if let Some(&pkt) = host.front() {
                if self.net.inject_host(pkt) {
                    host.pop_front();
                    report.spikes_in += 1;
                }
            }

            self.net.route();

            for cluster in &self.clusters {
                let id = cluster.id();
                let Some(pkt) = self.net.ingress_head(id) else { continue };
                match cluster.forward_incoming(pkt) {
                    None => {
                        self.net.pop_ingress(id);
                    }
                    Some(addr) => {
                        let accepted = self.stores[id.group()]
                            .enqueue_request(id.port(), addr)
                            .expect("stores are in inference mode while processing spikes");
                        if accepted {
                            self.net.pop_ingress(id);
                        }
                    }
                }
            }

            for (g, store) in self.stores.iter_mut().enumerate() {
                if let Some((grant, row)) = store.arbitrate_and_read() {
                    let cluster = &mut self.clusters[g * CLUSTERS_PER_GROUP + grant.port];
                    report.sops += cluster.deliver_weights(&row) as u64;
                }
            }

            self.net.end_cycle();

            let settled = host.is_empty()
                && self.clusters.iter().all(|c| c.encoder().is_empty())
                && self.net.is_drained()
                && self.stores.iter().all(WeightStore::is_complete);
            if settled {
                break;
            }
        }

        for cluster in &mut self.clusters {
            report.spikes_out += cluster.step().count() as u64;
            cluster.latch_outgoing();
        }
        self.timestep += 1;
        Ok(report)
    }

    /// Fired flags of the most recent timestep for the watched neurons.
    pub fn read_output_spikes(&self, watch: &[(ClusterId, NeuronId)]) -> Result<Vec<bool>, FabricError> {
        watch
            .iter()
            .map(|&(c, n)| {
                if !c.is_physical() {
                    return Err(FabricError::WatchTargetOutOfRange(c.get(), n.get()));
                }
                Ok(self.clusters[c.index()].last_fired().is_set(n.index()))
            })
            .collect()
    }

    /// Returns to initialization mode with every table and memory cleared.
    pub fn reset(&mut self) {
        *self = Fabric::new(self.config);
    }

    /// Clears membranes, queues and in-flight spikes but keeps the model.
    pub fn clear_activity(&mut self) {
        for c in &mut self.clusters {
            c.clear_activity();
        }
        for s in &mut self.stores {
            s.clear_requests();
        }
        self.net.reset();
        self.timestep = 0;
    }

    pub fn snapshot(&self) -> FabricSnapshot {
        let neurons = self
            .clusters
            .iter()
            .flat_map(|c| {
                (0..32u8).map(move |n| {
                    let n = NeuronId::new(n).expect("n < 32");
                    (*c.config(n), *c.neuron(n))
                })
            })
            .collect();
        FabricSnapshot {
            mode: self.mode,
            neurons,
            forwarders: self.clusters.iter().map(|c| c.forwarder().iter().collect()).collect(),
            emission_masks: self.clusters.iter().map(|c| c.encoder().mask()).collect(),
            memories: self.stores.iter().map(|s| s.memory().dump_sparse()).collect(),
            multicast: self.net.table().iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::stream;
    use crate::fixed::Potential;
    use crate::neuron::{DecaySelector, ResetMode};
    use crate::weight_store::WeightRow;

    fn cid(c: u8) -> ClusterId {
        ClusterId::new(c).unwrap()
    }

    fn nid(n: u8) -> NeuronId {
        NeuronId::new(n).unwrap()
    }

    /// One neuron (cluster 0, neuron 0) with threshold 1 and one input (virtual
    /// source 1024) of weight 2.0.
    fn single_neuron() -> InitImage {
        let input = SpikePacket::new(cid(32), nid(0));
        let cfg = NeuronConfig::new(Potential::ONE, DecaySelector::D500, ResetMode::Zero).unwrap();
        let mut c0 = stream::load_ni(nid(0), &cfg);
        c0.extend(stream::load_if(input, RowAddr::new(0).unwrap()));
        c0.extend(stream::load_oe(0));
        let mut row = WeightRow::ZERO;
        row.0[0] = Potential::from_int(2);
        let mut multicast = MulticastTable::new();
        multicast.add(input.source(), cid(0));
        InitImage {
            cluster_streams: BTreeMap::from([(0, c0)]),
            memory_streams: BTreeMap::from([(0, row.encode_record(RowAddr::new(0).unwrap()))]),
            multicast,
        }
    }

    #[test]
    fn empty_model_never_fires() {
        let mut f = Fabric::default();
        f.load_model(&InitImage::default()).unwrap();
        assert_eq!(f.mode(), FabricMode::SpikeProcessing);
        for i in 0..5 {
            let r = f.run_timestep(&[]).unwrap();
            assert_eq!(r, TimestepReport { index: i, cycles_elapsed: 1, ..Default::default() });
        }
    }

    #[test]
    fn single_neuron_fires_on_input() {
        let mut f = Fabric::default();
        f.load_model(&single_neuron()).unwrap();
        assert!(f.load_cycles() > 0);
        let watch = [(cid(0), nid(0)), (cid(0), nid(1))];
        let r = f.run_timestep(&[SpikePacket::new(cid(32), nid(0))]).unwrap();
        assert_eq!((r.spikes_in, r.spikes_out, r.sops), (1, 1, 1));
        assert_eq!(f.read_output_spikes(&watch).unwrap(), vec![true, false]);
        let r = f.run_timestep(&[]).unwrap();
        assert_eq!((r.spikes_in, r.spikes_out, r.cycles_elapsed), (0, 0, 1));
        assert_eq!(f.read_output_spikes(&watch).unwrap(), vec![false, false]);
        assert_eq!(f.read_output_spikes(&[(cid(40), nid(0))]), Err(FabricError::WatchTargetOutOfRange(40, 0)));
    }

    #[test]
    fn failed_load_is_atomic() {
        let mut f = Fabric::default();
        let before = f.snapshot();
        let mut image = single_neuron();
        // LOAD_IF with row address 0x0900, beyond the 2048-row memory.
        image.cluster_streams.get_mut(&0).unwrap().extend([0x02, 32, 3, 1, 0x00, 0x09]);
        let err = f.load_model(&image).unwrap_err();
        assert!(matches!(err, FabricError::Config { cluster: 0, .. }), "{err}");
        assert_eq!(f.mode(), FabricMode::Initialization);
        assert_eq!(f.snapshot(), before);
    }

    #[test]
    fn spike_processing_needs_a_model() {
        let mut f = Fabric::default();
        assert!(matches!(f.run_timestep(&[]), Err(FabricError::WrongMode { .. })));
        f.load_model(&InitImage::default()).unwrap();
        assert!(matches!(f.load_model(&InitImage::default()), Err(FabricError::WrongMode { .. })));
        f.reset();
        assert_eq!(f.mode(), FabricMode::Initialization);
    }

    #[test]
    fn replay_is_deterministic() {
        let mut a = Fabric::default();
        a.load_model(&single_neuron()).unwrap();
        let mut b = a.clone();
        let stim = [SpikePacket::new(cid(32), nid(0))];
        for t in 0..4 {
            let s: &[SpikePacket] = if t % 2 == 0 { &stim } else { &[] };
            assert_eq!(a.run_timestep(s).unwrap(), b.run_timestep(s).unwrap());
        }
        assert_eq!(a.snapshot(), b.snapshot());
    }
}
