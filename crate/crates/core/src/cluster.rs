//! 32-neuron cluster: controller, incoming forwarder and outgoing encoder.
//!
//! Config stream layout, one command after another:
//!
//! ```text
//! [opcode][target][count][data; count]
//! LOAD_NI 0x01  target = neuron id      data = threshold i32 LE, decay code, reset code  (count 6)
//! LOAD_IF 0x02  target = source cluster data = source neuron, addr lo, addr hi           (count 3)
//! LOAD_OE 0x03  target = 0              data = spike emission mask u32 LE                (count 4)
//! ```
//!
//! A stream is committed atomically: any error leaves the cluster untouched.

use thiserror::Error;

use crate::neuron::{NeuronConfig, NeuronConfigError, NeuronState, CONFIG_BYTES};
use crate::packet::{ClusterId, NeuronId, SpikePacket, NEURONS_PER_CLUSTER, SOURCE_IDS};
use crate::weight_store::{RowAddr, WeightRow};

pub const OPCODE_LOAD_NI: u8 = 0x01;
pub const OPCODE_LOAD_IF: u8 = 0x02;
pub const OPCODE_LOAD_OE: u8 = 0x03;

const LOAD_IF_BYTES: usize = 3;
const LOAD_OE_BYTES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown opcode {0:#04x} at offset {1}")]
    UnknownOpcode(u8, usize),
    #[error("command at offset {offset} declares {declared} flits but only {available} remain")]
    FlitCountMismatch { offset: usize, declared: usize, available: usize },
    #[error("opcode {opcode:#04x} expects {expected} data flits, got {got}")]
    PayloadLength { opcode: u8, expected: usize, got: usize },
    #[error("{what} {value} out of range")]
    AddressOutOfRange { what: &'static str, value: u32 },
    #[error(transparent)]
    Neuron(#[from] NeuronConfigError),
}

/// Source id -> weight-row address lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForwarderTable {
    entries: Vec<Option<RowAddr>>,
}

impl Default for ForwarderTable {
    fn default() -> Self {
        ForwarderTable { entries: vec![None; SOURCE_IDS] }
    }
}

impl ForwarderTable {
    pub fn insert(&mut self, src: SpikePacket, addr: RowAddr) {
        self.entries[src.source()] = Some(addr);
    }

    pub fn lookup(&self, src: SpikePacket) -> Option<RowAddr> {
        self.entries[src.source()]
    }

    pub fn len(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Present entries in ascending source-id order.
    pub fn iter(&self) -> impl Iterator<Item = (SpikePacket, RowAddr)> + '_ {
        self.entries.iter().enumerate().filter_map(|(i, e)| {
            e.map(|addr| (SpikePacket::unpack(i as u16).expect("table index is an 11-bit id"), addr))
        })
    }
}

pub fn forward_incoming(table: &ForwarderTable, pkt: SpikePacket) -> Option<RowAddr> {
    table.lookup(pkt)
}

/// One spike line per local neuron.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct OutgoingSpikeVector(pub u32);

impl OutgoingSpikeVector {
    pub fn is_set(self, neuron: usize) -> bool {
        self.0 >> neuron & 1 == 1
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }
}

/// Serializes a latched vector: one packet per set bit, ascending neuron id.
pub fn encode_outgoing(vector: OutgoingSpikeVector, cluster: ClusterId) -> Vec<SpikePacket> {
    (0..NEURONS_PER_CLUSTER)
        .filter(|&n| vector.is_set(n))
        .map(|n| SpikePacket::new(cluster, NeuronId::new(n as u8).expect("n < 32")))
        .collect()
}

/// Cycle-level serializer: `peek` offers the next packet, `pop` retires it
/// once the router accepted it.
#[derive(Clone, Debug)]
pub struct OutgoingEncoder {
    cluster: ClusterId,
    mask: u32,
    pending: u32,
}

impl OutgoingEncoder {
    pub fn new(cluster: ClusterId) -> Self {
        OutgoingEncoder { cluster, mask: u32::MAX, pending: 0 }
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn latch(&mut self, vector: OutgoingSpikeVector) {
        self.pending = vector.0 & self.mask;
    }

    pub fn peek(&self) -> Option<SpikePacket> {
        (self.pending != 0).then(|| {
            let n = self.pending.trailing_zeros() as u8;
            SpikePacket::new(self.cluster, NeuronId::new(n).expect("bit index < 32"))
        })
    }

    pub fn pop(&mut self) {
        self.pending &= self.pending.wrapping_sub(1);
    }

    pub fn is_empty(&self) -> bool {
        self.pending == 0
    }

    pub fn clear(&mut self) {
        self.pending = 0;
    }
}

#[derive(Clone, Debug)]
pub struct Cluster {
    id: ClusterId,
    neurons: [NeuronState; NEURONS_PER_CLUSTER],
    configs: [NeuronConfig; NEURONS_PER_CLUSTER],
    forwarder: ForwarderTable,
    encoder: OutgoingEncoder,
    last_fired: OutgoingSpikeVector,
}

impl Cluster {
    pub fn new(id: ClusterId) -> Self {
        Cluster {
            id,
            neurons: [NeuronState::default(); NEURONS_PER_CLUSTER],
            configs: [NeuronConfig::unconfigured(); NEURONS_PER_CLUSTER],
            forwarder: ForwarderTable::default(),
            encoder: OutgoingEncoder::new(id),
            last_fired: OutgoingSpikeVector::default(),
        }
    }

    pub fn id(&self) -> ClusterId {
        self.id
    }

    pub fn neuron(&self, n: NeuronId) -> &NeuronState {
        &self.neurons[n.index()]
    }

    pub fn config(&self, n: NeuronId) -> &NeuronConfig {
        &self.configs[n.index()]
    }

    pub fn configs(&self) -> &[NeuronConfig; NEURONS_PER_CLUSTER] {
        &self.configs
    }

    pub fn forwarder(&self) -> &ForwarderTable {
        &self.forwarder
    }

    pub fn encoder(&self) -> &OutgoingEncoder {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut OutgoingEncoder {
        &mut self.encoder
    }

    pub fn forward_incoming(&self, pkt: SpikePacket) -> Option<RowAddr> {
        forward_incoming(&self.forwarder, pkt)
    }

    /// Adds slot i of the row to neuron i. Returns the number of nonzero slots.
    pub fn deliver_weights(&mut self, row: &WeightRow) -> usize {
        let mut sops = 0;
        for (state, &w) in self.neurons.iter_mut().zip(row.0.iter()) {
            state.accumulate(w);
            sops += usize::from(!w.is_zero());
        }
        sops
    }

    /// Timestep boundary for all 32 neurons.
    pub fn step(&mut self) -> OutgoingSpikeVector {
        let mut bits = 0u32;
        for (i, (state, cfg)) in self.neurons.iter_mut().zip(self.configs.iter()).enumerate() {
            if state.step(cfg) {
                bits |= 1 << i;
            }
        }
        self.last_fired = OutgoingSpikeVector(bits);
        self.last_fired
    }

    /// Fired flags of the most recent step.
    pub fn last_fired(&self) -> OutgoingSpikeVector {
        self.last_fired
    }

    pub fn latch_outgoing(&mut self) {
        self.encoder.latch(self.last_fired);
    }

    /// Returns membranes, accumulators, flags and the encoder to idle; configuration is kept.
    pub fn clear_activity(&mut self) {
        self.neurons = [NeuronState::default(); NEURONS_PER_CLUSTER];
        self.last_fired = OutgoingSpikeVector::default();
        self.encoder.clear();
    }

    pub fn handle_config(&mut self, flits: &[u8]) -> Result<(), ConfigError> {
        let mut staged = self.clone();
        staged.apply_config(flits)?;
        *self = staged;
        Ok(())
    }

    fn apply_config(&mut self, flits: &[u8]) -> Result<(), ConfigError> {
        let mut at = 0;
        while at < flits.len() {
            let opcode = flits[at];
            if flits.len() - at < 3 {
                return Err(ConfigError::FlitCountMismatch { offset: at, declared: 3, available: flits.len() - at });
            }
            let target = flits[at + 1];
            let count = flits[at + 2] as usize;
            let data_start = at + 3;
            let available = flits.len() - data_start;
            if !matches!(opcode, OPCODE_LOAD_NI | OPCODE_LOAD_IF | OPCODE_LOAD_OE) {
                return Err(ConfigError::UnknownOpcode(opcode, at));
            }
            if count > available {
                return Err(ConfigError::FlitCountMismatch { offset: at, declared: count, available });
            }
            let data = &flits[data_start..data_start + count];
            match opcode {
                OPCODE_LOAD_NI => {
                    let n = NeuronId::new(target)
                        .ok_or(ConfigError::AddressOutOfRange { what: "neuron", value: target as u32 })?;
                    if count > CONFIG_BYTES {
                        return Err(ConfigError::PayloadLength { opcode, expected: CONFIG_BYTES, got: count });
                    }
                    self.configs[n.index()] = NeuronConfig::configure(data)?;
                }
                OPCODE_LOAD_IF => {
                    let src_cluster = ClusterId::new(target)
                        .ok_or(ConfigError::AddressOutOfRange { what: "source cluster", value: target as u32 })?;
                    if count != LOAD_IF_BYTES {
                        return Err(ConfigError::PayloadLength { opcode, expected: LOAD_IF_BYTES, got: count });
                    }
                    let src_neuron = NeuronId::new(data[0])
                        .ok_or(ConfigError::AddressOutOfRange { what: "source neuron", value: data[0] as u32 })?;
                    let raw = u16::from_le_bytes([data[1], data[2]]);
                    let addr = RowAddr::new(raw)
                        .ok_or(ConfigError::AddressOutOfRange { what: "row address", value: raw as u32 })?;
                    self.forwarder.insert(SpikePacket::new(src_cluster, src_neuron), addr);
                }
                OPCODE_LOAD_OE => {
                    if count != LOAD_OE_BYTES {
                        return Err(ConfigError::PayloadLength { opcode, expected: LOAD_OE_BYTES, got: count });
                    }
                    self.encoder.mask = u32::from_le_bytes([data[0], data[1], data[2], data[3]]);
                }
                _ => unreachable!("opcode validated above"),
            }
            at = data_start + count;
        }
        Ok(())
    }
}

/// Encoders for the three config commands.
pub mod stream {
    use super::*;

    pub fn load_ni(neuron: NeuronId, cfg: &NeuronConfig) -> Vec<u8> {
        let mut out = vec![OPCODE_LOAD_NI, neuron.get(), CONFIG_BYTES as u8];
        out.extend_from_slice(&cfg.to_bytes());
        out
    }

    pub fn load_if(src: SpikePacket, addr: RowAddr) -> Vec<u8> {
        let a = addr.get().to_le_bytes();
        vec![OPCODE_LOAD_IF, src.src_cluster.get(), LOAD_IF_BYTES as u8, src.src_neuron.get(), a[0], a[1]]
    }

    pub fn load_oe(mask: u32) -> Vec<u8> {
        let m = mask.to_le_bytes();
        vec![OPCODE_LOAD_OE, 0, LOAD_OE_BYTES as u8, m[0], m[1], m[2], m[3]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::Potential;
    use crate::neuron::{DecaySelector, ResetMode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn cid(c: u8) -> ClusterId {
        ClusterId::new(c).unwrap()
    }

    fn nid(n: u8) -> NeuronId {
        NeuronId::new(n).unwrap()
    }

    fn pkt(c: u8, n: u8) -> SpikePacket {
        SpikePacket::new(cid(c), nid(n))
    }

    fn row_slot(row: &WeightRow, neuron: NeuronId) -> Potential {
        row.0[neuron.index()]
    }

    #[test]
    fn forward_lookup() {
        let mut t = ForwarderTable::default();
        t.insert(pkt(3, 17), RowAddr::new(42).unwrap());
        assert_eq!(forward_incoming(&t, pkt(3, 17)), RowAddr::new(42));
        assert_eq!(forward_incoming(&t, pkt(3, 18)), None);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn deliver_weights_slot_addressing() {
        let mut c = Cluster::new(cid(0));
        assert_eq!(c.deliver_weights(&WeightRow::ZERO), 0);
        assert!(c.neurons.iter().all(|n| n.accumulator.is_zero()));

        let mut row = WeightRow::ZERO;
        row.0[5] = Potential::from_int(2);
        assert_eq!(c.deliver_weights(&row), 1);
        for (i, n) in c.neurons.iter().enumerate() {
            let expected = if i == 5 { Potential::from_int(2) } else { Potential::ZERO };
            assert_eq!(n.accumulator, expected);
        }
    }

    #[test]
    fn encode_examples() {
        let v = OutgoingSpikeVector(1 | 1 << 31);
        assert_eq!(encode_outgoing(v, cid(7)), vec![pkt(7, 0), pkt(7, 31)]);
        assert!(encode_outgoing(OutgoingSpikeVector(0), cid(7)).is_empty());
        let all = encode_outgoing(OutgoingSpikeVector(u32::MAX), cid(2));
        assert_eq!(all.len(), 32);
        assert!(all.windows(2).all(|w| w[0].src_neuron < w[1].src_neuron));
    }

    #[test]
    fn encoder_under_random_stalls() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut enc = OutgoingEncoder::new(cid(9));
        enc.latch(OutgoingSpikeVector(u32::MAX));
        let mut sent = Vec::new();
        let mut cycles = 0;
        while !enc.is_empty() {
            cycles += 1;
            if rng.gen_bool(0.4) {
                sent.push(enc.peek().unwrap());
                enc.pop();
            }
        }
        assert!(cycles >= 32);
        assert_eq!(sent, encode_outgoing(OutgoingSpikeVector(u32::MAX), cid(9)));
    }

    #[test]
    fn load_ni_addresses_one_neuron() {
        let mut c = Cluster::new(cid(1));
        let cfg = NeuronConfig::new(Potential::from_raw(1000), DecaySelector::D500, ResetMode::Zero).unwrap();
        c.handle_config(&stream::load_ni(nid(4), &cfg)).unwrap();
        assert_eq!(*c.config(nid(4)), cfg);
        for n in (0..32).filter(|&n| n != 4) {
            assert_eq!(*c.config(nid(n)), NeuronConfig::unconfigured());
        }
    }

    #[test]
    fn load_if_then_lookup() {
        let mut c = Cluster::new(cid(1));
        c.handle_config(&stream::load_if(pkt(3, 17), RowAddr::new(42).unwrap())).unwrap();
        assert_eq!(c.forward_incoming(pkt(3, 17)), RowAddr::new(42));
    }

    #[test]
    fn load_oe_sets_emission_mask() {
        let mut c = Cluster::new(cid(1));
        c.handle_config(&stream::load_oe(0b1010)).unwrap();
        c.encoder_mut().latch(OutgoingSpikeVector(0b1111));
        let mut out = Vec::new();
        while let Some(p) = c.encoder().peek() {
            out.push(p);
            c.encoder_mut().pop();
        }
        assert_eq!(out, vec![pkt(1, 1), pkt(1, 3)]);
    }

    #[test]
    fn config_errors_are_atomic() {
        let mut c = Cluster::new(cid(1));
        c.handle_config(&stream::load_if(pkt(0, 0), RowAddr::new(1).unwrap())).unwrap();
        let before = c.clone();

        let cfg = NeuronConfig::new(Potential::from_raw(5), DecaySelector::D125, ResetMode::Hold).unwrap();
        let mut s = stream::load_ni(nid(2), &cfg);
        s.extend_from_slice(&[OPCODE_LOAD_IF, 3, 4, 17, 42, 0]);
        assert_eq!(c.handle_config(&s), Err(ConfigError::FlitCountMismatch { offset: 9, declared: 4, available: 3 }));
        assert_eq!(c.configs, before.configs);
        assert_eq!(c.forwarder, before.forwarder);

        assert_eq!(c.handle_config(&[0x7f, 0, 0]), Err(ConfigError::UnknownOpcode(0x7f, 0)));
        assert!(matches!(
            c.handle_config(&[OPCODE_LOAD_NI, 32, 6, 0, 0, 1, 0, 0, 0]),
            Err(ConfigError::AddressOutOfRange { what: "neuron", .. })
        ));
        assert!(matches!(
            c.handle_config(&[OPCODE_LOAD_IF, 64, 3, 0, 0, 0]),
            Err(ConfigError::AddressOutOfRange { what: "source cluster", .. })
        ));
        assert!(matches!(
            c.handle_config(&[OPCODE_LOAD_IF, 1, 3, 0, 0, 8]),
            Err(ConfigError::AddressOutOfRange { what: "row address", value: 2048 })
        ));
        assert_eq!(
            c.handle_config(&[OPCODE_LOAD_NI, 0, 2, 0, 1]),
            Err(ConfigError::Neuron(NeuronConfigError::TruncatedConfig(2)))
        );
        assert_eq!(
            c.handle_config(&[OPCODE_LOAD_NI, 0]).unwrap_err(),
            ConfigError::FlitCountMismatch { offset: 0, declared: 3, available: 2 }
        );
        assert_eq!(c.forwarder, before.forwarder);
    }

    proptest! {
        #[test]
        fn forwarder_round_trip(entries in prop::collection::btree_map(0u16..2048, 0u16..2048, 1..1024), pick in any::<prop::sample::Index>()) {
            let mut t = ForwarderTable::default();
            for (&src, &a) in &entries {
                t.insert(SpikePacket::unpack(src).unwrap(), RowAddr::new(a).unwrap());
            }
            let (&src, &a) = entries.iter().nth(pick.index(entries.len())).unwrap();
            let p = SpikePacket::unpack(src).unwrap();
            prop_assert_eq!(forward_incoming(&t, p), RowAddr::new(a));
            prop_assert_eq!(forward_incoming(&t, p), forward_incoming(&t, p));
            prop_assert_eq!(t.len(), entries.len());
        }

        #[test]
        fn two_rows_sum_slotwise(a in prop::array::uniform32(-(1i32 << 20)..(1 << 20)), b in prop::array::uniform32(-(1i32 << 20)..(1 << 20))) {
            let mut c = Cluster::new(cid(0));
            let ra = WeightRow(a.map(Potential::from_raw));
            let rb = WeightRow(b.map(Potential::from_raw));
            c.deliver_weights(&ra);
            c.deliver_weights(&rb);
            for i in 0..32 {
                let expected = row_slot(&ra, nid(i as u8)).raw() + row_slot(&rb, nid(i as u8)).raw();
                prop_assert_eq!(c.neurons[i].accumulator.raw(), expected);
            }
        }

        #[test]
        fn exactly_once_emission(bits in any::<u32>(), stall in prop::collection::vec(any::<bool>(), 200)) {
            let mut enc = OutgoingEncoder::new(cid(4));
            enc.latch(OutgoingSpikeVector(bits));
            let mut seen = 0u32;
            for &ready in stall.iter().chain(std::iter::repeat_n(&true, 40)) {
                if let Some(p) = enc.peek() {
                    if ready {
                        let bit = 1u32 << p.src_neuron.get();
                        prop_assert_eq!(seen & bit, 0);
                        seen |= bit;
                        enc.pop();
                    }
                }
            }
            prop_assert!(enc.is_empty());
            prop_assert_eq!(seen, bits);
        }
    }
}
