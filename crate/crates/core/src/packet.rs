//! Identifiers and the 11-bit spike packet.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const NEURONS_PER_CLUSTER: usize = 32;
pub const PHYSICAL_CLUSTERS: usize = 32;
pub const CLUSTERS_PER_GROUP: usize = 4;
pub const CLUSTER_GROUPS: usize = PHYSICAL_CLUSTERS / CLUSTERS_PER_GROUP;
pub const PHYSICAL_NEURONS: usize = PHYSICAL_CLUSTERS * NEURONS_PER_CLUSTER;
/// Size of the 11-bit source-id space.
pub const SOURCE_IDS: usize = 1 << 11;

/// 6-bit cluster address. Ids 0-31 are physical clusters; 32-63 only appear
/// as sources of host-injected (virtual) spikes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ClusterId(u8);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct NeuronId(u8);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind} id {value} out of range")]
pub struct IdRangeError {
    pub kind: &'static str,
    pub value: u32,
}

impl ClusterId {
    pub const fn new(id: u8) -> Option<Self> {
        if id < 64 {
            Some(ClusterId(id))
        } else {
            None
        }
    }

    pub const fn get(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_physical(self) -> bool {
        (self.0 as usize) < PHYSICAL_CLUSTERS
    }

    /// Cluster group (and L1 router) a physical cluster belongs to.
    pub fn group(self) -> usize {
        self.0 as usize / CLUSTERS_PER_GROUP
    }

    /// Resolver port of the cluster inside its group.
    pub fn port(self) -> usize {
        self.0 as usize % CLUSTERS_PER_GROUP
    }
}

impl NeuronId {
    pub const fn new(id: u8) -> Option<Self> {
        if (id as usize) < NEURONS_PER_CLUSTER {
            Some(NeuronId(id))
        } else {
            None
        }
    }

    pub const fn get(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u8> for ClusterId {
    type Error = IdRangeError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        ClusterId::new(v).ok_or(IdRangeError { kind: "cluster", value: v as u32 })
    }
}

impl From<ClusterId> for u8 {
    fn from(c: ClusterId) -> u8 {
        c.0
    }
}

impl TryFrom<u8> for NeuronId {
    type Error = IdRangeError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        NeuronId::new(v).ok_or(IdRangeError { kind: "neuron", value: v as u32 })
    }
}

impl From<NeuronId> for u8 {
    fn from(n: NeuronId) -> u8 {
        n.0
    }
}

/// Spike event naming its source. Packs as `cluster << 5 | neuron`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpikePacket {
    pub src_cluster: ClusterId,
    pub src_neuron: NeuronId,
}

impl SpikePacket {
    pub fn new(src_cluster: ClusterId, src_neuron: NeuronId) -> Self {
        SpikePacket { src_cluster, src_neuron }
    }

    pub fn pack(self) -> u16 {
        ((self.src_cluster.0 as u16) << 5) | self.src_neuron.0 as u16
    }

    pub fn unpack(bits: u16) -> Result<Self, IdRangeError> {
        if bits as usize >= SOURCE_IDS {
            return Err(IdRangeError { kind: "packet", value: bits as u32 });
        }
        Ok(SpikePacket { src_cluster: ClusterId((bits >> 5) as u8), src_neuron: NeuronId((bits & 0x1f) as u8) })
    }

    /// Source id as a table index.
    pub fn source(self) -> usize {
        self.pack() as usize
    }
}

impl From<(ClusterId, NeuronId)> for SpikePacket {
    fn from((c, n): (ClusterId, NeuronId)) -> Self {
        SpikePacket::new(c, n)
    }
}

impl fmt::Display for SpikePacket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.src_cluster.0, self.src_neuron.0)
    }
}
