//! Two-level tree network: 8 L1 routers with 4 clusters each under one L2 router.
//!
//! The control path is unbuffered and address-routed ([`control`]); the spike
//! path has a FIFO at every router input and static multicast tables ([`spike`]).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::{ClusterId, CLUSTERS_PER_GROUP, CLUSTER_GROUPS, PHYSICAL_CLUSTERS};

pub mod control;
pub mod spike;

pub use control::{route_control, ControlDest, ControlFlit, ControlPath, ControlRoute, ControlSource, Delivery};
pub use spike::{MulticastTable, SpikeNetConfig, SpikeNetwork};

pub const L1_ROUTERS: usize = CLUSTER_GROUPS;
pub const CLUSTERS_PER_L1: usize = CLUSTERS_PER_GROUP;
/// Control path latency per router traversal.
pub const CONTROL_CYCLES_PER_HOP: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RouterId {
    L1(u8),
    L2,
}

impl fmt::Display for RouterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouterId::L1(r) => write!(f, "L1.{r}"),
            RouterId::L2 => write!(f, "L2"),
        }
    }
}

/// L1 router a physical cluster hangs off.
pub fn l1_of(cluster: ClusterId) -> u8 {
    (cluster.index() / CLUSTERS_PER_L1) as u8
}

/// Bit mask of the clusters served by one L1 router.
pub fn group_mask(l1: usize) -> u32 {
    0xF << (l1 * CLUSTERS_PER_L1)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NocError {
    #[error("destination cluster {0} does not exist (fabric has {PHYSICAL_CLUSTERS})")]
    UnknownDestination(u8),
    #[error("memory group {0} does not exist")]
    UnknownMemoryGroup(u8),
    #[error("source cluster {0} is not a physical cluster")]
    UnknownSource(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceEvent {
    /// Entered a router pipeline stage or input FIFO.
    Arrive,
    /// Left a router through an output port.
    Forward,
    /// Reached its endpoint (cluster ingress buffer or config sink).
    Deliver,
    /// Dropped at a router because no destination needs it.
    Sink,
}

/// One per-cycle trace line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub cycle: u64,
    pub router: RouterId,
    pub port: u8,
    pub event: TraceEvent,
    /// Packed spike id on the spike path, flit byte on the control path.
    pub payload: u16,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let event = match self.event {
            TraceEvent::Arrive => "arrive",
            TraceEvent::Forward => "forward",
            TraceEvent::Deliver => "deliver",
            TraceEvent::Sink => "sink",
        };
        write!(
            f,
            "cycle={} router={} port={} event={} packet={:#05x}",
            self.cycle, self.router, self.port, event, self.payload
        )
    }
}
