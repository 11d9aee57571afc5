//! Buffer-free configuration path.
//!
//! Every router traversal is a three-register pipeline. A flit advances one
//! register per cycle when the next register is free (valid/ready), so a
//! serial stream from one source keeps its spacing and each flit takes exactly
//! three cycles per hop. Nothing is ever dropped.

use std::collections::{HashMap, VecDeque};

use super::{l1_of, NocError, RouterId, TraceEvent, TraceRecord, CONTROL_CYCLES_PER_HOP, L1_ROUTERS};
use crate::packet::{ClusterId, PHYSICAL_CLUSTERS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ControlSource {
    /// Accelerator controller, attached to the L2 router.
    Host,
    Cluster(ClusterId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControlDest {
    Cluster(ClusterId),
    /// Weight memory of a cluster group, reached through its L1 router.
    MemoryGroup(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControlFlit {
    pub dest: ControlDest,
    pub payload: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlRoute {
    pub path: Vec<RouterId>,
    pub latency_cycles: u64,
}

impl ControlRoute {
    pub fn hops(&self) -> usize {
        self.path.len()
    }
}

fn dest_l1(dest: ControlDest) -> Result<u8, NocError> {
    match dest {
        ControlDest::Cluster(c) if c.index() < PHYSICAL_CLUSTERS => Ok(l1_of(c)),
        ControlDest::Cluster(c) => Err(NocError::UnknownDestination(c.get())),
        ControlDest::MemoryGroup(g) if (g as usize) < L1_ROUTERS => Ok(g),
        ControlDest::MemoryGroup(g) => Err(NocError::UnknownMemoryGroup(g)),
    }
}

/// Router sequence and latency from `src` to `dest`.
pub fn route_control(src: ControlSource, dest: ControlDest) -> Result<ControlRoute, NocError> {
    let dst = dest_l1(dest)?;
    let path = match src {
        ControlSource::Host => vec![RouterId::L2, RouterId::L1(dst)],
        ControlSource::Cluster(c) if c.index() < PHYSICAL_CLUSTERS => {
            let s = l1_of(c);
            if s == dst {
                vec![RouterId::L1(s)]
            } else {
                vec![RouterId::L1(s), RouterId::L2, RouterId::L1(dst)]
            }
        }
        ControlSource::Cluster(c) => return Err(NocError::UnknownSource(c.get())),
    };
    let latency_cycles = CONTROL_CYCLES_PER_HOP * path.len() as u64;
    Ok(ControlRoute { path, latency_cycles })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delivery {
    /// Position of the flit in the transmitted stream.
    pub index: usize,
    pub dest: ControlDest,
    pub payload: u8,
    pub injected: u64,
    pub delivered: u64,
    pub hops: usize,
}

impl Delivery {
    pub fn latency(&self) -> u64 {
        self.delivered - self.injected
    }
}

struct InFlight {
    index: usize,
    path: Vec<RouterId>,
    hop: usize,
    stage: u64,
    injected: u64,
}

/// Cycle-stepped model of the control path. The cycle counter keeps running
/// across transmissions.
#[derive(Debug, Default)]
pub struct ControlPath {
    cycle: u64,
    trace: Option<Vec<TraceRecord>>,
}

impl ControlPath {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_trace() -> Self {
        ControlPath { cycle: 0, trace: Some(Vec::new()) }
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    fn record(&mut self, router: RouterId, port: u8, event: TraceEvent, payload: u8) {
        let cycle = self.cycle;
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRecord { cycle, router, port, event, payload: payload as u16 });
        }
    }

    /// Sends a stream from one source, one flit offered per cycle, and runs
    /// until every flit is delivered. Deliveries come back in arrival order.
    pub fn transmit(&mut self, src: ControlSource, flits: &[ControlFlit]) -> Result<Vec<Delivery>, NocError> {
        let routes = flits.iter().map(|f| route_control(src, f.dest)).collect::<Result<Vec<_>, _>>()?;
        let mut waiting: VecDeque<usize> = (0..flits.len()).collect();
        let mut in_flight: Vec<InFlight> = Vec::new();
        let mut occupied: HashMap<(RouterId, u64), usize> = HashMap::new();
        let mut out = Vec::with_capacity(flits.len());

        while !waiting.is_empty() || !in_flight.is_empty() {
            // Oldest flits move first so a register freed this cycle can be refilled.
            let mut still = Vec::with_capacity(in_flight.len());
            for mut f in in_flight.drain(..) {
                let here = (f.path[f.hop], f.stage);
                let next = if f.stage + 1 < CONTROL_CYCLES_PER_HOP {
                    Some((f.path[f.hop], f.stage + 1, f.hop))
                } else if f.hop + 1 < f.path.len() {
                    Some((f.path[f.hop + 1], 0, f.hop + 1))
                } else {
                    None
                };
                match next {
                    None => {
                        occupied.remove(&here);
                        let flit = flits[f.index];
                        self.record(f.path[f.hop], 0, TraceEvent::Deliver, flit.payload);
                        out.push(Delivery {
                            index: f.index,
                            dest: flit.dest,
                            payload: flit.payload,
                            injected: f.injected,
                            delivered: self.cycle,
                            hops: f.path.len(),
                        });
                    }
                    Some((router, stage, hop)) if !occupied.contains_key(&(router, stage)) => {
                        occupied.remove(&here);
                        occupied.insert((router, stage), f.index);
                        if stage == 0 {
                            self.record(router, hop as u8, TraceEvent::Arrive, flits[f.index].payload);
                        }
                        f.hop = hop;
                        f.stage = stage;
                        still.push(f);
                    }
                    Some(_) => still.push(f),
                }
            }
            in_flight = still;

            if let Some(&index) = waiting.front() {
                let first = routes[index].path[0];
                if let std::collections::hash_map::Entry::Vacant(e) = occupied.entry((first, 0)) {
                    waiting.pop_front();
                    e.insert(index);
                    self.record(first, 0, TraceEvent::Arrive, flits[index].payload);
                    in_flight.push(InFlight {
                        index,
                        path: routes[index].path.clone(),
                        hop: 0,
                        stage: 0,
                        injected: self.cycle,
                    });
                }
            }
            self.cycle += 1;
        }
        Ok(out)
    }
}
