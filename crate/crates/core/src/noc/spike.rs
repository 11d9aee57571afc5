//! FIFO-buffered spike path.
//!
//! Every router input port owns a FIFO, and every cluster has an ingress FIFO
//! fed by its L1 router. A packet is replicated at the lowest router that
//! serves all of its destinations: L1 for destinations in the source's own
//! group, L2 for the rest. Links are pipelined (`pipeline_depth` cycles) and
//! flow control is credit based, so a sender only transmits when the receiving
//! FIFO has room for everything already in flight to it. Nothing is dropped.
//!
//! A cycle is split into phases driven by the sequencer: [`SpikeNetwork::begin_cycle`]
//! lands link arrivals and snapshots credits, producers inject, [`SpikeNetwork::route`]
//! arbitrates all routers against the start-of-cycle heads, consumers pop the
//! ingress FIFOs, and [`SpikeNetwork::end_cycle`] advances the clock.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{group_mask, RouterId, TraceEvent, TraceRecord, CLUSTERS_PER_L1, L1_ROUTERS};
use crate::packet::{ClusterId, SpikePacket, PHYSICAL_CLUSTERS, SOURCE_IDS};

const L1_INPUTS: usize = CLUSTERS_PER_L1 + 1;
const L1_FROM_L2: usize = CLUSTERS_PER_L1;
const L1_UP: usize = CLUSTERS_PER_L1;
const L2_INPUTS: usize = L1_ROUTERS + 1;
const L2_HOST: usize = L1_ROUTERS;
const L2_BASE: usize = L1_ROUTERS * L1_INPUTS;
const INGRESS_BASE: usize = L2_BASE + L2_INPUTS;
const FIFO_COUNT: usize = INGRESS_BASE + PHYSICAL_CLUSTERS;

fn l1_in(r: usize, k: usize) -> usize {
    r * L1_INPUTS + k
}

fn l2_in(i: usize) -> usize {
    L2_BASE + i
}

fn ingress(c: usize) -> usize {
    INGRESS_BASE + c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeNetConfig {
    /// Entries per FIFO, at least 1.
    pub fifo_capacity: usize,
    /// Cycles a packet spends on a link between two FIFOs, at least 1.
    pub pipeline_depth: u64,
}

impl Default for SpikeNetConfig {
    fn default() -> Self {
        SpikeNetConfig { fifo_capacity: 16, pipeline_depth: 1 }
    }
}

impl SpikeNetConfig {
    pub fn with_capacity(fifo_capacity: usize) -> Self {
        SpikeNetConfig { fifo_capacity, ..Self::default() }
    }
}

/// Static source id → destination cluster set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MulticastTable {
    dests: Vec<u32>,
}

impl Default for MulticastTable {
    fn default() -> Self {
        MulticastTable { dests: vec![0; SOURCE_IDS] }
    }
}

impl MulticastTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, source: usize) -> u32 {
        self.dests[source]
    }

    pub fn set(&mut self, source: usize, mask: u32) {
        self.dests[source] = mask;
    }

    pub fn add(&mut self, source: usize, dest: ClusterId) {
        debug_assert!(dest.is_physical());
        self.dests[source] |= 1 << dest.index();
    }

    /// Sources with at least one destination, ascending.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.dests.iter().enumerate().filter(|(_, m)| **m != 0).map(|(s, m)| (s, *m))
    }

    pub fn is_empty(&self) -> bool {
        self.dests.iter().all(|m| *m == 0)
    }
}

/// Routers a packet from `src` touches on its way to `dests`.
/// `None` is a host-injected packet, which enters at L2.
pub fn route_spike(src: Option<ClusterId>, dests: u32) -> Vec<RouterId> {
    let mut touched = Vec::new();
    let dest_groups: Vec<usize> = (0..L1_ROUTERS).filter(|g| dests & group_mask(*g) != 0).collect();
    match src {
        Some(c) => {
            let home = c.group();
            if !dest_groups.is_empty() {
                touched.push(RouterId::L1(home as u8));
            }
            if dest_groups.iter().any(|g| *g != home) {
                touched.push(RouterId::L2);
            }
            touched.extend(dest_groups.iter().filter(|g| **g != home).map(|g| RouterId::L1(*g as u8)));
        }
        None => {
            touched.push(RouterId::L2);
            touched.extend(dest_groups.iter().map(|g| RouterId::L1(*g as u8)));
        }
    }
    touched.sort();
    touched
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeNetStats {
    pub injected: u64,
    /// Copies that reached a cluster ingress FIFO.
    pub delivered: u64,
    pub sunk: u64,
    pub l2_forwards: u64,
    /// Output-port grants refused for lack of downstream credit.
    pub stalls: u64,
}

#[derive(Clone, Debug, Default)]
struct Fifo {
    queue: VecDeque<(u16, u32)>,
    link: VecDeque<(u64, u16)>,
    credit: usize,
}

#[derive(Clone, Debug)]
pub struct SpikeNetwork {
    config: SpikeNetConfig,
    table: MulticastTable,
    fifos: Vec<Fifo>,
    rr_l1: Vec<[usize; L1_INPUTS]>,
    rr_l2: [usize; L1_ROUTERS],
    cycle: u64,
    stats: SpikeNetStats,
    trace: Option<Vec<TraceRecord>>,
}

impl SpikeNetwork {
    pub fn new(config: SpikeNetConfig, table: MulticastTable) -> Self {
        assert!(config.fifo_capacity >= 1, "spike FIFO capacity must be at least 1");
        assert!(config.pipeline_depth >= 1, "spike link depth must be at least 1");
        SpikeNetwork {
            config,
            table,
            fifos: vec![Fifo::default(); FIFO_COUNT],
            rr_l1: vec![[0; L1_INPUTS]; L1_ROUTERS],
            rr_l2: [0; L1_ROUTERS],
            cycle: 0,
            stats: SpikeNetStats::default(),
            trace: None,
        }
    }

    pub fn config(&self) -> SpikeNetConfig {
        self.config
    }

    pub fn table(&self) -> &MulticastTable {
        &self.table
    }

    /// Replaces the multicast table. Only valid while drained.
    pub fn set_table(&mut self, table: MulticastTable) {
        debug_assert!(self.is_drained());
        self.table = table;
    }

    pub fn set_trace(&mut self, on: bool) {
        self.trace = if on { Some(Vec::new()) } else { None };
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn stats(&self) -> SpikeNetStats {
        self.stats
    }

    /// True when no FIFO holds a packet and no link carries one.
    pub fn is_drained(&self) -> bool {
        self.fifos.iter().all(|f| f.queue.is_empty() && f.link.is_empty())
    }

    /// Empties every buffer and resets the clock and counters.
    pub fn reset(&mut self) {
        let (config, table, trace_on) = (self.config, std::mem::take(&mut self.table), self.trace.is_some());
        *self = SpikeNetwork::new(config, table);
        self.set_trace(trace_on);
    }

    fn record(&mut self, router: RouterId, port: usize, event: TraceEvent, payload: u16) {
        let cycle = self.cycle;
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRecord { cycle, router, port: port as u8, event, payload });
        }
    }

    fn pending_for(&self, fifo: usize, packet: u16) -> u32 {
        let dests = self.table.get(packet as usize);
        if fifo < L2_BASE {
            let (r, k) = (fifo / L1_INPUTS, fifo % L1_INPUTS);
            let local = (dests >> (r * CLUSTERS_PER_L1)) & 0xF;
            let remote = dests & !group_mask(r) != 0;
            if k != L1_FROM_L2 && remote {
                local | 1 << L1_UP
            } else {
                local
            }
        } else {
            let i = fifo - L2_BASE;
            (0..L1_ROUTERS).filter(|g| *g != i && dests & group_mask(*g) != 0).fold(0, |acc, g| acc | 1 << g)
        }
    }

    fn owner(fifo: usize) -> (RouterId, usize) {
        if fifo < L2_BASE {
            (RouterId::L1((fifo / L1_INPUTS) as u8), fifo % L1_INPUTS)
        } else if fifo < INGRESS_BASE {
            (RouterId::L2, fifo - L2_BASE)
        } else {
            let c = fifo - INGRESS_BASE;
            (RouterId::L1((c / CLUSTERS_PER_L1) as u8), c % CLUSTERS_PER_L1)
        }
    }

    /// Lands link arrivals and snapshots the free space of every FIFO.
    pub fn begin_cycle(&mut self) {
        for f in 0..FIFO_COUNT {
            while let Some(&(arrive, packet)) = self.fifos[f].link.front() {
                if arrive > self.cycle {
                    break;
                }
                self.fifos[f].link.pop_front();
                let (router, port) = Self::owner(f);
                if f >= INGRESS_BASE {
                    self.stats.delivered += 1;
                    self.record(router, port, TraceEvent::Deliver, packet);
                    self.fifos[f].queue.push_back((packet, 0));
                    continue;
                }
                let pending = self.pending_for(f, packet);
                if pending == 0 {
                    self.stats.sunk += 1;
                    self.record(router, port, TraceEvent::Sink, packet);
                } else {
                    self.record(router, port, TraceEvent::Arrive, packet);
                    self.fifos[f].queue.push_back((packet, pending));
                }
            }
            let fifo = &mut self.fifos[f];
            fifo.credit = self.config.fifo_capacity - fifo.queue.len() - fifo.link.len();
        }
    }

    fn send(&mut self, fifo: usize, packet: u16) {
        let f = &mut self.fifos[fifo];
        debug_assert!(f.credit > 0);
        f.credit -= 1;
        f.link.push_back((self.cycle + self.config.pipeline_depth, packet));
    }

    /// Whether the outgoing encoder of `cluster` may transmit this cycle.
    pub fn can_inject(&self, cluster: ClusterId) -> bool {
        let c = cluster.index();
        self.fifos[l1_in(c / CLUSTERS_PER_L1, c % CLUSTERS_PER_L1)].credit > 0
    }

    /// Transmits a packet from a cluster's outgoing encoder. Returns false on
    /// back-pressure.
    pub fn inject(&mut self, cluster: ClusterId, packet: SpikePacket) -> bool {
        debug_assert!(cluster.is_physical());
        if !self.can_inject(cluster) {
            return false;
        }
        let c = cluster.index();
        self.send(l1_in(c / CLUSTERS_PER_L1, c % CLUSTERS_PER_L1), packet.pack());
        self.stats.injected += 1;
        true
    }

    pub fn can_inject_host(&self) -> bool {
        self.fifos[l2_in(L2_HOST)].credit > 0
    }

    /// Transmits a host (input) spike into the L2 host port.
    pub fn inject_host(&mut self, packet: SpikePacket) -> bool {
        if !self.can_inject_host() {
            return false;
        }
        self.send(l2_in(L2_HOST), packet.pack());
        self.stats.injected += 1;
        true
    }

    /// One arbitration round at every router.
    pub fn route(&mut self) {
        for r in 0..L1_ROUTERS {
            self.route_l1(r);
        }
        self.route_l2();
    }

    fn route_l1(&mut self, r: usize) {
        let heads: [Option<(u16, u32)>; L1_INPUTS] =
            std::array::from_fn(|k| self.fifos[l1_in(r, k)].queue.front().copied());
        let mut cleared = [0u32; L1_INPUTS];
        for port in 0..=L1_UP {
            let start = self.rr_l1[r][port];
            let winner = (0..L1_INPUTS)
                .map(|i| (start + i) % L1_INPUTS)
                .find(|k| heads[*k].is_some_and(|(_, p)| p & (1 << port) != 0));
            let Some(k) = winner else { continue };
            let target = if port == L1_UP { l2_in(r) } else { ingress(r * CLUSTERS_PER_L1 + port) };
            if self.fifos[target].credit == 0 {
                self.stats.stalls += 1;
                continue;
            }
            let packet = heads[k].unwrap().0;
            self.send(target, packet);
            self.record(RouterId::L1(r as u8), port, TraceEvent::Forward, packet);
            cleared[k] |= 1 << port;
            self.rr_l1[r][port] = (k + 1) % L1_INPUTS;
        }
        for (k, bits) in cleared.iter().enumerate() {
            if *bits == 0 {
                continue;
            }
            let q = &mut self.fifos[l1_in(r, k)].queue;
            let head = q.front_mut().unwrap();
            head.1 &= !bits;
            if head.1 == 0 {
                q.pop_front();
            }
        }
    }

    fn route_l2(&mut self) {
        let heads: [Option<(u16, u32)>; L2_INPUTS] =
            std::array::from_fn(|i| self.fifos[l2_in(i)].queue.front().copied());
        let mut cleared = [0u32; L2_INPUTS];
        for port in 0..L1_ROUTERS {
            let start = self.rr_l2[port];
            let winner = (0..L2_INPUTS)
                .map(|i| (start + i) % L2_INPUTS)
                .find(|i| heads[*i].is_some_and(|(_, p)| p & (1 << port) != 0));
            let Some(i) = winner else { continue };
            let target = l1_in(port, L1_FROM_L2);
            if self.fifos[target].credit == 0 {
                self.stats.stalls += 1;
                continue;
            }
            let packet = heads[i].unwrap().0;
            self.send(target, packet);
            self.stats.l2_forwards += 1;
            self.record(RouterId::L2, port, TraceEvent::Forward, packet);
            cleared[i] |= 1 << port;
            self.rr_l2[port] = (i + 1) % L2_INPUTS;
        }
        for (i, bits) in cleared.iter().enumerate() {
            if *bits == 0 {
                continue;
            }
            let q = &mut self.fifos[l2_in(i)].queue;
            let head = q.front_mut().unwrap();
            head.1 &= !bits;
            if head.1 == 0 {
                q.pop_front();
            }
        }
    }

    /// Head of a cluster's ingress FIFO.
    pub fn ingress_head(&self, cluster: ClusterId) -> Option<SpikePacket> {
        let (bits, _) = *self.fifos[ingress(cluster.index())].queue.front()?;
        Some(SpikePacket::unpack(bits).expect("packets in flight are 11-bit"))
    }

    pub fn pop_ingress(&mut self, cluster: ClusterId) -> Option<SpikePacket> {
        let (bits, _) = self.fifos[ingress(cluster.index())].queue.pop_front()?;
        Some(SpikePacket::unpack(bits).expect("packets in flight are 11-bit"))
    }

    /// Occupancy of a cluster's ingress FIFO, counting packets on the link.
    pub fn ingress_occupancy(&self, cluster: ClusterId) -> usize {
        let f = &self.fifos[ingress(cluster.index())];
        f.queue.len() + f.link.len()
    }

    pub fn end_cycle(&mut self) {
        self.cycle += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::NeuronId;

    fn cid(c: u8) -> ClusterId {
        ClusterId::new(c).unwrap()
    }

    fn pkt(c: u8, n: u8) -> SpikePacket {
        SpikePacket::new(cid(c), NeuronId::new(n).unwrap())
    }

    /// Runs the network with an always-ready consumer until drained, returning
    /// per-cluster delivered packets and the cycle count.
    fn run(
        net: &mut SpikeNetwork,
        from_clusters: Vec<(ClusterId, SpikePacket)>,
        from_host: Vec<SpikePacket>,
    ) -> (Vec<Vec<SpikePacket>>, u64) {
        let mut got = vec![Vec::new(); PHYSICAL_CLUSTERS];
        let mut outbox: Vec<VecDeque<SpikePacket>> = vec![VecDeque::new(); PHYSICAL_CLUSTERS];
        for (c, p) in from_clusters {
            outbox[c.index()].push_back(p);
        }
        let mut host: VecDeque<SpikePacket> = from_host.into();
        let start = net.cycle();
        for _ in 0..100_000 {
            net.begin_cycle();
            for c in 0..PHYSICAL_CLUSTERS {
                if let Some(p) = outbox[c].front().copied() {
                    if net.inject(cid(c as u8), p) {
                        outbox[c].pop_front();
                    }
                }
            }
            if let Some(p) = host.front().copied() {
                if net.inject_host(p) {
                    host.pop_front();
                }
            }
            net.route();
            for c in 0..PHYSICAL_CLUSTERS as u8 {
                if let Some(p) = net.pop_ingress(cid(c)) {
                    got[c as usize].push(p);
                }
            }
            net.end_cycle();
            if outbox.iter().all(VecDeque::is_empty) && host.is_empty() && net.is_drained() {
                return (got, net.cycle() - start);
            }
        }
        panic!("spike network did not drain");
    }

    #[test]
    fn local_destination_stays_in_l1() {
        let mut table = MulticastTable::new();
        table.add(pkt(1, 0).source(), cid(2));
        let mut net = SpikeNetwork::new(SpikeNetConfig::default(), table);
        net.set_trace(true);
        let (got, _) = run(&mut net, vec![(cid(1), pkt(1, 0))], vec![]);
        assert_eq!(got[2], vec![pkt(1, 0)]);
        assert!(net.trace().iter().all(|r| r.router == RouterId::L1(0)));
        assert_eq!(net.stats().l2_forwards, 0);
        assert_eq!(route_spike(Some(cid(1)), 1 << 2), vec![RouterId::L1(0)]);
    }

    #[test]
    fn remote_destination_goes_through_l2() {
        let mut table = MulticastTable::new();
        table.add(pkt(1, 3).source(), cid(5));
        let mut net = SpikeNetwork::new(SpikeNetConfig::default(), table);
        net.set_trace(true);
        let (got, cycles) = run(&mut net, vec![(cid(1), pkt(1, 3))], vec![]);
        assert_eq!(got[5], vec![pkt(1, 3)]);
        let forwards: Vec<RouterId> =
            net.trace().iter().filter(|r| r.event == TraceEvent::Forward).map(|r| r.router).collect();
        assert_eq!(forwards, vec![RouterId::L1(0), RouterId::L2, RouterId::L1(1)]);
        assert_eq!(route_spike(Some(cid(1)), 1 << 5), vec![RouterId::L1(0), RouterId::L1(1), RouterId::L2]);
        // inject, land at L1, L2, L1 and ingress: four link traversals.
        assert_eq!(cycles, 5);
    }

    #[test]
    fn multicast_copies_exactly_once() {
        let mut table = MulticastTable::new();
        let dests = (1 << 0) | (1 << 3) | (1 << 9) | (1 << 31);
        table.set(pkt(2, 7).source(), dests);
        table.set(pkt(40, 1).source(), dests);
        let mut net = SpikeNetwork::new(SpikeNetConfig::with_capacity(1), table);
        let (got, _) = run(&mut net, vec![(cid(2), pkt(2, 7))], vec![pkt(40, 1)]);
        for c in 0..PHYSICAL_CLUSTERS {
            let expect = if dests & (1 << c) != 0 { 2 } else { 0 };
            assert_eq!(got[c].len(), expect, "cluster {c}");
        }
        // One L2 copy per remote group for the cluster packet, one per group for the host packet.
        assert_eq!(net.stats().l2_forwards, 2 + 3);
    }

    #[test]
    fn burst_to_one_cluster_under_small_fifos() {
        let mut table = MulticastTable::new();
        let mut sends = Vec::new();
        for n in 0..32u8 {
            table.add(pkt(12, n).source(), cid(0));
            sends.push((cid(12), pkt(12, n)));
        }
        let mut net = SpikeNetwork::new(SpikeNetConfig::with_capacity(4), table);
        let (got, cycles) = run(&mut net, sends, vec![]);
        let expect: Vec<SpikePacket> = (0..32).map(|n| pkt(12, n)).collect();
        assert_eq!(got[0], expect);
        assert!(cycles >= 32);
        assert_eq!(net.stats().injected, 32);
        assert_eq!(net.stats().delivered, 32);
    }

    #[test]
    fn unrouted_packet_is_sunk() {
        let mut net = SpikeNetwork::new(SpikeNetConfig::default(), MulticastTable::new());
        net.set_trace(true);
        let (got, _) = run(&mut net, vec![], vec![pkt(33, 0)]);
        assert!(got.iter().all(Vec::is_empty));
        assert_eq!(net.stats().sunk, 1);
        assert_eq!(net.trace().last().unwrap().event, TraceEvent::Sink);
    }

    #[test]
    fn idle_network_is_drained() {
        let mut net = SpikeNetwork::new(SpikeNetConfig::default(), MulticastTable::new());
        assert!(net.is_drained());
        net.begin_cycle();
        assert!(net.inject_host(pkt(33, 0)));
        assert!(!net.is_drained());
    }
}
