//! Cluster-group weight memory behind the four-port weight resolver.
//!
//! One instance serves the four clusters of a group. In inference mode each
//! cluster pushes row addresses into its own depth-8 queue; every cycle the
//! resolver grants the lowest-indexed non-empty queue and the row is read
//! combinationally, appearing on that port's lane in the same cycle. In
//! initialization mode the memory is written with the byte-serial protocol
//! `addr_lo, addr_hi, count, data[count]` and reads are disabled.

use std::collections::VecDeque;

use thiserror::Error;

use crate::fixed::Potential;
use crate::packet::NEURONS_PER_CLUSTER;

pub const ROW_BYTES: usize = NEURONS_PER_CLUSTER * 4;
pub const MEMORY_ROWS: usize = 2048;
pub const QUEUE_DEPTH: usize = 8;
pub const RESOLVER_PORTS: usize = 4;

/// 32 per-slot weights; slot i feeds local neuron i.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct WeightRow(pub [Potential; NEURONS_PER_CLUSTER]);

impl WeightRow {
    pub const ZERO: WeightRow = WeightRow([Potential::ZERO; NEURONS_PER_CLUSTER]);

    /// Byte 0 is the least-significant byte of slot 0.
    pub fn to_bytes(&self) -> [u8; ROW_BYTES] {
        let mut out = [0u8; ROW_BYTES];
        for (chunk, w) in out.chunks_exact_mut(4).zip(self.0.iter()) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8; ROW_BYTES]) -> Self {
        let mut row = WeightRow::ZERO;
        for (slot, chunk) in row.0.iter_mut().zip(bytes.chunks_exact(4)) {
            *slot = Potential::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        row
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|w| w.is_zero())
    }

    pub fn nonzero_slots(&self) -> usize {
        self.0.iter().filter(|w| !w.is_zero()).count()
    }

    /// Wire record for this row; trailing zero bytes are left to the zero padding.
    pub fn encode_record(&self, addr: RowAddr) -> Vec<u8> {
        let bytes = self.to_bytes();
        let count = bytes.iter().rposition(|&b| b != 0).map_or(0, |i| i + 1);
        let mut out = Vec::with_capacity(3 + count);
        out.push((addr.0 & 0xff) as u8);
        out.push((addr.0 >> 8) as u8);
        out.push(count as u8);
        out.extend_from_slice(&bytes[..count]);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowAddr(u16);

impl RowAddr {
    pub fn new(addr: u16) -> Option<Self> {
        ((addr as usize) < MEMORY_ROWS).then_some(RowAddr(addr))
    }

    pub fn get(self) -> u16 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemoryMode {
    Initialization,
    Inference,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WeightStoreError {
    #[error("row address {0} out of range (max {max})", max = MEMORY_ROWS - 1)]
    AddressOutOfRange(u16),
    #[error("data byte count {0} exceeds the {ROW_BYTES}-byte row")]
    CountOutOfRange(u8),
    #[error("init stream ended inside a record ({0} bytes missing)")]
    TruncatedStream(usize),
    #[error("request refused: memory is in initialization mode")]
    RefusedInInitMode,
    #[error("write refused: memory is in inference mode")]
    RefusedInInferenceMode,
    #[error("resolver port {0} does not exist")]
    NoSuchPort(usize),
    #[error("dense image must be {expected} bytes, got {got}")]
    DenseImageSize { expected: usize, got: usize },
}

#[derive(Clone, Debug)]
pub struct WeightMemory {
    rows: Vec<WeightRow>,
    mode: MemoryMode,
}

impl Default for WeightMemory {
    fn default() -> Self {
        WeightMemory { rows: vec![WeightRow::ZERO; MEMORY_ROWS], mode: MemoryMode::Initialization }
    }
}

impl WeightMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mode(&self) -> MemoryMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: MemoryMode) {
        self.mode = mode;
    }

    /// Clears every row and returns to initialization mode.
    pub fn reset_clear(&mut self) {
        self.rows.iter_mut().for_each(|r| *r = WeightRow::ZERO);
        self.mode = MemoryMode::Initialization;
    }

    pub fn read(&self, addr: RowAddr) -> Result<&WeightRow, WeightStoreError> {
        match self.mode {
            MemoryMode::Inference => Ok(&self.rows[addr.0 as usize]),
            MemoryMode::Initialization => Err(WeightStoreError::RefusedInInitMode),
        }
    }

    /// Reads a row regardless of mode, for inspection and dumps.
    pub fn peek(&self, addr: RowAddr) -> &WeightRow {
        &self.rows[addr.0 as usize]
    }

    /// Runs a whole byte stream through the init protocol. Rows are committed
    /// as their last byte arrives, so an error leaves earlier records written;
    /// callers wanting atomicity apply streams to a copy.
    pub fn init_write(&mut self, bytes: &[u8]) -> Result<usize, WeightStoreError> {
        if self.mode != MemoryMode::Initialization {
            return Err(WeightStoreError::RefusedInInferenceMode);
        }
        let mut writer = InitWriter::default();
        let mut committed = 0;
        for &b in bytes {
            if let Some((addr, row)) = writer.push(b)? {
                self.rows[addr.0 as usize] = row;
                committed += 1;
            }
        }
        writer.finish()?;
        Ok(committed)
    }

    /// Raw little-endian rows, 128 bytes each, all 2048 rows.
    pub fn dump_dense(&self) -> Vec<u8> {
        self.rows.iter().flat_map(|r| r.to_bytes()).collect()
    }

    pub fn load_dense(&mut self, image: &[u8]) -> Result<(), WeightStoreError> {
        if image.len() != MEMORY_ROWS * ROW_BYTES {
            return Err(WeightStoreError::DenseImageSize { expected: MEMORY_ROWS * ROW_BYTES, got: image.len() });
        }
        for (row, chunk) in self.rows.iter_mut().zip(image.chunks_exact(ROW_BYTES)) {
            *row = WeightRow::from_bytes(chunk.try_into().expect("exact chunk"));
        }
        Ok(())
    }

    /// Sparse dump in wire-record form, ascending address, all-zero rows omitted.
    pub fn dump_sparse(&self) -> Vec<u8> {
        self.nonzero_rows().flat_map(|(addr, row)| row.encode_record(addr)).collect()
    }

    pub fn nonzero_rows(&self) -> impl Iterator<Item = (RowAddr, &WeightRow)> {
        self.rows.iter().enumerate().filter(|(_, r)| !r.is_zero()).map(|(i, r)| (RowAddr(i as u16), r))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
enum InitState {
    #[default]
    AddrLo,
    AddrHi {
        lo: u8,
    },
    Count {
        addr: u16,
    },
    Data {
        addr: u16,
        count: usize,
        filled: usize,
    },
}

/// Byte-at-a-time receiver for the initialization protocol.
#[derive(Clone, Debug, Default)]
pub struct InitWriter {
    state: InitState,
    buf: Vec<u8>,
}

impl InitWriter {
    /// Consumes one byte; yields the row when its last data byte arrives.
    pub fn push(&mut self, byte: u8) -> Result<Option<(RowAddr, WeightRow)>, WeightStoreError> {
        match self.state {
            InitState::AddrLo => {
                self.state = InitState::AddrHi { lo: byte };
                Ok(None)
            }
            InitState::AddrHi { lo } => {
                let addr = (byte as u16) << 8 | lo as u16;
                if addr as usize >= MEMORY_ROWS {
                    self.state = InitState::AddrLo;
                    return Err(WeightStoreError::AddressOutOfRange(addr));
                }
                self.state = InitState::Count { addr };
                Ok(None)
            }
            InitState::Count { addr } => {
                if byte as usize > ROW_BYTES {
                    self.state = InitState::AddrLo;
                    return Err(WeightStoreError::CountOutOfRange(byte));
                }
                if byte == 0 {
                    self.state = InitState::AddrLo;
                    return Ok(Some((RowAddr(addr), WeightRow::ZERO)));
                }
                self.buf.clear();
                self.state = InitState::Data { addr, count: byte as usize, filled: 0 };
                Ok(None)
            }
            InitState::Data { addr, count, filled } => {
                self.buf.push(byte);
                if filled + 1 == count {
                    let mut bytes = [0u8; ROW_BYTES];
                    bytes[..count].copy_from_slice(&self.buf);
                    self.state = InitState::AddrLo;
                    Ok(Some((RowAddr(addr), WeightRow::from_bytes(&bytes))))
                } else {
                    self.state = InitState::Data { addr, count, filled: filled + 1 };
                    Ok(None)
                }
            }
        }
    }

    /// Errors if the stream stopped in the middle of a record.
    pub fn finish(&self) -> Result<(), WeightStoreError> {
        let missing = match self.state {
            InitState::AddrLo => return Ok(()),
            InitState::AddrHi { .. } => 2,
            InitState::Count { .. } => 1,
            InitState::Data { count, filled, .. } => count - filled,
        };
        Err(WeightStoreError::TruncatedStream(missing))
    }
}

/// Splits a well-formed init stream into `(address, row)` records.
pub fn parse_init_stream(bytes: &[u8]) -> Result<Vec<(RowAddr, WeightRow)>, WeightStoreError> {
    let mut writer = InitWriter::default();
    let mut out = Vec::new();
    for &b in bytes {
        if let Some(rec) = writer.push(b)? {
            out.push(rec);
        }
    }
    writer.finish()?;
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct RequestQueue {
    entries: VecDeque<RowAddr>,
}

impl RequestQueue {
    pub fn occupancy(&self) -> usize {
        self.entries.len()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= QUEUE_DEPTH
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, addr: RowAddr) -> bool {
        if self.is_full() {
            return false;
        }
        self.entries.push_back(addr);
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grant {
    pub port: usize,
    pub address: RowAddr,
}

impl Grant {
    pub fn one_hot(&self) -> u8 {
        1 << self.port
    }

    /// Per-lane valid indicators; only the granted lane is set.
    pub fn lanes(&self) -> [bool; RESOLVER_PORTS] {
        std::array::from_fn(|i| i == self.port)
    }
}

/// Weight memory plus its resolver.
#[derive(Clone, Debug, Default)]
pub struct WeightStore {
    memory: WeightMemory,
    queues: [RequestQueue; RESOLVER_PORTS],
    granted_this_cycle: bool,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn memory(&self) -> &WeightMemory {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut WeightMemory {
        &mut self.memory
    }

    pub fn occupancy(&self, port: usize) -> usize {
        self.queues[port].occupancy()
    }

    pub fn enqueue_request(&mut self, port: usize, addr: RowAddr) -> Result<bool, WeightStoreError> {
        if port >= RESOLVER_PORTS {
            return Err(WeightStoreError::NoSuchPort(port));
        }
        if self.memory.mode != MemoryMode::Inference {
            return Err(WeightStoreError::RefusedInInitMode);
        }
        Ok(self.queues[port].push(addr))
    }

    /// One resolver cycle: fixed priority, port 0 highest.
    pub fn arbitrate_and_read(&mut self) -> Option<(Grant, WeightRow)> {
        self.granted_this_cycle = false;
        if self.memory.mode != MemoryMode::Inference {
            return None;
        }
        let port = self.queues.iter().position(|q| !q.is_empty())?;
        let address = self.queues[port].entries.pop_front().expect("non-empty queue");
        self.granted_this_cycle = true;
        Some((Grant { port, address }, self.memory.rows[address.0 as usize]))
    }

    /// All queues empty and no grant issued in the latest cycle.
    pub fn is_complete(&self) -> bool {
        !self.granted_this_cycle && self.queues.iter().all(RequestQueue::is_empty)
    }

    /// Drops pending requests and the grant flag, keeping memory contents.
    pub fn clear_requests(&mut self) {
        self.queues.iter_mut().for_each(|q| q.entries.clear());
        self.granted_this_cycle = false;
    }

    pub fn reset_clear(&mut self) {
        self.memory.reset_clear();
        self.clear_requests();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn addr(a: u16) -> RowAddr {
        RowAddr::new(a).unwrap()
    }

    fn inference_store() -> WeightStore {
        let mut s = WeightStore::new();
        s.memory_mut().set_mode(MemoryMode::Inference);
        s
    }

    #[test]
    fn enqueue_until_full() {
        let mut s = inference_store();
        assert_eq!(s.enqueue_request(0, addr(42)), Ok(true));
        assert_eq!(s.occupancy(0), 1);
        for _ in 1..QUEUE_DEPTH {
            assert_eq!(s.enqueue_request(0, addr(1)), Ok(true));
        }
        assert_eq!(s.occupancy(0), 8);
        assert_eq!(s.enqueue_request(0, addr(2)), Ok(false));
        assert_eq!(s.occupancy(0), 8);
    }

    #[test]
    fn enqueue_refused_during_init() {
        let mut s = WeightStore::new();
        assert_eq!(s.enqueue_request(2, addr(0)), Err(WeightStoreError::RefusedInInitMode));
        assert_eq!(s.enqueue_request(4, addr(0)), Err(WeightStoreError::NoSuchPort(4)));
    }

    #[test]
    fn lowest_port_wins() {
        let mut s = inference_store();
        s.enqueue_request(3, addr(30)).unwrap();
        s.enqueue_request(1, addr(10)).unwrap();
        let (g, _) = s.arbitrate_and_read().unwrap();
        assert_eq!(g.port, 1);
        assert_eq!(g.address, addr(10));
        assert_eq!(g.lanes(), [false, true, false, false]);
        assert_eq!(g.one_hot(), 0b0010);
        assert_eq!(s.arbitrate_and_read().unwrap().0.port, 3);
        assert!(s.arbitrate_and_read().is_none());
    }

    #[test]
    fn fixed_priority_starves_lower_ports() {
        let mut s = inference_store();
        for port in 0..4 {
            for i in 0..3 {
                s.enqueue_request(port, addr((port * 10 + i) as u16)).unwrap();
            }
        }
        let order: Vec<usize> = std::iter::from_fn(|| s.arbitrate_and_read().map(|(g, _)| g.port)).collect();
        assert_eq!(order, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]);
    }

    #[test]
    fn no_reads_in_init_mode() {
        let mut s = inference_store();
        s.enqueue_request(0, addr(1)).unwrap();
        s.memory_mut().set_mode(MemoryMode::Initialization);
        assert!(s.arbitrate_and_read().is_none());
        assert_eq!(s.memory().read(addr(1)), Err(WeightStoreError::RefusedInInitMode));
        s.memory_mut().set_mode(MemoryMode::Inference);
        assert_eq!(s.memory_mut().init_write(&[0, 0, 0]), Err(WeightStoreError::RefusedInInferenceMode));
    }

    #[test]
    fn completion_flag_follows_grants() {
        let mut s = inference_store();
        assert!(s.is_complete());
        s.enqueue_request(2, addr(5)).unwrap();
        assert!(!s.is_complete());
        assert!(s.arbitrate_and_read().is_some());
        assert!(!s.is_complete(), "grant issued this cycle");
        assert!(s.arbitrate_and_read().is_none());
        assert!(s.is_complete());
    }

    #[test]
    fn init_write_short_record_zero_pads() {
        let mut m = WeightMemory::new();
        assert_eq!(m.init_write(&[0x05, 0x00, 0x02, 0xAA, 0xBB]), Ok(1));
        let bytes = m.peek(addr(5)).to_bytes();
        assert_eq!(&bytes[..2], &[0xAA, 0xBB]);
        assert!(bytes[2..].iter().all(|&b| b == 0));
    }

    #[test]
    fn init_write_errors() {
        let mut m = WeightMemory::new();
        assert_eq!(m.init_write(&[0x00, 0x08, 0x00]), Err(WeightStoreError::AddressOutOfRange(2048)));
        assert_eq!(m.init_write(&[0x00, 0x00, 129]), Err(WeightStoreError::CountOutOfRange(129)));
        assert_eq!(m.init_write(&[0x01, 0x00, 4, 1, 2]), Err(WeightStoreError::TruncatedStream(2)));
        assert_eq!(m.init_write(&[0x01]), Err(WeightStoreError::TruncatedStream(2)));
        // the truncated record was never committed
        assert!(m.peek(addr(1)).is_zero());
    }

    #[test]
    fn zero_count_commits_zero_row() {
        let mut m = WeightMemory::new();
        m.init_write(&[0x07, 0x00, 1, 0xFF]).unwrap();
        assert!(!m.peek(addr(7)).is_zero());
        m.init_write(&[0x07, 0x00, 0]).unwrap();
        assert!(m.peek(addr(7)).is_zero());
    }

    #[test]
    fn reset_clears_and_is_idempotent() {
        let mut m = WeightMemory::new();
        m.init_write(&[0x03, 0x01, 1, 9]).unwrap();
        m.set_mode(MemoryMode::Inference);
        m.reset_clear();
        assert_eq!(m.mode(), MemoryMode::Initialization);
        let once = m.dump_dense();
        m.reset_clear();
        assert_eq!(m.dump_dense(), once);
        assert!(once.iter().all(|&b| b == 0));

        m.init_write(&[7, 0, 2, 1, 1]).unwrap();
        let nonzero: Vec<u16> = m.nonzero_rows().map(|(a, _)| a.get()).collect();
        assert_eq!(nonzero, vec![7]);
    }

    #[test]
    fn dense_and_sparse_dumps_agree() {
        let mut m = WeightMemory::new();
        m.init_write(&[9, 0, 4, 1, 0, 0, 0]).unwrap();
        let mut full = vec![0x10, 0x02, 128];
        full.extend((0..128).map(|i| i as u8));
        m.init_write(&full).unwrap();
        let sparse = m.dump_sparse();
        let mut copy = WeightMemory::new();
        copy.init_write(&sparse).unwrap();
        assert_eq!(copy.dump_dense(), m.dump_dense());
        let mut dense = WeightMemory::new();
        dense.load_dense(&m.dump_dense()).unwrap();
        assert_eq!(dense.dump_dense(), m.dump_dense());
        assert!(dense.load_dense(&[0; 10]).is_err());
    }

    fn row_strategy() -> impl Strategy<Value = WeightRow> {
        prop::array::uniform32(prop_oneof![Just(0i32), any::<i32>()])
            .prop_map(|a| WeightRow(a.map(Potential::from_raw)))
    }

    proptest! {
        #[test]
        fn wire_round_trip(row in row_strategy(), a in 0u16..2048) {
            let mut m = WeightMemory::new();
            m.init_write(&row.encode_record(addr(a))).unwrap();
            prop_assert_eq!(*m.peek(addr(a)), row);
            prop_assert_eq!(m.nonzero_rows().count(), usize::from(!row.is_zero()));
        }

        #[test]
        fn queue_fifo_order(addrs in prop::collection::vec(0u16..2048, 0..8)) {
            let mut s = inference_store();
            for &a in &addrs {
                prop_assert!(s.enqueue_request(1, addr(a)).unwrap());
            }
            let out: Vec<u16> = std::iter::from_fn(|| s.arbitrate_and_read().map(|(g, _)| g.address.get())).collect();
            prop_assert_eq!(out, addrs);
        }
    }
}
