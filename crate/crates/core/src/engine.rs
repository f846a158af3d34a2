//! Shared machinery for the memory-streaming engines.
//!
//! A job is lowered to a list of per-cycle [`Slot`]s. The sequencer issues one
//! slot per cycle; a slot that needs memory holds the engine until granted.
//! Data read through granted accesses lands in a local [`Mirror`]; outputs are
//! computed only from the mirror, so an engine can never observe memory it has
//! not been granted.

use std::collections::HashMap;

use crate::tcdm::WORD_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortKind {
    Shallow,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Cycle spent computing, no memory traffic.
    Compute,
    Read { addr: u32, words: u8 },
    /// Output burst; contents come from [`Kernel::write`].
    Write { tag: u32 },
}

/// One cycle's access request from an engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineAccess {
    pub addr: u32,
    pub words: usize,
    pub write: Option<Vec<(u32, u8)>>,
}

impl EngineAccess {
    pub fn bytes(&self) -> usize {
        match &self.write {
            None => self.words * WORD_BYTES,
            Some(w) => w.iter().map(|&(_, be)| be.count_ones() as usize).sum(),
        }
    }
}

/// Words read by an engine, keyed by word address.
#[derive(Debug, Clone, Default)]
pub struct Mirror {
    words: HashMap<u32, u32>,
}

impl Mirror {
    pub fn insert(&mut self, word_addr: u32, v: u32) {
        self.words.insert(word_addr, v);
    }

    /// Panics if the byte was never read: the schedule failed to load it.
    pub fn byte(&self, addr: u32) -> u8 {
        let w = self
            .words
            .get(&(addr & !3))
            .unwrap_or_else(|| panic!("engine used byte {addr:#x} before loading it"));
        (w >> (8 * (addr & 3))) as u8
    }

    pub fn u16(&self, addr: u32) -> u16 {
        u16::from_le_bytes([self.byte(addr), self.byte(addr + 1)])
    }

    pub fn clear(&mut self) {
        self.words.clear();
    }
}

/// Assemble a byte run starting at `addr` into word-aligned (data, byte-enable) slots.
pub fn pack_bytes(addr: u32, bytes: &[u8]) -> (u32, Vec<(u32, u8)>) {
    let start = addr & !3;
    let end = addr + bytes.len() as u32;
    let n = ((end - start) as usize).div_ceil(WORD_BYTES);
    let mut out = vec![(0u32, 0u8); n];
    for (i, &b) in bytes.iter().enumerate() {
        let a = addr + i as u32 - start;
        let slot = &mut out[(a / 4) as usize];
        slot.0 |= (b as u32) << (8 * (a % 4));
        slot.1 |= 1 << (a % 4);
    }
    (start, out)
}

/// Word span `(first word address, word count)` covering `len` bytes at `addr`.
pub fn word_span(addr: u32, len: u32) -> (u32, u8) {
    let start = addr & !3;
    let n = (addr + len - start).div_ceil(4);
    (start, n as u8)
}

/// Read slots covering `len` bytes at `addr`, at most `max_words` words each.
pub fn chunked_reads(addr: u32, len: u32, max_words: u32) -> Vec<Slot> {
    let mut out = Vec::new();
    if len == 0 {
        return out;
    }
    let end = addr + len;
    let mut a = addr & !3;
    while a < end {
        let words = (end - a).div_ceil(4).min(max_words);
        out.push(Slot::Read { addr: a, words: words as u8 });
        a += 4 * words;
    }
    out
}

/// Engine-specific output computation.
pub trait Kernel: Send {
    /// Address and word data of output burst `tag`.
    fn write(&self, tag: u32, mirror: &Mirror) -> (u32, Vec<(u32, u8)>);
    /// MACs performed by the whole job.
    fn macs(&self) -> u64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EngineStats {
    pub cycles: u64,
    pub busy: u64,
    pub stall: u64,
    pub idle: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub max_bytes_per_cycle: u64,
    pub macs: u64,
    pub jobs: u64,
}

impl EngineStats {
    pub fn macs_per_cycle(&self) -> f64 {
        let active = self.busy + self.stall;
        if active == 0 {
            0.0
        } else {
            self.macs as f64 / active as f64
        }
    }
}

/// Runs one job's slot list against granted memory.
pub struct Sequencer {
    slots: Vec<Slot>,
    pos: usize,
    pending: Option<EngineAccess>,
    mirror: Mirror,
    kernel: Box<dyn Kernel>,
    max_words: usize,
}

impl Sequencer {
    pub fn new(slots: Vec<Slot>, kernel: Box<dyn Kernel>, max_words: usize) -> Self {
        Self { slots, pos: 0, pending: None, mirror: Mirror::default(), kernel, max_words }
    }

    pub fn done(&self) -> bool {
        self.pos >= self.slots.len()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn macs(&self) -> u64 {
        self.kernel.macs()
    }

    /// This cycle's access, if the current slot needs one.
    pub fn request(&mut self) -> Option<EngineAccess> {
        let slot = *self.slots.get(self.pos)?;
        let acc = match slot {
            Slot::Compute => return None,
            Slot::Read { addr, words } => EngineAccess { addr, words: words as usize, write: None },
            Slot::Write { tag } => {
                if self.pending.is_none() {
                    let (addr, data) = self.kernel.write(tag, &self.mirror);
                    self.pending = Some(EngineAccess { addr, words: data.len(), write: Some(data) });
                }
                self.pending.clone().unwrap()
            }
        };
        assert!(acc.words <= self.max_words, "engine access of {} words exceeds its port", acc.words);
        Some(acc)
    }

    /// Finish the cycle; `read` carries the words of a granted read.
    pub fn commit(&mut self, granted: bool, read: &[u32], stats: &mut EngineStats) {
        stats.cycles += 1;
        let Some(&slot) = self.slots.get(self.pos) else {
            stats.idle += 1;
            return;
        };
        match slot {
            Slot::Compute => {}
            _ if !granted => {
                stats.stall += 1;
                return;
            }
            Slot::Read { addr, words } => {
                for (i, &w) in read.iter().enumerate().take(words as usize) {
                    self.mirror.insert(addr + 4 * i as u32, w);
                }
                let b = words as u64 * 4;
                stats.bytes_read += b;
                stats.max_bytes_per_cycle = stats.max_bytes_per_cycle.max(b);
            }
            Slot::Write { .. } => {
                let acc = self.pending.take().expect("write granted before it was requested");
                let b = acc.bytes() as u64;
                stats.bytes_written += b;
                stats.max_bytes_per_cycle = stats.max_bytes_per_cycle.max(b);
            }
        }
        stats.busy += 1;
        self.pos += 1;
        if self.done() {
            stats.macs += self.kernel.macs();
            stats.jobs += 1;
        }
    }
}

/// An engine slot in the cluster: idle, or running one job.
pub struct EngineUnit {
    pub name: &'static str,
    pub port: PortKind,
    max_words: usize,
    seq: Option<Sequencer>,
    pub stats: EngineStats,
    finished: bool,
}

impl EngineUnit {
    pub fn new(name: &'static str, port: PortKind, max_words: usize) -> Self {
        Self { name, port, max_words, seq: None, stats: EngineStats::default(), finished: false }
    }

    pub fn busy(&self) -> bool {
        self.seq.is_some()
    }

    /// Load a planned job; rejected without state change while busy.
    pub fn start(&mut self, slots: Vec<Slot>, kernel: Box<dyn Kernel>) -> crate::Result<()> {
        if self.busy() {
            return Err(crate::SimError::JobRejected(format!("{} is busy", self.name)));
        }
        let seq = Sequencer::new(slots, kernel, self.max_words);
        if seq.done() {
            self.stats.macs += seq.macs();
            self.stats.jobs += 1;
            self.finished = true;
        } else {
            self.seq = Some(seq);
        }
        Ok(())
    }

    pub fn request(&mut self) -> Option<EngineAccess> {
        self.seq.as_mut().and_then(|s| s.request())
    }

    pub fn commit(&mut self, granted: bool, read: &[u32]) {
        match &mut self.seq {
            Some(seq) => {
                seq.commit(granted, read, &mut self.stats);
                if seq.done() {
                    self.seq = None;
                    self.finished = true;
                }
            }
            None => {
                self.stats.cycles += 1;
                self.stats.idle += 1;
            }
        }
    }

    /// True once after each job completes.
    pub fn take_finished(&mut self) -> bool {
        std::mem::take(&mut self.finished)
    }
}

/// Drive a sequencer alone against a flat memory image with every access
/// granted; returns cycles. Used by the analytic/unit tests.
pub fn run_uncontended(seq: &mut Sequencer, mem: &mut crate::tcdm::Tcdm, stats: &mut EngineStats) -> u64 {
    let mut cycles = 0;
    while !seq.done() {
        let acc = seq.request();
        let mut data = Vec::new();
        if let Some(a) = &acc {
            match &a.write {
                None => {
                    for i in 0..a.words {
                        data.push(mem.read_word(a.addr + 4 * i as u32).expect("engine read outside L1"));
                    }
                }
                Some(w) => {
                    for (i, &(v, be)) in w.iter().enumerate() {
                        let addr = a.addr + 4 * i as u32;
                        let old = mem.read_word(addr).expect("engine write outside L1");
                        let mut mask = 0u32;
                        for b in 0..4 {
                            if be & (1 << b) != 0 {
                                mask |= 0xFF << (8 * b);
                            }
                        }
                        mem.write_word(addr, (old & !mask) | (v & mask)).unwrap();
                    }
                }
            }
        }
        seq.commit(true, &data, stats);
        cycles += 1;
    }
    cycles
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_bytes_unaligned() {
        let (a, w) = pack_bytes(6, &[1, 2, 3]);
        assert_eq!(a, 4);
        assert_eq!(w, vec![(0x0201_0000, 0b1100), (0x03, 0b0001)]);
    }

    #[test]
    fn chunking() {
        assert_eq!(chunked_reads(2, 144, 9).len(), 5);
        assert_eq!(chunked_reads(0, 144, 9).len(), 4);
        assert!(chunked_reads(0, 0, 9).is_empty());
    }

    #[test]
    fn spans() {
        assert_eq!(word_span(0, 36), (0, 9));
        assert_eq!(word_span(2, 4), (0, 2));
        assert_eq!(word_span(6, 24), (4, 7));
    }

    #[test]
    #[should_panic(expected = "before loading")]
    fn mirror_rejects_unloaded() {
        Mirror::default().byte(8);
    }
}
