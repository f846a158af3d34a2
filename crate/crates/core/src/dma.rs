//! Cluster DMA: 2-D copies between a flat L2 and L1, up to 16 jobs in flight.
//!
//! Two FIFO channels, one per direction, share a single 32-bit L1 port. The L2
//! side streams `bytes_per_cycle` with a fixed latency and is pipelined across
//! queued jobs, so back-to-back transfers pay the latency once.

use std::collections::VecDeque;
use std::path::Path;

use crate::engine::{pack_bytes, EngineAccess};
use crate::error::{fault, Result, SimError};
use crate::tcdm::{Tcdm, TcdmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct L2Config {
    pub size: usize,
    pub latency: u64,
    pub bytes_per_cycle: u32,
}

impl Default for L2Config {
    fn default() -> Self {
        Self { size: 2 << 20, latency: 10, bytes_per_cycle: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmaConfig {
    pub l2: L2Config,
    pub max_outstanding: usize,
    /// Words in flight between the L2 and L1 sides of one channel.
    pub fifo_words: usize,
}

impl Default for DmaConfig {
    fn default() -> Self {
        Self { l2: L2Config::default(), max_outstanding: 16, fifo_words: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DmaDir {
    L2ToL1,
    L1ToL2,
}

impl DmaDir {
    fn index(self) -> usize {
        match self {
            DmaDir::L2ToL1 => 0,
            DmaDir::L1ToL2 => 1,
        }
    }

    pub fn code(self) -> u32 {
        self.index() as u32
    }

    pub fn from_code(v: u32) -> Result<Self> {
        match v {
            0 => Ok(DmaDir::L2ToL1),
            1 => Ok(DmaDir::L1ToL2),
            _ => Err(SimError::Config(format!("bad DMA direction {v}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmaJob {
    pub src: u32,
    pub dst: u32,
    pub inner_len: u32,
    pub outer_count: u32,
    pub src_stride: u32,
    pub dst_stride: u32,
    pub dir: DmaDir,
}

impl DmaJob {
    pub fn linear(src: u32, dst: u32, len: u32, dir: DmaDir) -> Self {
        Self { src, dst, inner_len: len, outer_count: 1, src_stride: len, dst_stride: len, dir }
    }

    pub fn bytes(&self) -> u64 {
        self.inner_len as u64 * self.outer_count as u64
    }

    fn l1_l2(&self) -> ((u32, u32), (u32, u32)) {
        match self.dir {
            DmaDir::L2ToL1 => ((self.dst, self.dst_stride), (self.src, self.src_stride)),
            DmaDir::L1ToL2 => ((self.src, self.src_stride), (self.dst, self.dst_stride)),
        }
    }

    fn end(base: u32, stride: u32, rows: u32, len: u32) -> u64 {
        base as u64 + (rows as u64 - 1) * stride as u64 + len as u64
    }

    pub fn validate(&self, tcdm: &TcdmConfig, l2: &L2Config) -> Result<()> {
        if self.inner_len == 0 || self.outer_count == 0 {
            return Err(SimError::JobRejected("empty DMA transfer".into()));
        }
        if self.outer_count > 1 && (self.src_stride < self.inner_len || self.dst_stride < self.inner_len) {
            return Err(SimError::JobRejected("DMA stride shorter than a row".into()));
        }
        let ((l1, l1s), (l2a, l2s)) = self.l1_l2();
        if Self::end(l1, l1s, self.outer_count, self.inner_len) > tcdm.total_bytes() as u64 {
            return Err(fault(l1, "DMA range leaves L1"));
        }
        if Self::end(l2a, l2s, self.outer_count, self.inner_len) > l2.size as u64 {
            return Err(fault(l2a, "DMA range leaves L2"));
        }
        Ok(())
    }

    /// L1 word operations covering every row.
    fn word_ops(&self) -> Vec<WordOp> {
        let ((l1, l1s), (l2, l2s)) = self.l1_l2();
        let mut ops = Vec::new();
        for r in 0..self.outer_count {
            let a1 = l1 + r * l1s;
            let a2 = l2 + r * l2s;
            let (start, words) = pack_bytes(a1, &vec![0; self.inner_len as usize]);
            for (i, &(_, be)) in words.iter().enumerate() {
                let wa = start + 4 * i as u32;
                let l2_of = |b: u32| a2 + (wa + b - a1);
                ops.push(WordOp { addr: wa, be, l2_first: l2_of(be.trailing_zeros()) });
            }
        }
        ops
    }
}

#[derive(Debug, Clone, Copy)]
struct WordOp {
    addr: u32,
    be: u8,
    /// L2 address of the lowest enabled byte; enabled bytes are contiguous.
    l2_first: u32,
}

impl WordOp {
    fn bytes(&self) -> u32 {
        self.be.count_ones()
    }

    fn lanes(&self) -> impl Iterator<Item = u32> + '_ {
        (0..4).filter(move |b| self.be & (1 << b) != 0)
    }
}

pub type DmaHandle = u32;

struct Active {
    handle: DmaHandle,
    ops: Vec<WordOp>,
}

#[derive(Default)]
struct Channel {
    jobs: VecDeque<Active>,
    /// L2-side cursor: (job index in queue, op index, bytes of that op done).
    l2_job: usize,
    l2_op: usize,
    l2_partial: u32,
    /// L1-side cursor within the head job.
    l1_op: usize,
    /// L2->L1: cycles at which fetched words become available, in op order.
    ready: VecDeque<u64>,
    /// L1->L2: words read from L1 and not yet written to L2.
    drain: VecDeque<(WordOp, u32, DmaHandle, bool)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DmaStats {
    pub cycles: u64,
    pub l1_words: u64,
    pub l1_stall: u64,
    pub bytes: u64,
    pub jobs: u64,
}

pub struct Dma {
    cfg: DmaConfig,
    tcdm: TcdmConfig,
    l2: Vec<u8>,
    chans: [Channel; 2],
    now: u64,
    next_handle: DmaHandle,
    last_chan: usize,
    /// Channel whose op was requested this cycle.
    pending: Option<usize>,
    /// L1->L2 completions waiting for the write latency.
    due: VecDeque<(u64, DmaHandle)>,
    completed: Vec<(DmaHandle, u64)>,
    pub stats: DmaStats,
}

impl Dma {
    pub fn new(cfg: DmaConfig, tcdm: TcdmConfig) -> Self {
        Self {
            l2: vec![0; cfg.l2.size],
            cfg,
            tcdm,
            chans: [Channel::default(), Channel::default()],
            now: 0,
            next_handle: 0,
            last_chan: 1,
            pending: None,
            due: VecDeque::new(),
            completed: Vec::new(),
            stats: DmaStats::default(),
        }
    }

    pub fn config(&self) -> &DmaConfig {
        &self.cfg
    }

    pub fn outstanding(&self) -> usize {
        let draining = self.chans[1].drain.iter().filter(|d| d.3).count();
        self.chans.iter().map(|c| c.jobs.len()).sum::<usize>() + draining + self.due.len()
    }

    pub fn idle(&self) -> bool {
        self.outstanding() == 0
    }

    pub fn enqueue(&mut self, job: DmaJob) -> Result<DmaHandle> {
        if self.outstanding() >= self.cfg.max_outstanding {
            return Err(SimError::QueueFull(self.cfg.max_outstanding));
        }
        job.validate(&self.tcdm, &self.cfg.l2)?;
        let handle = self.next_handle;
        self.next_handle += 1;
        self.chans[job.dir.index()].jobs.push_back(Active { handle, ops: job.word_ops() });
        Ok(handle)
    }

    pub fn l2(&self) -> &[u8] {
        &self.l2
    }

    pub fn l2_write(&mut self, addr: u32, bytes: &[u8]) -> Result<()> {
        let end = addr as usize + bytes.len();
        if end > self.l2.len() {
            return Err(fault(addr, "L2 write out of range"));
        }
        self.l2[addr as usize..end].copy_from_slice(bytes);
        Ok(())
    }

    pub fn l2_read(&self, addr: u32, len: usize) -> Result<Vec<u8>> {
        let end = addr as usize + len;
        if end > self.l2.len() {
            return Err(fault(addr, "L2 read out of range"));
        }
        Ok(self.l2[addr as usize..end].to_vec())
    }

    pub fn load_l2_file(&mut self, addr: u32, path: &Path) -> Result<()> {
        let data = std::fs::read(path)?;
        self.l2_write(addr, &data)
    }

    pub fn save_l2_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.l2)?;
        Ok(())
    }

    /// Jobs finished since the last call, with their completion cycle.
    pub fn take_completed(&mut self) -> Vec<(DmaHandle, u64)> {
        std::mem::take(&mut self.completed)
    }

    fn head_op(&self, c: usize) -> Option<WordOp> {
        let ch = &self.chans[c];
        let job = ch.jobs.front()?;
        let op = *job.ops.get(ch.l1_op)?;
        let ok = match c {
            0 => ch.ready.front().is_some_and(|&t| t <= self.now),
            _ => ch.drain.len() < self.cfg.fifo_words,
        };
        ok.then_some(op)
    }

    /// This cycle's L1 access, if any.
    pub fn request(&mut self) -> Option<EngineAccess> {
        self.pending = None;
        let order = [(self.last_chan + 1) % 2, self.last_chan];
        for c in order {
            if let Some(op) = self.head_op(c) {
                self.pending = Some(c);
                let write = (c == 0).then(|| {
                    let mut data = 0u32;
                    for (k, b) in op.lanes().enumerate() {
                        data |= (self.l2[(op.l2_first + k as u32) as usize] as u32) << (8 * b);
                    }
                    vec![(data, op.be)]
                });
                return Some(EngineAccess { addr: op.addr, words: 1, write });
            }
        }
        None
    }

    /// Finish the cycle; `read` is the granted word for an L1->L2 op.
    pub fn commit(&mut self, granted: bool, read: Option<u32>) {
        if let Some(c) = self.pending.take() {
            if granted {
                self.last_chan = c;
                self.stats.l1_words += 1;
                self.advance_l1(c, read.unwrap_or(0));
            } else {
                self.stats.l1_stall += 1;
            }
        }
        self.l2_fetch();
        self.l2_drain();
        self.now += 1;
        self.stats.cycles += 1;
        while self.due.front().is_some_and(|&(t, _)| t <= self.now) {
            let (t, h) = self.due.pop_front().unwrap();
            self.finish(h, t);
        }
    }

    fn finish(&mut self, h: DmaHandle, t: u64) {
        self.completed.push((h, t));
        self.stats.jobs += 1;
    }

    fn advance_l1(&mut self, c: usize, read: u32) {
        let now = self.now + 1;
        let ch = &mut self.chans[c];
        let job = ch.jobs.front().unwrap();
        let op = job.ops[ch.l1_op];
        let handle = job.handle;
        ch.l1_op += 1;
        let last = ch.l1_op == job.ops.len();
        self.stats.bytes += op.bytes() as u64;
        if c == 0 {
            ch.ready.pop_front();
        } else {
            ch.drain.push_back((op, read, handle, last));
        }
        if last {
            ch.jobs.pop_front();
            ch.l1_op = 0;
            if c == 0 {
                ch.l2_job -= 1;
                self.finish(handle, now);
            }
        }
    }

    /// L2->L1 channel: stream bytes from L2 into the in-flight FIFO.
    fn l2_fetch(&mut self) {
        let lat = self.cfg.l2.latency;
        let fifo = self.cfg.fifo_words;
        let now = self.now;
        let ch = &mut self.chans[0];
        let mut budget = self.cfg.l2.bytes_per_cycle;
        while budget > 0 && ch.ready.len() < fifo {
            let Some(job) = ch.jobs.get(ch.l2_job) else { break };
            let op = job.ops[ch.l2_op];
            let take = budget.min(op.bytes() - ch.l2_partial);
            budget -= take;
            ch.l2_partial += take;
            if ch.l2_partial == op.bytes() {
                ch.ready.push_back(now + lat);
                ch.l2_partial = 0;
                ch.l2_op += 1;
                if ch.l2_op == job.ops.len() {
                    ch.l2_op = 0;
                    ch.l2_job += 1;
                }
            }
        }
    }

    /// L1->L2 channel: write buffered words into L2.
    fn l2_drain(&mut self) {
        let lat = self.cfg.l2.latency;
        let mut budget = self.cfg.l2.bytes_per_cycle;
        let ch = &mut self.chans[1];
        while let Some(&(op, data, handle, last)) = ch.drain.front() {
            if op.bytes() > budget {
                break;
            }
            budget -= op.bytes();
            for (k, b) in op.lanes().enumerate() {
                self.l2[(op.l2_first + k as u32) as usize] = (data >> (8 * b)) as u8;
            }
            ch.drain.pop_front();
            if last {
                self.due.push_back((self.now + 1 + lat, handle));
            }
        }
    }
}

/// Run the DMA alone with every L1 access granted until all jobs finish.
pub fn run_dma_alone(dma: &mut Dma, mem: &mut Tcdm) -> Result<u64> {
    let start = dma.stats.cycles;
    let limit = start + 100_000_000;
    while !dma.idle() {
        if dma.stats.cycles >= limit {
            return Err(SimError::Timeout(dma.stats.cycles));
        }
        let acc = dma.request();
        let mut read = None;
        if let Some(a) = acc {
            match a.write {
                Some(w) => {
                    let (v, be) = w[0];
                    let old = mem.read_word(a.addr)?;
                    let mask = (0..4).filter(|b| be & (1 << b) != 0).fold(0u32, |m, b| m | 0xFF << (8 * b));
                    mem.write_word(a.addr, (old & !mask) | (v & mask))?;
                }
                None => read = Some(mem.read_word(a.addr)?),
            }
        }
        dma.commit(true, read);
    }
    Ok(dma.stats.cycles - start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Dma, Tcdm) {
        (Dma::new(DmaConfig::default(), TcdmConfig::default()), Tcdm::new(TcdmConfig::default()))
    }

    #[test]
    fn linear_round_trip() {
        let (mut dma, mut mem) = setup();
        let data: Vec<u8> = (0..100u32).map(|i| (i * 7) as u8).collect();
        dma.l2_write(1000, &data).unwrap();
        dma.enqueue(DmaJob::linear(1000, 0x40, 100, DmaDir::L2ToL1)).unwrap();
        let t = run_dma_alone(&mut dma, &mut mem).unwrap();
        assert_eq!(mem.read_bytes(0x40, 100).unwrap(), data);
        // latency, then one word per cycle on the L1 side
        assert_eq!(t, 10 + 25);
        dma.enqueue(DmaJob::linear(0x40, 5000, 100, DmaDir::L1ToL2)).unwrap();
        run_dma_alone(&mut dma, &mut mem).unwrap();
        assert_eq!(dma.l2_read(5000, 100).unwrap(), data);
        let done = dma.take_completed();
        assert_eq!(done.iter().map(|d| d.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn queue_limit() {
        let (mut dma, _) = setup();
        for _ in 0..16 {
            dma.enqueue(DmaJob::linear(0, 0, 4, DmaDir::L2ToL1)).unwrap();
        }
        assert_eq!(dma.enqueue(DmaJob::linear(0, 0, 4, DmaDir::L2ToL1)), Err(SimError::QueueFull(16)));
    }

    #[test]
    fn range_faults() {
        let (mut dma, _) = setup();
        assert!(matches!(
            dma.enqueue(DmaJob::linear(0, 131_070, 4, DmaDir::L2ToL1)),
            Err(SimError::AddressFault { .. })
        ));
        assert!(matches!(
            dma.enqueue(DmaJob::linear(2 << 20, 0, 4, DmaDir::L2ToL1)),
            Err(SimError::AddressFault { .. })
        ));
        let mut j = DmaJob::linear(0, 0, 8, DmaDir::L2ToL1);
        j.outer_count = 2;
        j.src_stride = 4;
        assert!(dma.enqueue(j).is_err());
    }

    #[test]
    fn queued_jobs_pay_latency_once() {
        let (mut dma, mut mem) = setup();
        for i in 0..4 {
            dma.enqueue(DmaJob::linear(i * 400, i * 400, 400, DmaDir::L2ToL1)).unwrap();
        }
        let t = run_dma_alone(&mut dma, &mut mem).unwrap();
        assert_eq!(t, 10 + 400);
        let c = dma.take_completed();
        assert!(c.windows(2).all(|w| w[0].1 < w[1].1 && w[0].0 < w[1].0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn strided_copy_matches_oracle(
            len in 1u32..40, rows in 1u32..6, gap_s in 0u32..9, gap_d in 0u32..9,
            src in 0u32..64, dst in 0u32..64, seed: u64, back: bool,
        ) {
            let (mut dma, mut mem) = setup();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ss, ds) = (len + gap_s, len + gap_d);
            let noise: Vec<u8> = (0..4096).map(|_| rng.gen()).collect();
            dma.l2_write(0, &noise).unwrap();
            mem.write_bytes(0, &noise).unwrap();
            let dir = if back { DmaDir::L1ToL2 } else { DmaDir::L2ToL1 };
            let dst = dst + 2048;
            let job = DmaJob { src, dst, inner_len: len, outer_count: rows, src_stride: ss, dst_stride: ds, dir };
            dma.enqueue(job).unwrap();
            run_dma_alone(&mut dma, &mut mem).unwrap();
            let mut want = noise.clone();
            for r in 0..rows {
                for b in 0..len {
                    want[(dst + r * ds + b) as usize] = noise[(src + r * ss + b) as usize];
                }
            }
            let got = if back { dma.l2_read(0, 4096).unwrap() } else { mem.read_bytes(0, 4096).unwrap() };
            prop_assert_eq!(got, want);
        }
    }
}
