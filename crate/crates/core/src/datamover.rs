//! Transpose engine for d-bit elements (d in 1..=32, power of two) on one
//! logarithmic-branch port.
//!
//! A tile is (32/d) x (32/d) elements: one source word from each of 32/d
//! consecutive rows fills the shuffle buffer, then 32/d transposed words are
//! streamed out. One word moves per cycle; tiles do not overlap.

use crate::engine::{Kernel, Mirror, Slot};
use crate::error::{fault, Result, SimError};
use crate::tcdm::{Tcdm, TcdmConfig};

pub const SHUFFLE_REGS: usize = 32;
pub const PRECISIONS: [u32; 6] = [1, 2, 4, 8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmJob {
    pub src_base: u32,
    pub dst_base: u32,
    /// Element width in bits.
    pub d: u32,
    pub rows: u32,
    pub cols: u32,
}

fn lane(word: u32, d: u32, i: u32) -> u32 {
    let mask = if d == 32 { u32::MAX } else { (1 << d) - 1 };
    (word >> (i * d)) & mask
}

impl DmJob {
    /// Elements per word, also the tile edge.
    pub fn per_word(&self) -> u32 {
        32 / self.d
    }

    pub fn bytes(&self) -> u64 {
        self.rows as u64 * self.cols as u64 * self.d as u64 / 8
    }

    fn src_row_words(&self) -> u32 {
        self.cols / self.per_word()
    }

    fn dst_row_words(&self) -> u32 {
        self.rows / self.per_word()
    }

    pub fn validate(&self, tcdm: &TcdmConfig) -> Result<()> {
        if !PRECISIONS.contains(&self.d) {
            return Err(SimError::JobRejected(format!("unsupported element width {}", self.d)));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(SimError::JobRejected("empty transpose".into()));
        }
        if !(self.rows * self.d).is_multiple_of(32) || !(self.cols * self.d).is_multiple_of(32) {
            return Err(SimError::JobRejected("transpose rows must be whole words".into()));
        }
        if !self.src_base.is_multiple_of(4) || !self.dst_base.is_multiple_of(4) {
            return Err(SimError::JobRejected("transpose buffers must be word aligned".into()));
        }
        let n = self.bytes();
        for a in [self.src_base, self.dst_base] {
            if a as u64 + n > tcdm.total_bytes() as u64 {
                return Err(fault(a, "transpose buffer leaves L1"));
            }
        }
        let (s, d) = (self.src_base as u64, self.dst_base as u64);
        if s < d + n && d < s + n {
            return Err(SimError::JobRejected("transpose source and destination overlap".into()));
        }
        Ok(())
    }

    /// (tile row, tile col) of tile `t`.
    fn tile(&self, t: u32) -> (u32, u32) {
        (t / self.src_row_words(), t % self.src_row_words())
    }

    fn tiles(&self) -> u32 {
        self.rows / self.per_word() * self.src_row_words()
    }

    /// Word `l` of the transposed tile `(ti, tj)` from the source words of that tile.
    fn shuffle(&self, src_words: &[u32], l: u32) -> u32 {
        src_words
            .iter()
            .enumerate()
            .fold(0u32, |acc, (r, &w)| acc | lane(w, self.d, l) << (r as u32 * self.d))
    }
}

struct DmKernel {
    job: DmJob,
}

impl Kernel for DmKernel {
    fn write(&self, tag: u32, m: &Mirror) -> (u32, Vec<(u32, u8)>) {
        let j = &self.job;
        let e = j.per_word();
        let (ti, tj) = j.tile(tag / e);
        let l = tag % e;
        let src: Vec<u32> = (0..e)
            .map(|r| {
                let a = j.src_base + 4 * ((ti * e + r) * j.src_row_words() + tj);
                u32::from_le_bytes([m.byte(a), m.byte(a + 1), m.byte(a + 2), m.byte(a + 3)])
            })
            .collect();
        let addr = j.dst_base + 4 * ((tj * e + l) * j.dst_row_words() + ti);
        (addr, vec![(j.shuffle(&src, l), 0xF)])
    }

    fn macs(&self) -> u64 {
        0
    }
}

pub fn plan(job: &DmJob, tcdm: &TcdmConfig) -> Result<(Vec<Slot>, Box<dyn Kernel>)> {
    job.validate(tcdm)?;
    let e = job.per_word();
    let mut slots = Vec::with_capacity(2 * (job.tiles() * e) as usize);
    for t in 0..job.tiles() {
        let (ti, tj) = job.tile(t);
        for r in 0..e {
            let addr = job.src_base + 4 * ((ti * e + r) * job.src_row_words() + tj);
            slots.push(Slot::Read { addr, words: 1 });
        }
        slots.extend((0..e).map(|l| Slot::Write { tag: t * e + l }));
    }
    Ok((slots, Box::new(DmKernel { job: *job })))
}

/// Uncontended cycles: one word transaction per cycle, in and out.
pub fn dm_cycle_model(job: &DmJob) -> u64 {
    2 * job.rows as u64 * job.cols as u64 * job.d as u64 / 32
}

/// Reference transpose written straight into memory.
pub fn dm_transpose_functional(job: &DmJob, mem: &mut Tcdm) -> Result<()> {
    job.validate(mem.config())?;
    let e = job.per_word();
    let mut out = vec![0u32; (job.bytes() / 4) as usize];
    for i in 0..job.rows {
        for j in 0..job.cols {
            let w = mem.read_word(job.src_base + 4 * (i * job.src_row_words() + j / e))?;
            let v = lane(w, job.d, j % e);
            out[(j * job.dst_row_words() + i / e) as usize] |= v << ((i % e) * job.d);
        }
    }
    for (k, w) in out.into_iter().enumerate() {
        mem.write_word(job.dst_base + 4 * k as u32, w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_uncontended, EngineStats, Sequencer};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> TcdmConfig {
        TcdmConfig::default()
    }

    /// Element matrix as explicit bit vectors.
    fn bits_of(mem: &Tcdm, base: u32, rows: u32, cols: u32, d: u32) -> Vec<Vec<Vec<bool>>> {
        let bytes = mem.read_bytes(base, (rows * cols * d / 8) as usize).unwrap();
        let bit = |n: u32| bytes[(n / 8) as usize] >> (n % 8) & 1 == 1;
        (0..rows)
            .map(|i| (0..cols).map(|j| (0..d).map(|b| bit((i * cols + j) * d + b)).collect()).collect())
            .collect()
    }

    fn run_engine(job: &DmJob, mem: &mut Tcdm) -> u64 {
        let (slots, k) = plan(job, mem.config()).unwrap();
        let mut seq = Sequencer::new(slots, k, 1);
        run_uncontended(&mut seq, mem, &mut EngineStats::default())
    }

    fn random_job(d: u32, rt: u32, ct: u32, rng: &mut ChaCha8Rng, mem: &mut Tcdm) -> DmJob {
        let e = 32 / d;
        let job = DmJob { src_base: 0, dst_base: 0x8000, d, rows: rt * e, cols: ct * e };
        let data: Vec<u8> = (0..job.bytes()).map(|_| rng.gen()).collect();
        mem.write_bytes(0, &data).unwrap();
        job
    }

    #[test]
    fn word_transpose_and_identity() {
        let mut mem = Tcdm::new(cfg());
        mem.write_word(0, 0xDEAD_BEEF).unwrap();
        let j = DmJob { src_base: 0, dst_base: 64, d: 32, rows: 1, cols: 1 };
        assert_eq!(run_engine(&j, &mut mem), 2);
        assert_eq!(mem.read_word(64).unwrap(), 0xDEAD_BEEF);
    }

    #[test]
    fn byte_tile_gathers_lanes() {
        let mut mem = Tcdm::new(cfg());
        let src = [0x0302_0100u32, 0x1312_1110, 0x2322_2120, 0x3332_3130];
        for (i, w) in src.iter().enumerate() {
            mem.write_word(4 * i as u32, *w).unwrap();
        }
        let j = DmJob { src_base: 0, dst_base: 64, d: 8, rows: 4, cols: 4 };
        assert_eq!(run_engine(&j, &mut mem), 8);
        let got: Vec<u32> = (0..4).map(|i| mem.read_word(64 + 4 * i).unwrap()).collect();
        assert_eq!(got, vec![0x3020_1000, 0x3121_1101, 0x3222_1202, 0x3323_1303]);
    }

    #[test]
    fn bit_matrix_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mem = Tcdm::new(cfg());
        let j = random_job(1, 1, 1, &mut rng, &mut mem);
        run_engine(&j, &mut mem);
        let src = bits_of(&mem, 0, 32, 32, 1);
        let dst = bits_of(&mem, 0x8000, 32, 32, 1);
        for i in 0..32 {
            for k in 0..32 {
                assert_eq!(src[i][k], dst[k][i]);
            }
        }
    }

    #[test]
    fn rejects() {
        let c = cfg();
        let ok = DmJob { src_base: 0, dst_base: 256, d: 8, rows: 8, cols: 8 };
        assert!(plan(&ok, &c).is_ok());
        for bad in [
            DmJob { d: 3, ..ok },
            DmJob { rows: 6, ..ok },
            DmJob { dst_base: 32, ..ok },
            DmJob { src_base: 2, ..ok },
            DmJob { dst_base: 131_068, ..ok },
        ] {
            assert!(plan(&bad, &c).is_err(), "{bad:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(60))]
        #[test]
        fn matches_bit_oracle_and_model(di in 0usize..6, rt in 1u32..4, ct in 1u32..4, seed: u64) {
            let d = PRECISIONS[di];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mem = Tcdm::new(cfg());
            let j = random_job(d, rt, ct, &mut rng, &mut mem);
            let mut reference = mem.clone();
            let cycles = run_engine(&j, &mut mem);
            prop_assert_eq!(cycles, dm_cycle_model(&j));
            let src = bits_of(&mem, 0, j.rows, j.cols, d);
            let dst = bits_of(&mem, 0x8000, j.cols, j.rows, d);
            for i in 0..j.rows as usize {
                for k in 0..j.cols as usize {
                    prop_assert_eq!(&src[i][k], &dst[k][i]);
                }
            }
            dm_transpose_functional(&j, &mut reference).unwrap();
            prop_assert_eq!(reference.image(), mem.image());
        }

        #[test]
        fn involution(di in 0usize..6, rt in 1u32..4, ct in 1u32..4, seed: u64) {
            let d = PRECISIONS[di];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mem = Tcdm::new(cfg());
            let j = random_job(d, rt, ct, &mut rng, &mut mem);
            dm_transpose_functional(&j, &mut mem).unwrap();
            let back = DmJob { src_base: 0x8000, dst_base: 0x10000, d, rows: j.cols, cols: j.rows };
            dm_transpose_functional(&back, &mut mem).unwrap();
            let n = j.bytes() as usize;
            prop_assert_eq!(mem.read_bytes(0, n).unwrap(), mem.read_bytes(0x10000, n).unwrap());
        }
    }
}
