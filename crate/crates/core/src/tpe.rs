//! Tensor product engine: an 8x4 array of 3-stage binary16 FMAs computing
//! `Z = X * W` over L1-resident row-major matrices.
//!
//! Each row holds four X elements steady while W streams through its four
//! cascaded FMAs; the last FMA feeds back into the first. The 12-deep row
//! pipeline is kept full by interleaving 12 output columns per pass, so one
//! k-block of 4 takes 12 cycles for a tile of 8 rows x 12 columns.
//!
//! Tile walk: row blocks outer, 12-column groups inner, k ascending within a
//! tile. Memory traffic per tile, issued ahead of compute through the wide port:
//! the previous tile's Z rows, then X rows in 16-element chunks and one W row
//! segment per k.

use crate::engine::{pack_bytes, word_span, Kernel, Mirror, Slot};
use crate::error::{fault, Result, SimError};
use crate::numerics::{fp16_fma, Fp16};
use crate::tcdm::{Tcdm, TcdmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TpeConfig {
    pub rows: usize,
    pub cols: usize,
    pub fma_stages: usize,
    pub port_width_words: usize,
    /// Elements per X row fetch.
    pub x_chunk: usize,
    /// Idle cycles between tiles (accumulator hand-off).
    pub tile_switch: u64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self { rows: 8, cols: 4, fma_stages: 3, port_width_words: 9, x_chunk: 16, tile_switch: 2 }
    }
}

impl TpeConfig {
    /// Output columns in flight per row pass.
    pub fn depth(&self) -> usize {
        self.cols * self.fma_stages
    }

    pub fn peak_macs(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TpeJob {
    pub x_base: u32,
    pub w_base: u32,
    pub z_base: u32,
    pub m: u32,
    pub n: u32,
    pub k: u32,
    /// Row strides in bytes; 0 selects the dense default.
    pub x_stride: u32,
    pub w_stride: u32,
    pub z_stride: u32,
}

impl TpeJob {
    pub fn dense(x_base: u32, w_base: u32, z_base: u32, m: u32, n: u32, k: u32) -> Self {
        Self { x_base, w_base, z_base, m, n, k, x_stride: 0, w_stride: 0, z_stride: 0 }
    }

    pub fn xs(&self) -> u32 {
        if self.x_stride == 0 {
            2 * self.k
        } else {
            self.x_stride
        }
    }

    pub fn ws(&self) -> u32 {
        if self.w_stride == 0 {
            2 * self.n
        } else {
            self.w_stride
        }
    }

    pub fn zs(&self) -> u32 {
        if self.z_stride == 0 {
            2 * self.n
        } else {
            self.z_stride
        }
    }

    pub fn macs(&self) -> u64 {
        self.m as u64 * self.n as u64 * self.k as u64
    }

    fn span(base: u32, rows: u32, stride: u32, row_bytes: u32) -> (u64, u64) {
        (base as u64, base as u64 + (rows as u64 - 1) * stride as u64 + row_bytes as u64)
    }

    pub fn validate(&self, tcdm: &TcdmConfig) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(SimError::JobRejected("TPE dimensions must be positive".into()));
        }
        for (name, a) in [("x", self.x_base), ("w", self.w_base), ("z", self.z_base)] {
            if a % 2 != 0 {
                return Err(fault(a, format!("TPE {name} base not 2-byte aligned")));
            }
        }
        if self.xs() < 2 * self.k || self.ws() < 2 * self.n || self.zs() < 2 * self.n {
            return Err(SimError::JobRejected("TPE stride shorter than a row".into()));
        }
        if !self.xs().is_multiple_of(2) || !self.ws().is_multiple_of(2) || !self.zs().is_multiple_of(2) {
            return Err(SimError::JobRejected("TPE strides must be even".into()));
        }
        let x = Self::span(self.x_base, self.m, self.xs(), 2 * self.k);
        let w = Self::span(self.w_base, self.k, self.ws(), 2 * self.n);
        let z = Self::span(self.z_base, self.m, self.zs(), 2 * self.n);
        for (a, b) in [x, w, z] {
            if b > tcdm.total_bytes() as u64 {
                return Err(fault(a as u32, "TPE operand leaves L1"));
            }
        }
        let overlap = |p: (u64, u64), q: (u64, u64)| p.0 < q.1 && q.0 < p.1;
        if overlap(z, x) || overlap(z, w) {
            return Err(SimError::JobRejected("TPE output aliases an input".into()));
        }
        Ok(())
    }

    fn x_addr(&self, i: u32, k: u32) -> u32 {
        self.x_base + i * self.xs() + 2 * k
    }

    fn w_addr(&self, k: u32, j: u32) -> u32 {
        self.w_base + k * self.ws() + 2 * j
    }

    fn z_addr(&self, i: u32, j: u32) -> u32 {
        self.z_base + i * self.zs() + 2 * j
    }
}

#[derive(Debug, Clone, Copy)]
struct Tile {
    r0: u32,
    rows: u32,
    c0: u32,
    cols: u32,
}

fn tiles(job: &TpeJob, cfg: &TpeConfig) -> Vec<Tile> {
    let (tr, tc) = (cfg.rows as u32, cfg.depth() as u32);
    let mut out = Vec::new();
    for r0 in (0..job.m).step_by(tr as usize) {
        for c0 in (0..job.n).step_by(tc as usize) {
            out.push(Tile { r0, rows: tr.min(job.m - r0), c0, cols: tc.min(job.n - c0) });
        }
    }
    out
}

struct TpeKernel {
    job: TpeJob,
    tiles: Vec<Tile>,
    rows_per_tile: u32,
}

impl Kernel for TpeKernel {
    fn write(&self, tag: u32, mirror: &Mirror) -> (u32, Vec<(u32, u8)>) {
        let t = self.tiles[(tag / self.rows_per_tile) as usize];
        let i = t.r0 + tag % self.rows_per_tile;
        let j = &self.job;
        let mut bytes = Vec::with_capacity(2 * t.cols as usize);
        for c in t.c0..t.c0 + t.cols {
            let mut acc = Fp16::ZERO;
            for k in 0..j.k {
                acc = fp16_fma(Fp16(mirror.u16(j.x_addr(i, k))), Fp16(mirror.u16(j.w_addr(k, c))), acc);
            }
            bytes.extend_from_slice(&acc.0.to_le_bytes());
        }
        pack_bytes(j.z_addr(i, t.c0), &bytes)
    }

    fn macs(&self) -> u64 {
        self.job.macs()
    }
}

/// Lower a job to its per-cycle slot list plus the output kernel.
pub fn plan(job: &TpeJob, cfg: &TpeConfig, tcdm: &TcdmConfig) -> Result<(Vec<Slot>, Box<dyn Kernel>)> {
    job.validate(tcdm)?;
    let tiles = tiles(job, cfg);
    let kb = job.k.div_ceil(cfg.cols as u32) as usize;
    let chunk = cfg.x_chunk as u32;
    let rows_per_tile = cfg.rows as u32;
    let mut slots = Vec::new();

    let loads = |t: &Tile, skip_first_block: bool| -> Vec<Slot> {
        let mut v = Vec::new();
        for q in (0..job.k).step_by(chunk as usize) {
            let len = chunk.min(job.k - q);
            if !(skip_first_block && q == 0) {
                for i in t.r0..t.r0 + t.rows {
                    let (addr, words) = word_span(job.x_addr(i, q), 2 * len);
                    v.push(Slot::Read { addr, words });
                }
            }
            for k in q..q + len {
                if skip_first_block && k < cfg.cols as u32 {
                    continue;
                }
                let (addr, words) = word_span(job.w_addr(k, t.c0), 2 * t.cols);
                v.push(Slot::Read { addr, words });
            }
        }
        v
    };

    // prologue: the first k-block of the first tile must land before compute starts
    let first = tiles[0];
    let first_len = chunk.min(job.k);
    for i in first.r0..first.r0 + first.rows {
        let (addr, words) = word_span(job.x_addr(i, 0), 2 * first_len);
        slots.push(Slot::Read { addr, words });
    }
    for k in 0..(cfg.cols as u32).min(job.k) {
        let (addr, words) = word_span(job.w_addr(k, first.c0), 2 * first.cols);
        slots.push(Slot::Read { addr, words });
    }

    for (ti, t) in tiles.iter().enumerate() {
        let mut acc = Vec::new();
        if ti > 0 {
            let p = tiles[ti - 1];
            acc.extend((0..p.rows).map(|r| Slot::Write { tag: (ti as u32 - 1) * rows_per_tile + r }));
        }
        acc.extend(loads(t, ti == 0));
        let len = (kb * cfg.depth()).max(acc.len());
        let n_acc = acc.len();
        slots.extend(acc);
        slots.extend(std::iter::repeat_n(Slot::Compute, len - n_acc + cfg.tile_switch as usize));
    }
    // drain the row pipelines, then store the last tile
    slots.extend(std::iter::repeat_n(Slot::Compute, cfg.depth()));
    let last = tiles.len() as u32 - 1;
    let lt = tiles[last as usize];
    slots.extend((0..lt.rows).map(|r| Slot::Write { tag: last * rows_per_tile + r }));

    Ok((slots, Box::new(TpeKernel { job: *job, tiles, rows_per_tile })))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpeTiming {
    pub cycles: u64,
    pub macs: u64,
    pub macs_per_cycle: f64,
    pub utilization: f64,
}

/// Uncontended cycle count of a job.
pub fn tpe_cycle_model(job: &TpeJob, cfg: &TpeConfig, tcdm: &TcdmConfig) -> Result<TpeTiming> {
    let (slots, _) = plan(job, cfg, tcdm)?;
    let cycles = slots.len() as u64;
    let macs = job.macs();
    let mpc = macs as f64 / cycles as f64;
    Ok(TpeTiming { cycles, macs, macs_per_cycle: mpc, utilization: mpc / cfg.peak_macs() as f64 })
}

/// Reference result written straight into memory (ascending-k binary16 FMA chain).
pub fn tpe_matmul_functional(job: &TpeJob, mem: &mut Tcdm) -> Result<()> {
    job.validate(mem.config())?;
    for i in 0..job.m {
        for c in 0..job.n {
            let mut acc = Fp16::ZERO;
            for k in 0..job.k {
                let x = Fp16(mem.read_u16(job.x_addr(i, k))?);
                let w = Fp16(mem.read_u16(job.w_addr(k, c))?);
                acc = fp16_fma(x, w, acc);
            }
            mem.write_u16(job.z_addr(i, c), acc.0)?;
        }
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

    fn tcdm() -> TcdmConfig {
        TcdmConfig::default()
    }

    fn fill_fp16(mem: &mut Tcdm, base: u32, n: usize, rng: &mut ChaCha8Rng) {
        for i in 0..n {
            let v = Fp16::from_f64(rng.gen_range(-4.0..4.0));
            mem.write_u16(base + 2 * i as u32, v.0).unwrap();
        }
    }

    fn run_engine(job: &TpeJob, mem: &mut Tcdm) -> u64 {
        let (slots, k) = plan(job, &TpeConfig::default(), mem.config()).unwrap();
        let mut seq = Sequencer::new(slots, k, 9);
        run_uncontended(&mut seq, mem, &mut EngineStats::default())
    }

    /// Closed form of the schedule, written independently of `plan`.
    fn closed_form(m: u64, n: u64, k: u64) -> u64 {
        let kb = k.div_ceil(4);
        let mut total = 8u64.min(m) + 4u64.min(k);
        let row_blocks: Vec<u64> = (0..m.div_ceil(8)).map(|b| 8.min(m - 8 * b)).collect();
        let col_groups: Vec<u64> = (0..n.div_ceil(12)).map(|g| 12.min(n - 12 * g)).collect();
        let mut prev_rows = 0;
        let mut first = true;
        for &r in &row_blocks {
            for _ in &col_groups {
                let mut a = r * k.div_ceil(16) + k + prev_rows;
                if first {
                    a -= 8u64.min(m) + 4u64.min(k);
                    first = false;
                }
                total += (12 * kb).max(a) + 2;
                prev_rows = r;
            }
        }
        total + 12 + prev_rows
    }

    #[test]
    fn large_square_throughput() {
        let t = tpe_cycle_model(&TpeJob::dense(0, 20000, 40000, 96, 96, 96), &TpeConfig::default(), &tcdm()).unwrap();
        assert_eq!(t.cycles, closed_form(96, 96, 96));
        assert!(t.macs_per_cycle >= 31.0, "{t:?}");
        assert!(t.utilization >= 0.98);
    }

    #[test]
    fn single_row_is_one_eighth() {
        let t = tpe_cycle_model(&TpeJob::dense(0, 4096, 60000, 1, 96, 96), &TpeConfig::default(), &tcdm()).unwrap();
        assert!((t.utilization - 1.0 / 8.0).abs() < 0.01, "{t:?}");
    }

    #[test]
    fn tiny_job_pinned() {
        let t = tpe_cycle_model(&TpeJob::dense(0, 64, 128, 4, 4, 4), &TpeConfig::default(), &tcdm()).unwrap();
        assert_eq!(t.cycles, 38);
    }

    #[test]
    fn k_one_single_rounding() {
        let mut mem = Tcdm::new(tcdm());
        let (x, w) = (Fp16::from_f64(1.0 / 3.0), Fp16::from_f64(3.0));
        mem.write_u16(0, x.0).unwrap();
        mem.write_u16(4, w.0).unwrap();
        run_engine(&TpeJob::dense(0, 4, 8, 1, 1, 1), &mut mem);
        assert_eq!(Fp16(mem.read_u16(8).unwrap()), fp16_fma(x, w, Fp16::ZERO));
    }

    #[test]
    fn identity_passes_w_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mem = Tcdm::new(tcdm());
        let n = 10u32;
        for i in 0..n {
            mem.write_u16(2 * (i * n + i), Fp16::ONE.0).unwrap();
        }
        fill_fp16(&mut mem, 1000, (n * 13) as usize, &mut rng);
        run_engine(&TpeJob::dense(0, 1000, 4000, n, 13, n), &mut mem);
        assert_eq!(mem.read_bytes(4000, (2 * n * 13) as usize).unwrap(), mem.read_bytes(1000, (2 * n * 13) as usize).unwrap());
    }

    #[test]
    fn rejects_bad_jobs() {
        let c = tcdm();
        assert!(plan(&TpeJob::dense(0, 100, 10, 4, 4, 4), &TpeConfig::default(), &c).is_err());
        assert!(plan(&TpeJob::dense(1, 100, 500, 4, 4, 4), &TpeConfig::default(), &c).is_err());
        assert!(plan(&TpeJob::dense(0, 100, 500, 0, 4, 4), &TpeConfig::default(), &c).is_err());
        assert!(plan(&TpeJob::dense(0, 100, 131070, 4, 4, 4), &TpeConfig::default(), &c).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn engine_matches_chain(m in 1u32..20, n in 1u32..30, k in 1u32..40, seed in any::<u64>(), pad in 0u32..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let job = TpeJob {
                x_base: 2, w_base: 8002, z_base: 20002, m, n, k,
                x_stride: 2 * (k + pad), w_stride: 2 * (n + pad), z_stride: 2 * (n + pad),
            };
            let mut a = Tcdm::new(tcdm());
            fill_fp16(&mut a, 2, ((k + pad) * m) as usize, &mut rng);
            fill_fp16(&mut a, 8002, ((n + pad) * k) as usize, &mut rng);
            let mut b = a.clone();
            let cycles = run_engine(&job, &mut a);
            tpe_matmul_functional(&job, &mut b).unwrap();
            prop_assert_eq!(a.image(), b.image());
            prop_assert_eq!(cycles, closed_form(m as u64, n as u64, k as u64));
        }

        #[test]
        fn cycles_monotone(m in 1u32..30, n in 1u32..30, k in 1u32..30, dim in 0usize..3) {
            let c = tcdm();
            let cfg = TpeConfig::default();
            let base = TpeJob::dense(0, 8192, 32768, m, n, k);
            let mut bigger = base;
            match dim { 0 => bigger.m += 1, 1 => bigger.n += 1, _ => bigger.k += 1 }
            let t0 = tpe_cycle_model(&base, &cfg, &c).unwrap();
            let t1 = tpe_cycle_model(&bigger, &cfg, &c).unwrap();
            prop_assert!(t1.cycles >= t0.cycles);
            prop_assert!(t0.macs_per_cycle <= 32.0);
        }
    }

    #[test]
    fn random_jobs_never_fail_validation_when_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (m, n, k) = (rng.gen_range(1..40), rng.gen_range(1..40), rng.gen_range(1..40));
            assert!(plan(&TpeJob::dense(0, 8192, 32768, m, n, k), &TpeConfig::default(), &tcdm()).is_ok());
        }
    }
}
