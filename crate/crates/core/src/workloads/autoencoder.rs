//! One training step of a fully connected binary16 autoencoder, expressed as
//! its matmuls and transposes, on three configurations: cores only, TPE with
//! software transposes, TPE with DataMover transposes.
//!
//! Each layer streams its tensors between L2 and L1 with double buffering, so
//! its latency is the larger of compute and DMA time. Bias, normalization, activation and the weight update are
//! elementwise work common to all configurations and are left out.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::cluster::{Cluster, ClusterConfig};
use crate::datamover::DmJob;
use crate::dma::{run_dma_alone, Dma, DmaDir, DmaJob};
use crate::error::{Result, SimError};
use crate::numerics::Fp16;
use crate::rvnn::{AluOp, Instr, LoopKind, Operand, Program, ProgramBuilder, Reg, Width};
use crate::tcdm::Tcdm;
use crate::tpe::TpeJob;

use super::oracle::matmul_fp16_chain;
use super::sw::{dm_offload_program, gen_sw_transpose16, tpe_offload_program};

pub const AE_BATCH: usize = 16;

/// Input/output width, hidden width and bottleneck width.
pub const AE_IO: usize = 640;
pub const AE_HIDDEN: usize = 128;
pub const AE_LATENT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AeLayer {
    pub n_in: usize,
    pub n_out: usize,
}

impl AeLayer {
    /// Layers touching the bottleneck.
    pub fn is_latent(&self) -> bool {
        self.n_in == AE_LATENT || self.n_out == AE_LATENT
    }

    /// Forward product, input gradient (skipped for the first layer) and
    /// weight gradient, for weights stored `n_in x n_out`.
    pub fn gemms(&self, first: bool) -> Vec<Gemm> {
        let (b, i, o) = (AE_BATCH, self.n_in, self.n_out);
        let mut g = vec![Gemm { role: GemmRole::Forward, m: b, n: o, k: i, a_contig: true, b_contig: false }];
        if !first {
            g.push(Gemm { role: GemmRole::InputGrad, m: b, n: i, k: o, a_contig: true, b_contig: true });
        }
        g.push(Gemm { role: GemmRole::WeightGrad, m: i, n: o, k: b, a_contig: false, b_contig: false });
        g
    }

    pub fn macs(&self, first: bool) -> u64 {
        self.gemms(first).iter().map(Gemm::macs).sum()
    }

    /// Binary16 tensors moved between L2 and L1 in one training step, as
    /// `(bytes, direction)`. The forward pass reads X and W and writes Z; the
    /// backward pass reads dZ, W again and X again, and writes dX and dW.
    pub fn transfers(&self, first: bool) -> Vec<(usize, DmaDir)> {
        let (x, w, z) = (2 * AE_BATCH * self.n_in, 2 * self.n_in * self.n_out, 2 * AE_BATCH * self.n_out);
        let mut t = vec![(x, DmaDir::L2ToL1), (w, DmaDir::L2ToL1), (z, DmaDir::L1ToL2)];
        t.extend([(z, DmaDir::L2ToL1), (w, DmaDir::L2ToL1), (x, DmaDir::L2ToL1), (w, DmaDir::L1ToL2)]);
        if !first {
            t.push((x, DmaDir::L1ToL2));
        }
        t
    }
}

/// Cycles for the DMA alone to move `transfers`, cut into jobs of at most
/// `piece` bytes and issued with the queue kept full.
pub fn dma_transfer_cycles(transfers: &[(usize, DmaDir)], cfg: &ClusterConfig) -> Result<u64> {
    let piece = cfg.tcdm.total_bytes() / 4;
    let mut jobs = Vec::new();
    for &(bytes, dir) in transfers {
        for off in (0..bytes).step_by(piece) {
            let len = piece.min(bytes - off) as u32;
            let l1 = (jobs.len() % 4 * piece) as u32;
            let l2 = off as u32;
            jobs.push(match dir {
                DmaDir::L2ToL1 => DmaJob::linear(l2, l1, len, dir),
                DmaDir::L1ToL2 => DmaJob::linear(l1, l2, len, dir),
            });
        }
    }
    let mut dma = Dma::new(cfg.dma, cfg.tcdm);
    let mut mem = Tcdm::new(cfg.tcdm);
    let mut total = 0;
    for batch in jobs.chunks(cfg.dma.max_outstanding) {
        for j in batch {
            dma.enqueue(*j)?;
        }
        total += run_dma_alone(&mut dma, &mut mem)?;
    }
    Ok(total)
}

/// 640 - 128 x4 - 8 - 128 x4 - 640.
pub fn autoencoder_layers() -> Vec<AeLayer> {
    let widths = [AE_IO, AE_HIDDEN, AE_HIDDEN, AE_HIDDEN, AE_HIDDEN, AE_LATENT, AE_HIDDEN, AE_HIDDEN, AE_HIDDEN, AE_HIDDEN, AE_IO];
    widths.windows(2).map(|w| AeLayer { n_in: w[0], n_out: w[1] }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GemmRole {
    Forward,
    InputGrad,
    WeightGrad,
}

/// `Z[m x n] = A[m x k] * B[k x n]`. The flags say whether the operand, as
/// stored, is contiguous along `k`; a non-contiguous operand needs a
/// transpose before the TPE can read it, while the cores just use strided loads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gemm {
    pub role: GemmRole,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub a_contig: bool,
    pub b_contig: bool,
}

impl Gemm {
    pub fn macs(&self) -> u64 {
        (self.m * self.n * self.k) as u64
    }
}

/// Software binary16 matmul on the cores.
///
/// Cores split the output rows (or the columns of a short output) and run the same loop: per pair of
/// `k`, one word load for a `k`-contiguous operand or two halfword loads and
/// a pack for a strided one, then one 2-lane FMA; a lane reduction and a
/// store close the element. One round (every core producing one element) is
/// simulated with integer stand-ins for the FP instructions, which captures
/// issue, load-use and bank-conflict cost; the shared-FPU limit (two cores
/// per FPU, one op per cycle) is applied on top.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwFp16Timing {
    pub cycles: u64,
    pub round_cycles: u64,
    pub rounds: u64,
    pub fpu_ops_per_elem: u64,
}

pub const CORES_PER_FPU: u64 = 2;

fn lh(rd: Reg, base: Reg, stride: i32) -> Instr {
    Instr::Load { rd, base, offset: stride, post_inc: true, width: Width::H, signed: false }
}

fn lw(rd: Reg, base: Reg) -> Instr {
    Instr::Load { rd, base, offset: 4, post_inc: true, width: Width::W, signed: false }
}

fn alu(op: AluOp, rd: Reg, rs1: Reg, rhs: Operand) -> Instr {
    Instr::Alu { op, rd, rs1, rhs }
}

/// Bytes of bank interleaving period; strides are reduced modulo this so a
/// representative round stays inside L1 with the same bank sequence.
fn bank_period(cfg: &ClusterConfig) -> usize {
    cfg.tcdm.n_banks * 4
}

fn sw_round_program(g: &Gemm, elem: usize, cfg: &ClusterConfig) -> Result<Program> {
    const A: Reg = 1;
    const B: Reg = 2;
    const ACC: Reg = 3;
    const X0: Reg = 4;
    const X1: Reg = 5;
    const Y0: Reg = 6;
    const Y1: Reg = 7;
    const T: Reg = 8;
    let period = bank_period(cfg);
    // rows are split across cores when there are enough of them, each core
    // starting its sweep over columns at its own index
    let (i, j) = if g.m >= cfg.n_cores { (elem, elem % g.n) } else { (0, elem) };
    // stored layouts: contiguous operand rows of k halfwords, strided
    // operands with a row pitch of m (A) or n (B) halfwords
    let a_base = if g.a_contig { i * 2 * g.k } else { 2 * i } % period;
    let a_step = if g.a_contig { 0 } else { (2 * g.m % period) as i32 };
    let b_base = period + if g.b_contig { j * 2 * g.k } else { 2 * j } % period;
    let b_step = if g.b_contig { 0 } else { (2 * g.n % period) as i32 };
    let out = 4 * period + 2 * elem;
    let mut b = ProgramBuilder::new();
    b.li(A, a_base as i32).li(B, b_base as i32).li(ACC, 0);
    let operand = |b: &mut ProgramBuilder, contig: bool, base: Reg, step: i32, r0: Reg, r1: Reg| {
        if contig {
            b.push(lw(r0, base));
        } else {
            b.push(lh(r0, base, step));
            b.push(lh(r1, base, step));
        }
    };
    let pack = |b: &mut ProgramBuilder, contig: bool, r0: Reg, r1: Reg| {
        if !contig {
            b.push(alu(AluOp::Or, r0, r0, Operand::Reg(r1)));
        }
    };
    if g.k >= 2 {
        b.repeat((g.k / 2) as u32, LoopKind::Hw, |b| {
            // strided loads first so the packs do not wait on them
            operand(b, g.b_contig, B, b_step, Y0, Y1);
            operand(b, g.a_contig, A, a_step, X0, X1);
            pack(b, g.b_contig, Y0, Y1);
            pack(b, g.a_contig, X0, X1);
            b.push(alu(AluOp::Add, ACC, X0, Operand::Reg(Y0)));
        });
    }
    if g.k % 2 == 1 {
        b.push(lh(X0, A, 0)).push(lh(Y0, B, 0));
        b.push(alu(AluOp::Add, ACC, ACC, Operand::Reg(X0)));
    }
    b.push(alu(AluOp::Srl, T, ACC, Operand::Imm(16)));
    b.push(alu(AluOp::Add, ACC, ACC, Operand::Reg(T)));
    b.li(T, out as i32);
    b.push(Instr::Store { rs: ACC, base: T, offset: 0, post_inc: false, width: Width::H });
    b.build()
}

pub fn sw_fp16_gemm(g: &Gemm, cfg: &ClusterConfig) -> Result<SwFp16Timing> {
    if g.m * g.n * g.k == 0 {
        return Err(SimError::Validation("empty matmul".into()));
    }
    let elems = g.m * g.n;
    let cores = cfg.n_cores.min(if g.m >= cfg.n_cores { g.m } else { g.n });
    let progs = (0..cores).map(|c| sw_round_program(g, c, cfg).map(Arc::new)).collect::<Result<Vec<_>>>()?;
    let mut cl = Cluster::new(*cfg)?;
    cl.load_programs(progs)?;
    let sim = cl.run(u64::MAX)?;
    // one FMA per k pair (plus a scalar one for odd k) and the lane reduction
    let fpu_ops = (g.k / 2 + g.k % 2 + 1) as u64;
    let round_cycles = sim.max(CORES_PER_FPU * fpu_ops);
    let rounds = elems.div_ceil(cfg.n_cores) as u64;
    Ok(SwFp16Timing { cycles: round_cycles * rounds, round_cycles, rounds, fpu_ops_per_elem: fpu_ops })
}

fn fp16_bytes(v: &[Fp16]) -> Vec<u8> {
    v.iter().flat_map(|h| h.0.to_le_bytes()).collect()
}

fn fp16_from_bytes(b: &[u8]) -> Vec<Fp16> {
    b.chunks_exact(2).map(|c| Fp16(u16::from_le_bytes([c[0], c[1]]))).collect()
}

fn offload_run(cfg: &ClusterConfig, inputs: &[(u32, Vec<u8>)], prog: Program, out: (u32, usize)) -> Result<(u64, Vec<u8>)> {
    let mut c = Cluster::new(*cfg)?;
    for (a, bytes) in inputs {
        c.mem_mut().write_bytes(*a, bytes)?;
    }
    c.load_programs(vec![Arc::new(prog)])?;
    let cycles = c.run(u64::MAX)?;
    Ok((cycles, c.mem().read_bytes(out.0, out.1)?))
}

fn align64(n: usize) -> usize {
    n.next_multiple_of(64)
}

/// `A[m x k] * B[k x n]` on the TPE, split into column blocks that fit L1,
/// one offloaded job per block. Returns total cycles and the row-major result.
pub fn tpe_gemm(a: &[Fp16], b: &[Fp16], m: usize, n: usize, k: usize, cfg: &ClusterConfig) -> Result<(u64, Vec<Fp16>)> {
    let l1 = cfg.tcdm.total_bytes();
    let group = cfg.tpe.depth();
    let fits = |nc: usize| align64(2 * m * k) + align64(2 * k * nc) + 2 * m * nc <= l1;
    let nc = if fits(n) {
        n
    } else {
        (1..=n / group).rev().map(|g| g * group).find(|&nc| fits(nc)).ok_or_else(|| SimError::Validation(format!("{m}x{k} operand leaves no room in L1")))?
    };
    let a_bytes = fp16_bytes(a);
    let mut z = vec![Fp16::ZERO; m * n];
    let mut total = 0;
    for j0 in (0..n).step_by(nc) {
        let w = nc.min(n - j0);
        let tile: Vec<Fp16> = (0..k).flat_map(|r| b[r * n + j0..r * n + j0 + w].iter().copied()).collect();
        let wb = align64(a_bytes.len());
        let zb = wb + align64(2 * k * w);
        let job = TpeJob::dense(0, wb as u32, zb as u32, m as u32, w as u32, k as u32);
        let (t, out) = offload_run(cfg, &[(0, a_bytes.clone()), (wb as u32, fp16_bytes(&tile))], tpe_offload_program(&job)?, (zb as u32, 2 * m * w))?;
        total += t;
        for (r, row) in fp16_from_bytes(&out).chunks(w).enumerate() {
            z[r * n + j0..r * n + j0 + w].copy_from_slice(row);
        }
    }
    Ok((total, z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transposer {
    Cores,
    DataMover,
}

/// Transpose of a `rows x cols` binary16 matrix, in row bands that fit L1.
pub fn transpose16(src: &[Fp16], rows: usize, cols: usize, by: Transposer, cfg: &ClusterConfig) -> Result<(u64, Vec<Fp16>)> {
    let half = cfg.tcdm.total_bytes() / 2;
    let band = (half / (2 * cols)) & !1;
    if band == 0 {
        return Err(SimError::Validation(format!("{cols}-wide rows do not fit half of L1")));
    }
    let mut out = vec![Fp16::ZERO; rows * cols];
    let mut total = 0;
    for r0 in (0..rows).step_by(band) {
        let h = band.min(rows - r0);
        let bytes = fp16_bytes(&src[r0 * cols..(r0 + h) * cols]);
        let dst = half as u32;
        let prog = match by {
            Transposer::DataMover => dm_offload_program(&DmJob { src_base: 0, dst_base: dst, d: 16, rows: h as u32, cols: cols as u32 })?,
            Transposer::Cores => {
                let mut p = gen_sw_transpose16(h, cols, 0, dst, cfg.n_cores)?;
                let mut c = Cluster::new(*cfg)?;
                c.mem_mut().write_bytes(0, &bytes)?;
                let n = p.len();
                c.load_programs(p.drain(..n).map(Arc::new).collect())?;
                let t = c.run(u64::MAX)?;
                total += t;
                let got = fp16_from_bytes(&c.mem().read_bytes(dst, 2 * h * cols)?);
                scatter(&mut out, &got, r0, h, rows, cols);
                continue;
            }
        };
        let (t, got) = offload_run(cfg, &[(0, bytes)], prog, (dst, 2 * h * cols))?;
        total += t;
        scatter(&mut out, &fp16_from_bytes(&got), r0, h, rows, cols);
    }
    Ok((total, out))
}

/// Place a `cols x h` transposed band into columns `r0..r0+h` of the `cols x rows` result.
fn scatter(out: &mut [Fp16], band: &[Fp16], r0: usize, h: usize, rows: usize, cols: usize) {
    for c in 0..cols {
        out[c * rows + r0..c * rows + r0 + h].copy_from_slice(&band[c * h..(c + 1) * h]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AeRung {
    Sw,
    Tpe,
    TpeDataMover,
}

impl AeRung {
    pub const ALL: [AeRung; 3] = [AeRung::Sw, AeRung::Tpe, AeRung::TpeDataMover];
}

impl fmt::Display for AeRung {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AeRung::Sw => "sw",
            AeRung::Tpe => "tpe",
            AeRung::TpeDataMover => "tpe-datamover",
        })
    }
}

impl FromStr for AeRung {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        AeRung::ALL
            .into_iter()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| SimError::Parse(format!("unknown autoencoder configuration '{s}'")))
    }
}

/// Cycles of one layer's training step on each configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AeLayerRun {
    pub layer: AeLayer,
    pub macs: u64,
    pub sw: u64,
    pub tpe_matmul: u64,
    /// L2 traffic time of the step, overlapped with compute.
    pub dma: u64,
    pub transpose_cores: u64,
    pub transpose_dm: u64,
    /// Every TPE product matched the binary16 chain oracle.
    pub matches_oracle: bool,
}

impl AeLayerRun {
    pub fn cycles(&self, r: AeRung) -> u64 {
        let compute = match r {
            AeRung::Sw => self.sw,
            AeRung::Tpe => self.tpe_matmul + self.transpose_cores,
            AeRung::TpeDataMover => self.tpe_matmul + self.transpose_dm,
        };
        compute.max(self.dma)
    }

    /// Speedup of the matmuls on the TPE over the cores, each bounded below
    /// by the layer's DMA time; transposes are left out.
    pub fn tpe_speedup(&self) -> f64 {
        self.sw.max(self.dma) as f64 / self.tpe_matmul.max(self.dma) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeRun {
    pub layers: Vec<AeLayerRun>,
}

impl AeRun {
    pub fn cycles(&self, r: AeRung) -> u64 {
        self.layers.iter().map(|l| l.cycles(r)).sum()
    }

    pub fn speedup(&self, r: AeRung) -> f64 {
        self.cycles(AeRung::Sw) as f64 / self.cycles(r) as f64
    }
}

fn random_fp16(n: usize, rng: &mut impl rand::Rng) -> Vec<Fp16> {
    (0..n).map(|_| Fp16::from_f64(rng.gen_range(-1.0..1.0))).collect()
}

/// Run every layer with random operands. Layers are independent: each gets
/// its own activations, output gradient and weights.
pub fn run_autoencoder(cfg: &ClusterConfig, seed: u64) -> Result<AeRun> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for (li, l) in autoencoder_layers().into_iter().enumerate() {
        let first = li == 0;
        let x = random_fp16(AE_BATCH * l.n_in, &mut rng);
        let w = random_fp16(l.n_in * l.n_out, &mut rng);
        let dz = random_fp16(AE_BATCH * l.n_out, &mut rng);
        let mut run = AeLayerRun { layer: l, macs: l.macs(first), sw: 0, tpe_matmul: 0, dma: dma_transfer_cycles(&l.transfers(first), cfg)?, transpose_cores: 0, transpose_dm: 0, matches_oracle: true };
        for g in l.gemms(first) {
            run.sw += sw_fp16_gemm(&g, cfg)?.cycles;
            let (a, b) = match g.role {
                GemmRole::Forward => (x.clone(), w.clone()),
                GemmRole::InputGrad => {
                    let (tc, wt) = transpose16(&w, l.n_in, l.n_out, Transposer::Cores, cfg)?;
                    let (td, wt2) = transpose16(&w, l.n_in, l.n_out, Transposer::DataMover, cfg)?;
                    run.transpose_cores += tc;
                    run.transpose_dm += td;
                    run.matches_oracle &= wt == wt2;
                    (dz.clone(), wt)
                }
                GemmRole::WeightGrad => {
                    let (tc, xt) = transpose16(&x, AE_BATCH, l.n_in, Transposer::Cores, cfg)?;
                    let (td, xt2) = transpose16(&x, AE_BATCH, l.n_in, Transposer::DataMover, cfg)?;
                    run.transpose_cores += tc;
                    run.transpose_dm += td;
                    run.matches_oracle &= xt == xt2;
                    (xt, dz.clone())
                }
            };
            let (t, z) = tpe_gemm(&a, &b, g.m, g.n, g.k, cfg)?;
            run.tpe_matmul += t;
            run.matches_oracle &= z == matmul_fp16_chain(&a, &b, g.m, g.n, g.k);
        }
        layers.push(run);
    }
    Ok(AeRun { layers })
}
