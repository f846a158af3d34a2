//! Software kernels for the cores (depthwise, layout transposition) and the
//! programs that hand work to the engines through the control registers.

use crate::ctrl;
use crate::datamover::DmJob;
use crate::dwe::{DweJob, Requant};
use crate::error::{Result, SimError};
use crate::numerics::{LaneFormat, Precision};
use crate::rvnn::{AluOp, Instr, LoopKind, Operand, Program, ProgramBuilder, Reg, Src, Width};
use crate::tpe::TpeJob;

/// Depthwise 3x3, stride 1, on a zero-padded CHW int8 input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwDepthwise {
    /// Padded input height and width.
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub requant: Requant,
    pub in_base: u32,
    /// Weights as `[c][3][4]` bytes, the fourth tap of every row zero.
    pub w_base: u32,
    /// Dense CHW output of `(h-2) x (w-2)` per channel.
    pub out_base: u32,
}

impl SwDepthwise {
    pub fn out_h(&self) -> usize {
        self.h.saturating_sub(2)
    }

    pub fn out_w(&self) -> usize {
        self.w.saturating_sub(2)
    }

    pub fn macs(&self) -> u64 {
        (self.out_h() * self.out_w() * self.c * 9) as u64
    }
}

/// `[c][9]` weights to the word-per-row layout of the software kernel.
pub fn sw_depthwise_weights(w: &[i8]) -> Vec<u8> {
    w.chunks(9).flat_map(|f| (0..3).flat_map(move |r| [f[3 * r] as u8, f[3 * r + 1] as u8, f[3 * r + 2] as u8, 0])).collect()
}

fn alu(op: AluOp, rd: Reg, rs1: Reg, rhs: Operand) -> Instr {
    Instr::Alu { op, rd, rs1, rhs }
}

fn lbu(rd: Reg, base: Reg, offset: i32) -> Instr {
    Instr::Load { rd, base, offset, post_inc: false, width: Width::B, signed: false }
}

fn requant_tail(b: &mut ProgramBuilder, acc: Reg, rq: Requant) {
    if rq.relu {
        b.push(alu(AluOp::Max, acc, acc, Operand::Reg(0)));
    }
    if rq.shift > 0 {
        b.push(alu(AluOp::Sra, acc, acc, Operand::Imm(rq.shift as i32)));
    }
    b.push(Instr::Clip { rd: acc, rs: acc, bits: 8 });
}

/// Channels are dealt round-robin to cores. Each output column is walked top
/// to bottom with a three-register window of packed input rows; each new row
/// costs three byte loads and four ALU operations, each output three dotps.
pub fn gen_sw_depthwise(j: &SwDepthwise, n_cores: usize) -> Result<Vec<Program>> {
    if j.c == 0 || j.out_h() == 0 || j.out_w() == 0 {
        return Err(SimError::Validation("empty depthwise layer".into()));
    }
    const P: Reg = 1; // input column pointer
    const Q: Reg = 2; // output pointer
    const WP: Reg = 3;
    const WGT: Reg = 4; // 4..=6
    const ROW: Reg = 7; // 7..=9 window
    const T1: Reg = 10;
    const T2: Reg = 11;
    const ACC: Reg = 12;
    let (ho, wo) = (j.out_h(), j.out_w());
    let fmt = LaneFormat::signed(Precision::B8);
    (0..n_cores)
        .map(|core| {
            let mut b = ProgramBuilder::new();
            b.push(Instr::CsrFmt { act: fmt, wgt: fmt, mpc_auto: true, mpc_stride: 1 });
            for ch in (core..j.c).step_by(n_cores) {
                b.li(WP, (j.w_base as usize + 12 * ch) as i32);
                for r in 0..3 {
                    b.push(Instr::Load { rd: WGT + r, base: WP, offset: 4, post_inc: true, width: Width::W, signed: false });
                }
                for x in 0..wo {
                    b.li(P, (j.in_base as usize + ch * j.h * j.w + x) as i32);
                    b.li(Q, (j.out_base as usize + ch * ho * wo + x) as i32);
                    let build = |b: &mut ProgramBuilder, dst: Reg| {
                        b.push(lbu(dst, P, 0)).push(lbu(T1, P, 1)).push(lbu(T2, P, 2));
                        b.push(alu(AluOp::Sll, T1, T1, Operand::Imm(8)));
                        b.push(alu(AluOp::Or, dst, dst, Operand::Reg(T1)));
                        b.push(alu(AluOp::Sll, T2, T2, Operand::Imm(16)));
                        b.push(alu(AluOp::Or, dst, dst, Operand::Reg(T2)));
                        b.addi(P, P, j.w as i32);
                    };
                    build(&mut b, ROW);
                    build(&mut b, ROW + 1);
                    for y in 0..ho {
                        build(&mut b, ROW + ((y + 2) % 3) as u8);
                        b.li(ACC, 0);
                        for dy in 0..3 {
                            let row = ROW + ((y + dy) % 3) as u8;
                            b.push(Instr::Sdotp { acc: ACC, act: Src::Gp(row), wgt: Src::Gp(WGT + dy as u8) });
                        }
                        requant_tail(&mut b, ACC, j.requant);
                        b.push(Instr::Store { rs: ACC, base: Q, offset: wo as i32, post_inc: true, width: Width::B });
                    }
                }
            }
            b.push(Instr::Barrier);
            b.build()
        })
        .collect()
}

/// Direction of an int8 layout change between HWC and CHW.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marshal {
    HwcToChw,
    ChwToHwc,
}

/// Plain triple loop with both 3-D indices recomputed for every byte, the
/// innermost loop over channels (HWC to CHW) or pixels (CHW to HWC) with a
/// counter and branch. Rows `y` are dealt round-robin to cores.
pub fn gen_sw_transpose(h: usize, w: usize, c: usize, dir: Marshal, src: u32, dst: u32, n_cores: usize) -> Result<Vec<Program>> {
    if h * w * c == 0 {
        return Err(SimError::Validation("empty transpose".into()));
    }
    const Y: Reg = 1;
    const X: Reg = 2;
    const C: Reg = 3;
    const RH: Reg = 4;
    const RW: Reg = 5;
    const RC: Reg = 6;
    const SRC: Reg = 7;
    const DST: Reg = 8;
    const T: Reg = 9;
    const U: Reg = 10;
    const V: Reg = 11;
    let hwc = |b: &mut ProgramBuilder, rd: Reg, base: Reg| {
        b.push(alu(AluOp::Mul, rd, Y, Operand::Reg(RW)));
        b.push(alu(AluOp::Add, rd, rd, Operand::Reg(X)));
        b.push(alu(AluOp::Mul, rd, rd, Operand::Reg(RC)));
        b.push(alu(AluOp::Add, rd, rd, Operand::Reg(C)));
        b.push(alu(AluOp::Add, rd, rd, Operand::Reg(base)));
    };
    let chw = |b: &mut ProgramBuilder, rd: Reg, base: Reg| {
        b.push(alu(AluOp::Mul, rd, C, Operand::Reg(RH)));
        b.push(alu(AluOp::Add, rd, rd, Operand::Reg(Y)));
        b.push(alu(AluOp::Mul, rd, rd, Operand::Reg(RW)));
        b.push(alu(AluOp::Add, rd, rd, Operand::Reg(X)));
        b.push(alu(AluOp::Add, rd, rd, Operand::Reg(base)));
    };
    let body = |b: &mut ProgramBuilder| {
        match dir {
            Marshal::HwcToChw => hwc(b, T, SRC),
            Marshal::ChwToHwc => chw(b, T, SRC),
        }
        b.push(lbu(V, T, 0));
        match dir {
            Marshal::HwcToChw => chw(b, U, DST),
            Marshal::ChwToHwc => hwc(b, U, DST),
        }
        b.push(Instr::Store { rs: V, base: U, offset: 0, post_inc: false, width: Width::B });
    };
    (0..n_cores)
        .map(|core| {
            let mut b = ProgramBuilder::new();
            b.li(RH, h as i32).li(RW, w as i32).li(RC, c as i32).li(SRC, src as i32).li(DST, dst as i32);
            for y in (core..h).step_by(n_cores) {
                b.li(Y, y as i32);
                match dir {
                    Marshal::HwcToChw => {
                        b.li(X, 0);
                        b.repeat(w as u32, LoopKind::Sw, |b| {
                            b.li(C, 0);
                            b.repeat(c as u32, LoopKind::Sw, |b| {
                                body(b);
                                b.addi(C, C, 1);
                            });
                            b.addi(X, X, 1);
                        });
                    }
                    Marshal::ChwToHwc => {
                        b.li(C, 0);
                        b.repeat(c as u32, LoopKind::Sw, |b| {
                            b.li(X, 0);
                            b.repeat(w as u32, LoopKind::Sw, |b| {
                                body(b);
                                b.addi(X, X, 1);
                            });
                            b.addi(C, C, 1);
                        });
                    }
                }
            }
            b.push(Instr::Barrier);
            b.build()
        })
        .collect()
}

/// Register writes of a job, then wait for its event and acknowledge it.
/// Transpose of a `rows x cols` matrix of 16-bit elements with both
/// addresses recomputed per element; rows are dealt round-robin to cores.
pub fn gen_sw_transpose16(rows: usize, cols: usize, src: u32, dst: u32, n_cores: usize) -> Result<Vec<Program>> {
    if rows * cols == 0 {
        return Err(SimError::Validation("empty transpose".into()));
    }
    const R: Reg = 1;
    const C: Reg = 2;
    const RR: Reg = 3;
    const RC: Reg = 4;
    const SRC: Reg = 5;
    const DST: Reg = 6;
    const T: Reg = 7;
    const U: Reg = 8;
    const V: Reg = 9;
    (0..n_cores)
        .map(|core| {
            let mut b = ProgramBuilder::new();
            b.li(RR, rows as i32).li(RC, cols as i32).li(SRC, src as i32).li(DST, dst as i32);
            for r in (core..rows).step_by(n_cores) {
                b.li(R, r as i32).li(C, 0);
                b.repeat(cols as u32, LoopKind::Sw, |b| {
                    b.push(alu(AluOp::Mul, T, R, Operand::Reg(RC)));
                    b.push(alu(AluOp::Add, T, T, Operand::Reg(C)));
                    b.push(alu(AluOp::Sll, T, T, Operand::Imm(1)));
                    b.push(alu(AluOp::Add, T, T, Operand::Reg(SRC)));
                    b.push(Instr::Load { rd: V, base: T, offset: 0, post_inc: false, width: Width::H, signed: false });
                    b.push(alu(AluOp::Mul, U, C, Operand::Reg(RR)));
                    b.push(alu(AluOp::Add, U, U, Operand::Reg(R)));
                    b.push(alu(AluOp::Sll, U, U, Operand::Imm(1)));
                    b.push(alu(AluOp::Add, U, U, Operand::Reg(DST)));
                    b.push(Instr::Store { rs: V, base: U, offset: 0, post_inc: false, width: Width::H });
                    b.addi(C, C, 1);
                });
            }
            b.build()
        })
        .collect()
}

fn offload(writes: Vec<(u32, u32)>, event: u32) -> Result<Program> {
    let mut b = ProgramBuilder::new();
    for (a, v) in writes {
        b.li(1, a as i32).li(2, v as i32);
        b.push(Instr::Store { rs: 2, base: 1, offset: 0, post_inc: false, width: Width::W });
    }
    b.push(Instr::WaitEvent { mask: event });
    b.li(1, (ctrl::CTRL_BASE + ctrl::EVENTS) as i32).li(2, event as i32);
    b.push(Instr::Store { rs: 2, base: 1, offset: 0, post_inc: false, width: Width::W });
    b.build()
}

pub fn dwe_offload_program(job: &DweJob) -> Result<Program> {
    offload(ctrl::dwe_writes(job), ctrl::EV_DWE)
}

pub fn dm_offload_program(job: &DmJob) -> Result<Program> {
    offload(ctrl::dm_writes(job), ctrl::EV_DM)
}

pub fn tpe_offload_program(job: &TpeJob) -> Result<Program> {
    offload(ctrl::tpe_writes(job), ctrl::EV_TPE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{Cluster, ClusterConfig};
    use crate::workloads::oracle::depthwise3x3;
    use crate::workloads::tensor::{Layout, Tensor, TensorSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn run(c: &mut Cluster, progs: Vec<Program>) -> u64 {
        c.load_programs(progs.into_iter().map(Arc::new).collect()).unwrap();
        c.run(50_000_000).unwrap()
    }

    fn random_i8(n: usize, rng: &mut ChaCha8Rng) -> Vec<i32> {
        (0..n).map(|_| rng.gen_range(-128..=127)).collect()
    }

    #[test]
    fn sw_depthwise_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w, c) = (7, 6, 5);
        let f = LaneFormat::signed(Precision::B8);
        let t = Tensor::from_values(TensorSpec::hwc(h, w, c, f), &random_i8(h * w * c, &mut rng)).unwrap();
        let wts = random_i8(9 * c, &mut rng);
        let rq = Requant { shift: 7, relu: true };
        let want = depthwise3x3(&t, &wts, rq);
        let chw = t.to_layout(Layout::Chw).unwrap();
        let j = SwDepthwise { h, w, c, requant: rq, in_base: 0, w_base: 0x1000, out_base: 0x2000 };
        let mut cl = Cluster::new(ClusterConfig { n_cores: 3, ..ClusterConfig::default() }).unwrap();
        cl.mem_mut().write_bytes(0, &chw.data).unwrap();
        let w8: Vec<i8> = wts.iter().map(|&v| v as i8).collect();
        cl.mem_mut().write_bytes(0x1000, &sw_depthwise_weights(&w8)).unwrap();
        run(&mut cl, gen_sw_depthwise(&j, 3).unwrap());
        let out = cl.mem().read_bytes(0x2000, (h - 2) * (w - 2) * c).unwrap();
        let out = Tensor::from_bytes(TensorSpec::new(&[h - 2, w - 2, c], f.into(), Layout::Chw), out).unwrap();
        let got: Vec<i8> = out.to_layout(Layout::Hwc).unwrap().values().iter().map(|&v| v as i8).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn sw_transpose_round_trip_and_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (h, w, c) = (4, 3, 8);
        let f = LaneFormat::signed(Precision::B8);
        let t = Tensor::from_values(TensorSpec::hwc(h, w, c, f), &random_i8(h * w * c, &mut rng)).unwrap();
        let mut cl = Cluster::new(ClusterConfig { n_cores: 1, ..ClusterConfig::default() }).unwrap();
        cl.mem_mut().write_bytes(0, &t.data).unwrap();
        let cycles = run(&mut cl, gen_sw_transpose(h, w, c, Marshal::HwcToChw, 0, 0x1000, 1).unwrap());
        let n = h * w * c;
        assert_eq!(cl.mem().read_bytes(0x1000, n).unwrap(), t.to_layout(Layout::Chw).unwrap().data);
        // 16 cycles per element plus loop setup and latch of the outer loops
        let per = cycles as f64 / n as f64;
        assert!((16.0..17.5).contains(&per), "{per}");
        run(&mut cl, gen_sw_transpose(h, w, c, Marshal::ChwToHwc, 0x1000, 0x2000, 1).unwrap());
        assert_eq!(cl.mem().read_bytes(0x2000, n).unwrap(), t.data);
    }

    #[test]
    fn offload_program_runs_dwe() {
        let mut cl = Cluster::new(ClusterConfig::default()).unwrap();
        let job = DweJob { in_base: 0, w_base: 0x1000, out_base: 0x2000, h: 5, w: 5, c: 16, requant: Requant::default() };
        let t = run(&mut cl, vec![dwe_offload_program(&job).unwrap()]);
        assert!(t > crate::dwe::dwe_cycle_model(&job).unwrap().cycles);
        assert_eq!(cl.events(), 0);
    }
}
