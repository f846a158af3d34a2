//! Convolution kernels for the cores, in three flavours.
//!
//! All variants read a zero-padded HWC input with activations packed along
//! channels, and weights packed as `[f][dy][dx][c]`. Every output row is owned
//! by one core (rows are dealt round-robin). The reduction runs over `k` row
//! segments of `k * c_in` contiguous elements each.
//!
//! * `Ri5cy`: 2 pixels x 4 filters, 8-bit SIMD only. Sub-byte operands are
//!   expanded with `unpack` (one per 4-element group, `unpack_cost` cycles).
//! * `Mixed`: same layout with mixed-precision dotp and explicit loads.
//! * `MixedMl`: 4 pixels x 4 filters on the NN register file, every load but
//!   one per K-step folded into a MAC-load.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::{Cluster, ClusterConfig, ClusterMetrics};
use crate::dwe::Requant;
use crate::error::{Result, SimError};
use crate::numerics::{LaneFormat, Precision};
use crate::rvnn::{AluOp, Instr, LoopKind, NnLoad, Operand, Program, ProgramBuilder, Reg, Src, Width};
use crate::tcdm::Tcdm;

use super::oracle::ConvShape;
use super::tensor::{Tensor, TensorSpec};

/// Default cost of one software sub-byte expansion (shift + masked shift).
pub const DEFAULT_UNPACK_COST: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoreVariant {
    Ri5cy { unpack_cost: u32 },
    Mixed,
    MixedMl,
}

impl CoreVariant {
    pub const RI5CY: CoreVariant = CoreVariant::Ri5cy { unpack_cost: DEFAULT_UNPACK_COST };

    /// Output pixels and filters per register tile.
    pub fn tile(&self) -> (usize, usize) {
        match self {
            CoreVariant::MixedMl => (4, 4),
            _ => (2, 4),
        }
    }
}

impl fmt::Display for CoreVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreVariant::Ri5cy { unpack_cost } if *unpack_cost == DEFAULT_UNPACK_COST => f.write_str("ri5cy"),
            CoreVariant::Ri5cy { unpack_cost } => write!(f, "ri5cy:{unpack_cost}"),
            CoreVariant::Mixed => f.write_str("mixed"),
            CoreVariant::MixedMl => f.write_str("mixed-ml"),
        }
    }
}

impl FromStr for CoreVariant {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ri5cy" => Ok(CoreVariant::RI5CY),
            "mixed" => Ok(CoreVariant::Mixed),
            "mixed-ml" | "ml" => Ok(CoreVariant::MixedMl),
            _ => match s.strip_prefix("ri5cy:").map(str::parse::<u32>) {
                Some(Ok(c)) if c > 0 => Ok(CoreVariant::Ri5cy { unpack_cost: c }),
                _ => Err(SimError::Parse(format!("unknown kernel variant `{s}`"))),
            },
        }
    }
}

/// A convolution layer and where its operands live in L1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub shape: ConvShape,
    pub act: LaneFormat,
    pub wgt: LaneFormat,
    pub requant: Requant,
    pub in_base: u32,
    pub w_base: u32,
    pub out_base: u32,
    /// Zero border left around the HWC output; the border bytes are not written.
    pub out_pad: usize,
}

impl ConvLayer {
    /// 64 filters of 3x3x32 over a 16x16x32 map, padded to keep 16x16.
    pub fn benchmark(act_bits: u32, wgt_bits: u32) -> Result<Self> {
        Ok(Self {
            shape: ConvShape { h: 16, w: 16, c_in: 32, c_out: 64, k: 3, pad: 1 },
            act: LaneFormat::unsigned(Precision::from_bits(act_bits)?),
            wgt: LaneFormat::signed(Precision::from_bits(wgt_bits)?),
            requant: Requant { shift: 6, relu: true },
            in_base: 0,
            w_base: 0x4000,
            out_base: 0xA000,
            out_pad: 0,
        })
    }

    fn a(&self) -> usize {
        self.act.bits() as usize
    }

    fn w(&self) -> usize {
        self.wgt.bits() as usize
    }

    fn padded_w(&self) -> usize {
        self.shape.w + 2 * self.shape.pad
    }

    fn padded_h(&self) -> usize {
        self.shape.h + 2 * self.shape.pad
    }

    /// Elements in one reduction row segment.
    fn seg(&self) -> usize {
        self.shape.k * self.shape.c_in
    }

    fn pixel_bytes(&self) -> usize {
        self.shape.c_in * self.a() / 8
    }

    pub fn input_bytes(&self) -> usize {
        self.padded_h() * self.padded_w() * self.pixel_bytes()
    }

    pub fn filter_bytes(&self) -> usize {
        self.shape.k * self.seg() * self.w() / 8
    }

    /// Output footprint including the border.
    pub fn output_bytes(&self) -> usize {
        (self.shape.out_h() + 2 * self.out_pad) * self.out_row() * self.shape.c_out
    }

    fn out_row(&self) -> usize {
        self.shape.out_w() + 2 * self.out_pad
    }

    fn in_addr(&self, y: usize, x: usize) -> u32 {
        self.in_base + ((y * self.padded_w() + x) * self.pixel_bytes()) as u32
    }

    fn out_addr(&self, y: usize, x: usize, f: usize) -> u32 {
        let p = self.out_pad;
        self.out_base + (((y + p) * self.out_row() + x + p) * self.shape.c_out + f) as u32
    }

    /// Pointer correction from the end of one row segment to the start of the next.
    fn seg_fix(&self) -> i32 {
        ((self.padded_w() - self.shape.k) * self.pixel_bytes()) as i32
    }

    pub fn validate(&self, variant: CoreVariant, l1_bytes: usize) -> Result<()> {
        let s = &self.shape;
        let bad = |m: String| Err(SimError::Validation(m));
        if s.c_in == 0 || s.c_out == 0 || s.k == 0 || s.out_h() == 0 || s.out_w() == 0 {
            return bad("empty convolution".into());
        }
        if !matches!(variant, CoreVariant::Ri5cy { .. }) && self.act.bits() < self.wgt.bits() {
            return bad(format!("mixed-precision dotp needs act >= wgt precision, got {} x {}", self.act, self.wgt));
        }
        if self.a() > 8 || self.w() > 8 {
            return bad("convolution kernels take 2-, 4- or 8-bit operands".into());
        }
        if !(s.c_in * self.a()).is_multiple_of(32) || !(s.c_in * self.w()).is_multiple_of(32) {
            return bad(format!("c_in={} does not fill whole words at {} x {}", s.c_in, self.act, self.wgt));
        }
        let (px, pf) = variant.tile();
        if !s.out_w().is_multiple_of(px) || !s.c_out.is_multiple_of(pf) {
            return bad(format!("output {}x{} does not tile by {px} pixels x {pf} filters", s.out_w(), s.c_out));
        }
        let spans = [
            (self.in_base, self.input_bytes()),
            (self.w_base, s.c_out * self.filter_bytes()),
            (self.out_base, self.output_bytes()),
        ];
        for (i, &(a, n)) in spans.iter().enumerate() {
            // kernels may prefetch one row or one word past an operand
            if a % 4 != 0 || a as usize + n + 4 * self.padded_w() * self.pixel_bytes() > l1_bytes {
                return bad(format!("operand at {a:#x} is misaligned or leaves L1"));
            }
            for &(b, m) in &spans[i + 1..] {
                if (a as usize) < b as usize + m && (b as usize) < a as usize + n {
                    return bad(format!("operands at {a:#x} and {b:#x} overlap"));
                }
            }
        }
        Ok(())
    }

    /// Strip the border from an output image.
    pub fn dense_output(&self, img: &[u8]) -> Vec<i8> {
        let (p, s) = (self.out_pad, &self.shape);
        let mut v = Vec::with_capacity(s.out_h() * s.out_w() * s.c_out);
        for y in p..p + s.out_h() {
            let row = (y * self.out_row() + p) * s.c_out;
            v.extend(img[row..row + s.out_w() * s.c_out].iter().map(|&b| b as i8));
        }
        v
    }

    /// Padded input image and packed weight image.
    pub fn images(&self, input: &Tensor, weights: &[i32]) -> Result<(Vec<u8>, Vec<u8>)> {
        let s = &self.shape;
        if input.spec.dims != [s.h, s.w, s.c_in] {
            return Err(SimError::Shape(format!("input dims {:?} for layer {s:?}", input.spec.dims)));
        }
        if weights.len() != s.c_out * s.k * s.k * s.c_in {
            return Err(SimError::Shape(format!("{} weights for layer {s:?}", weights.len())));
        }
        let mut padded = Tensor::zeros(TensorSpec::hwc(self.padded_h(), self.padded_w(), s.c_in, self.act));
        for y in 0..s.h {
            for x in 0..s.w {
                for c in 0..s.c_in {
                    padded.set(padded.spec.index3(y + s.pad, x + s.pad, c), input.at3(y, x, c))?;
                }
            }
        }
        let wt = Tensor::from_values(TensorSpec::matrix(s.c_out, s.k * s.k * s.c_in, self.wgt.into()), weights)?;
        Ok((padded.data, wt.data))
    }
}

fn sdotp(acc: Reg, act: Reg, wgt: Reg) -> Instr {
    Instr::Sdotp { acc, act: Src::Gp(act), wgt: Src::Gp(wgt) }
}

fn lw(rd: Reg, base: Reg) -> Instr {
    Instr::Load { rd, base, offset: 4, post_inc: true, width: Width::W, signed: false }
}

fn requant_store(b: &mut ProgramBuilder, acc: Reg, base: Reg, off: i32, rq: Requant) {
    if rq.relu {
        b.push(Instr::Alu { op: AluOp::Max, rd: acc, rs1: acc, rhs: Operand::Reg(0) });
    }
    if rq.shift > 0 {
        b.push(Instr::Alu { op: AluOp::Sra, rd: acc, rs1: acc, rhs: Operand::Imm(rq.shift as i32) });
    }
    b.push(Instr::Clip { rd: acc, rs: acc, bits: 8 });
    b.push(Instr::Store { rs: acc, base, offset: off, post_inc: false, width: Width::B });
}

/// Register budget of the 2x4 layouts.
mod r24 {
    pub const ACT_PTR: u8 = 1;
    pub const W_PTR: u8 = 3;
    pub const ACT: u8 = 7;
    pub const W: u8 = 9;
    pub const ACC: u8 = 13;
    pub const ACT_U: u8 = 21;
    pub const W_U: u8 = 23;
    pub const OUT: u8 = 27;
}

/// Register budget of the 4x4 layout.
mod r44 {
    pub const ACT_PTR: u8 = 1;
    pub const W_PTR: u8 = 5;
    pub const ACC: u8 = 9;
    pub const OUT: u8 = 25;
}

fn tile_prologue(b: &mut ProgramBuilder, l: &ConvLayer, y: usize, x: usize, f: usize, px: usize, act_ptr: u8, w_ptr: u8, acc: u8) {
    for p in 0..px {
        b.li(act_ptr + p as u8, l.in_addr(y, x + p) as i32);
    }
    for j in 0..4 {
        b.li(w_ptr + j as u8, (l.w_base as usize + (f + j) * l.filter_bytes()) as i32);
    }
    for i in 0..px * 4 {
        b.li(acc + i as u8, 0);
    }
}

fn tile_epilogue(b: &mut ProgramBuilder, l: &ConvLayer, y: usize, x: usize, f: usize, px: usize, acc: u8, out: u8) {
    b.li(out, l.out_addr(y, x, f) as i32);
    for p in 0..px {
        for j in 0..4 {
            requant_store(b, acc + (4 * p + j) as u8, out, (p * l.shape.c_out + j) as i32, l.requant);
        }
    }
}

/// One K-step of the 2x4 mixed kernel; weights reload when `reload`.
fn mixed_step(b: &mut ProgramBuilder, reload: bool) {
    use r24::*;
    b.push(lw(ACT, ACT_PTR)).push(lw(ACT + 1, ACT_PTR + 1));
    if reload {
        for j in 0..4 {
            b.push(lw(W + j, W_PTR + j));
        }
    }
    for p in 0..2 {
        for j in 0..4 {
            b.push(sdotp(ACC + 4 * p + j, ACT + p, W + j));
        }
    }
}

fn mixed_tile(b: &mut ProgramBuilder, l: &ConvLayer) {
    let g = l.a() / l.w();
    let words_per_seg = (l.seg() * l.w() / 32) as u32;
    for seg in 0..l.shape.k {
        b.repeat(words_per_seg, LoopKind::Hw, |b| {
            for s in 0..g {
                mixed_step(b, s == 0);
            }
        });
        if seg + 1 < l.shape.k {
            b.addi(r24::ACT_PTR, r24::ACT_PTR, l.seg_fix());
            b.addi(r24::ACT_PTR + 1, r24::ACT_PTR + 1, l.seg_fix());
        }
    }
}

/// One 4-element step of the 8-bit baseline at position `t` of the unpack period.
fn ri5cy_step(b: &mut ProgramBuilder, l: &ConvLayer, t: usize, cost: u32) {
    use r24::*;
    let (a, w) = (l.a(), l.w());
    let (parts_a, parts_w) = (8 / a, 8 / w);
    if t.is_multiple_of(parts_a) {
        b.push(lw(ACT, ACT_PTR)).push(lw(ACT + 1, ACT_PTR + 1));
    }
    if t.is_multiple_of(parts_w) {
        for j in 0..4 {
            b.push(lw(W + j, W_PTR + j));
        }
    }
    let act = if a < 8 {
        for p in 0..2 {
            b.push(Instr::Unpack { rd: ACT_U + p, rs: ACT + p, part: (t % parts_a) as u8, from: l.act, cost });
        }
        ACT_U
    } else {
        ACT
    };
    let wgt = if w < 8 {
        for j in 0..4 {
            b.push(Instr::Unpack { rd: W_U + j, rs: W + j, part: (t % parts_w) as u8, from: l.wgt, cost });
        }
        W_U
    } else {
        W
    };
    for p in 0..2 {
        for j in 0..4 {
            b.push(sdotp(ACC + 4 * p + j, act + p, wgt + j));
        }
    }
}

fn ri5cy_tile(b: &mut ProgramBuilder, l: &ConvLayer, cost: u32) {
    let period = 8 / l.w();
    let iters = (l.seg() / 4 / period) as u32;
    for seg in 0..l.shape.k {
        b.repeat(iters, LoopKind::Hw, |b| {
            for t in 0..period {
                ri5cy_step(b, l, t, cost);
            }
        });
        if seg + 1 < l.shape.k {
            b.addi(r24::ACT_PTR, r24::ACT_PTR, l.seg_fix());
            b.addi(r24::ACT_PTR + 1, r24::ACT_PTR + 1, l.seg_fix());
        }
    }
}

/// How the last K-step of a row segment treats cross-step prefetches.
#[derive(Clone, Copy, PartialEq, Eq)]
enum StepEnd {
    /// Prefetch the next step from the running pointers.
    Stream,
    /// Move the activation pointers to the next row segment first.
    SegmentJump(i32),
    /// Final step: nothing to prefetch.
    Last,
}

/// One K-step of the 4x4 MAC-load kernel: 16 dotps with the activation of
/// pixel p in `a(p % 2)`. The loads for pixels 1..3 ride on the dotps of the
/// previous pixel; pixel 3 reloads the weights (when `reload`) and the
/// activation of pixel 0 of the next step.
fn ml_step(b: &mut ProgramBuilder, reload: bool, end: StepEnd) {
    use r44::*;
    let ml = |acc: u8, p: u8, j: u8, load: Option<NnLoad>| Instr::MacLoad {
        acc,
        act: Src::a(p % 2),
        wgt: Src::w(j),
        load,
    };
    let act_load = |p: u8| NnLoad { dest: crate::rvnn::A0 + p % 2, base: ACT_PTR + p, inc: 4 };
    for p in 0..3u8 {
        for j in 0..4u8 {
            let load = (j == 0).then(|| act_load(p + 1));
            b.push(ml(ACC + 4 * p + j, p, j, load));
        }
        if let (2, StepEnd::SegmentJump(fix)) = (p, end) {
            // pixels 1..3 were read for this step; pixel 0 moves before its prefetch
            for q in 0..4 {
                b.addi(ACT_PTR + q, ACT_PTR + q, fix);
            }
        }
    }
    let next_act = end != StepEnd::Last;
    let weights = reload && end != StepEnd::Last;
    if next_act && weights {
        b.push(Instr::LoadNn(act_load(0)));
    }
    for j in 0..4u8 {
        let load = if weights {
            Some(NnLoad { dest: crate::rvnn::W0 + j, base: W_PTR + j, inc: 4 })
        } else if next_act && j == 0 {
            Some(act_load(0))
        } else {
            None
        };
        b.push(ml(ACC + 12 + j, 3, j, load));
    }
}

fn ml_tile(b: &mut ProgramBuilder, l: &ConvLayer) {
    use r44::*;
    let g = l.a() / l.w();
    let words_per_seg = l.seg() * l.w() / 32;
    b.push(Instr::LoadNn(NnLoad { dest: crate::rvnn::A0, base: ACT_PTR, inc: 4 }));
    for j in 0..4 {
        b.push(Instr::LoadNn(NnLoad { dest: crate::rvnn::W0 + j, base: W_PTR + j, inc: 4 }));
    }
    for seg in 0..l.shape.k {
        if words_per_seg > 1 {
            b.repeat(words_per_seg as u32 - 1, LoopKind::Hw, |b| {
                for s in 0..g {
                    ml_step(b, s + 1 == g, StepEnd::Stream);
                }
            });
        }
        let end = if seg + 1 == l.shape.k { StepEnd::Last } else { StepEnd::SegmentJump(l.seg_fix()) };
        for s in 0..g {
            ml_step(b, s + 1 == g, if s + 1 == g { end } else { StepEnd::Stream });
        }
    }
}

/// Per-core programs. Output tiles of `px` pixels by `pf` filters are dealt
/// round-robin, so neighbouring cores work on different filter groups.
pub fn gen_conv_programs(variant: CoreVariant, l: &ConvLayer, n_cores: usize, l1_bytes: usize) -> Result<Vec<Program>> {
    l.validate(variant, l1_bytes)?;
    let (px, pf) = variant.tile();
    let s = &l.shape;
    (0..n_cores)
        .map(|core| {
            let mut b = ProgramBuilder::new();
            let (act, wgt, stride) = match variant {
                CoreVariant::Ri5cy { .. } => (LaneFormat::new(Precision::B8, l.act.signed), LaneFormat::new(Precision::B8, l.wgt.signed), 1),
                CoreVariant::Mixed => (l.act, l.wgt, 8),
                CoreVariant::MixedMl => (l.act, l.wgt, 16),
            };
            b.push(Instr::CsrFmt { act, wgt, mpc_auto: true, mpc_stride: stride });
            let groups = s.c_out / pf;
            let x_tiles = s.out_w() / px;
            for u in (core..s.out_h() * x_tiles * groups).step_by(n_cores) {
                let (y, x, f) = (u / (x_tiles * groups), u / groups % x_tiles * px, u % groups * pf);
                match variant {
                    CoreVariant::Ri5cy { unpack_cost } => {
                        tile_prologue(&mut b, l, y, x, f, px, r24::ACT_PTR, r24::W_PTR, r24::ACC);
                        ri5cy_tile(&mut b, l, unpack_cost);
                        tile_epilogue(&mut b, l, y, x, f, px, r24::ACC, r24::OUT);
                    }
                    CoreVariant::Mixed => {
                        tile_prologue(&mut b, l, y, x, f, px, r24::ACT_PTR, r24::W_PTR, r24::ACC);
                        mixed_tile(&mut b, l);
                        tile_epilogue(&mut b, l, y, x, f, px, r24::ACC, r24::OUT);
                    }
                    CoreVariant::MixedMl => {
                        tile_prologue(&mut b, l, y, x, f, px, r44::ACT_PTR, r44::W_PTR, r44::ACC);
                        ml_tile(&mut b, l);
                        tile_epilogue(&mut b, l, y, x, f, px, r44::ACC, r44::OUT);
                    }
                }
            }
            b.push(Instr::Barrier);
            b.build()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ConvRun {
    pub cycles: u64,
    pub output: Vec<i8>,
    pub metrics: ClusterMetrics,
}

impl ConvRun {
    pub fn cycles_per_output(&self) -> f64 {
        self.cycles as f64 / self.output.len() as f64
    }
}

/// Load the layer into a fresh cluster, run the kernels to completion.
pub fn run_conv(variant: CoreVariant, l: &ConvLayer, input: &Tensor, weights: &[i32], cfg: &ClusterConfig) -> Result<ConvRun> {
    let mut cluster = Cluster::new(*cfg)?;
    let l1 = cluster.mem().config().total_bytes();
    let programs = gen_conv_programs(variant, l, cfg.n_cores, l1)?;
    let (img, wimg) = l.images(input, weights)?;
    load(cluster.mem_mut(), l, &img, &wimg)?;
    cluster.load_programs(programs.into_iter().map(Arc::new).collect())?;
    let cycles = cluster.run(u64::MAX)?;
    let out = cluster.mem().read_bytes(l.out_base, l.output_bytes())?;
    Ok(ConvRun { cycles, output: l.dense_output(&out), metrics: cluster.metrics() })
}

fn load(mem: &mut Tcdm, l: &ConvLayer, img: &[u8], wimg: &[u8]) -> Result<()> {
    mem.write_bytes(l.in_base, img)?;
    mem.write_bytes(l.w_base, wimg)
}

/// Uniformly random operands over the layer's formats.
pub fn random_layer_data(l: &ConvLayer, seed: u64) -> Result<(Tensor, Vec<i32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = &l.shape;
    let (alo, ahi) = l.act.range();
    let (wlo, whi) = l.wgt.range();
    let vals: Vec<i32> = (0..s.h * s.w * s.c_in).map(|_| rng.gen_range(alo..=ahi) as i32).collect();
    let input = Tensor::from_values(TensorSpec::hwc(s.h, s.w, s.c_in, l.act), &vals)?;
    let w = (0..s.c_out * s.k * s.k * s.c_in).map(|_| rng.gen_range(wlo..=whi) as i32).collect();
    Ok((input, w))
}
