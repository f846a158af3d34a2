//! MobileNetV2 bottleneck stack, tiled through L1 and streamed from L2 with
//! double-buffered DMA.
//!
//! Feature maps live in L2 as dense int8 HWC and ping-pong between two
//! buffers. Pointwise layers run the mac-load kernel (int8 activations, int4
//! weights) on the cores; depthwise layers run on the DWE, which only does
//! valid padding, so the zero border is assembled in L1 by DMA from a zero
//! region in L2. Stride-2 depthwise layers are computed densely and the
//! strided DMA store keeps the even rows and columns.
//!
//! The scheduler stands in for the runtime on the cluster controller: it
//! starts units and enqueues DMA jobs directly, without instruction cost.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::cluster::{Cluster, ClusterConfig, ClusterMetrics};
use crate::ctrl;
use crate::dma::{DmaDir, DmaHandle, DmaJob};
use crate::dwe::{DweJob, Requant};
use crate::error::{Result, SimError};
use crate::numerics::{LaneFormat, Precision};

use super::conv::{gen_conv_programs, ConvLayer, CoreVariant};
use super::oracle::{conv2d_acc, depthwise3x3, pointwise, requantize, ConvShape};
use super::tensor::{Tensor, TensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetOp {
    Pointwise { relu: bool },
    Depthwise { stride: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetLayer {
    pub op: NetOp,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub requant: Requant,
}

impl NetLayer {
    fn stride(&self) -> usize {
        match self.op {
            NetOp::Depthwise { stride } => stride,
            NetOp::Pointwise { .. } => 1,
        }
    }

    pub fn out_h(&self) -> usize {
        self.h / self.stride()
    }

    pub fn out_w(&self) -> usize {
        self.w / self.stride()
    }

    pub fn in_bytes(&self) -> usize {
        self.h * self.w * self.c_in
    }

    pub fn out_bytes(&self) -> usize {
        self.out_h() * self.out_w() * self.c_out
    }

    pub fn weight_bytes(&self) -> usize {
        match self.op {
            NetOp::Pointwise { .. } => self.c_out * self.c_in / 2,
            NetOp::Depthwise { .. } => self.c_in * 9,
        }
    }

    pub fn macs(&self) -> u64 {
        match self.op {
            NetOp::Pointwise { .. } => (self.h * self.w * self.c_in * self.c_out) as u64,
            NetOp::Depthwise { .. } => (self.out_h() * self.out_w() * self.c_in * 9) as u64,
        }
    }
}

/// Expansion, output channels, repeats, first stride.
const BLOCKS: [(usize, usize, usize, usize); 7] =
    [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)];

/// The 17 inverted-residual blocks after the stem, without the residual adds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MobileNetV2 {
    pub resolution: usize,
    pub layers: Vec<NetLayer>,
}

impl MobileNetV2 {
    /// `resolution` is the image size; the stack starts at half of it with 32 channels.
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution == 0 || !resolution.is_multiple_of(32) {
            return Err(SimError::Validation(format!("resolution {resolution} is not a multiple of 32")));
        }
        let (mut s, mut c) = (resolution / 2, 32);
        let mut layers = Vec::new();
        let rq = Requant::default();
        for (t, c_out, n, first_stride) in BLOCKS {
            for i in 0..n {
                let stride = if i == 0 { first_stride } else { 1 };
                let mid = c * t;
                if t != 1 {
                    layers.push(NetLayer { op: NetOp::Pointwise { relu: true }, h: s, w: s, c_in: c, c_out: mid, requant: rq });
                }
                layers.push(NetLayer { op: NetOp::Depthwise { stride }, h: s, w: s, c_in: mid, c_out: mid, requant: rq });
                s /= stride;
                layers.push(NetLayer { op: NetOp::Pointwise { relu: false }, h: s, w: s, c_in: mid, c_out, requant: rq });
                c = c_out;
            }
        }
        Ok(Self { resolution, layers })
    }

    pub fn macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs()).sum()
    }
}

fn i8fmt() -> LaneFormat {
    LaneFormat::signed(Precision::B8)
}

fn i4fmt() -> LaneFormat {
    LaneFormat::signed(Precision::B4)
}

/// Input activations and per-layer weights (int4 pointwise, int8 depthwise).
#[derive(Debug, Clone)]
pub struct NetData {
    pub input: Tensor,
    pub weights: Vec<Vec<i32>>,
}

impl NetData {
    pub fn random(net: &MobileNetV2, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let l0 = &net.layers[0];
        let vals: Vec<i32> = (0..l0.in_bytes()).map(|_| rng.gen_range(-128..=127)).collect();
        let input = Tensor::from_values(TensorSpec::hwc(l0.h, l0.w, l0.c_in, i8fmt()), &vals)?;
        let weights = net
            .layers
            .iter()
            .map(|l| match l.op {
                NetOp::Pointwise { .. } => (0..l.c_out * l.c_in).map(|_| rng.gen_range(-8..=7)).collect(),
                NetOp::Depthwise { .. } => (0..l.c_in * 9).map(|_| rng.gen_range(-128..=127)).collect(),
            })
            .collect();
        Ok(Self { input, weights })
    }
}

fn pad1(t: &Tensor) -> Result<Tensor> {
    let (h, w, c) = (t.spec.dims[0], t.spec.dims[1], t.spec.dims[2]);
    let mut p = Tensor::zeros(TensorSpec::hwc(h + 2, w + 2, c, i8fmt()));
    for y in 0..h {
        let src = y * w * c;
        let dst = ((y + 1) * (w + 2) + 1) * c;
        p.data[dst..dst + w * c].copy_from_slice(&t.data[src..src + w * c]);
    }
    Ok(p)
}

fn hwc_tensor(v: Vec<i8>, h: usize, w: usize, c: usize) -> Result<Tensor> {
    Tensor::from_bytes(TensorSpec::hwc(h, w, c, i8fmt()), v.into_iter().map(|x| x as u8).collect())
}

fn layer_oracle(l: &NetLayer, input: &Tensor, w: &[i32]) -> Result<Tensor> {
    let out = match l.op {
        NetOp::Pointwise { .. } => pointwise(input, w, l.c_out, l.requant),
        NetOp::Depthwise { stride } => {
            let dense = depthwise3x3(&pad1(input)?, w, l.requant);
            let (ow, c) = (l.out_w(), l.c_in);
            let mut v = Vec::with_capacity(l.out_bytes());
            for y in 0..l.out_h() {
                for x in 0..ow {
                    let i = ((y * stride) * l.w + x * stride) * c;
                    v.extend_from_slice(&dense[i..i + c]);
                }
            }
            v
        }
    };
    hwc_tensor(out, l.out_h(), l.out_w(), l.c_out)
}

/// Reference output of every layer.
pub fn net_oracle(net: &MobileNetV2, data: &NetData) -> Result<Vec<Tensor>> {
    let mut outs: Vec<Tensor> = Vec::with_capacity(net.layers.len());
    for (i, l) in net.layers.iter().enumerate() {
        let input = if i == 0 { &data.input } else { &outs[i - 1] };
        let o = layer_oracle(l, input, &data.weights[i])?;
        outs.push(o);
    }
    Ok(outs)
}

/// Pick each layer's requantization shift as the smallest one that keeps the
/// largest accumulator of the reference run inside int8.
pub fn calibrate(net: &mut MobileNetV2, data: &NetData) -> Result<()> {
    let mut cur = data.input.clone();
    for (i, l) in net.layers.iter_mut().enumerate() {
        let relu = match l.op {
            NetOp::Pointwise { relu } => relu,
            NetOp::Depthwise { .. } => true,
        };
        let fits = |out: &[i8]| out.iter().all(|&v| v > -128 && v < 127);
        let mut shift = 0;
        loop {
            let rq = Requant { shift, relu };
            let ok = match l.op {
                NetOp::Pointwise { .. } => {
                    let s = ConvShape { h: l.h, w: l.w, c_in: l.c_in, c_out: l.c_out, k: 1, pad: 0 };
                    fits(&requantize(&conv2d_acc(&cur, &data.weights[i], &s), rq))
                }
                NetOp::Depthwise { .. } => fits(&depthwise3x3(&pad1(&cur)?, &data.weights[i], rq)),
            };
            if ok || shift >= 31 {
                break;
            }
            shift += 1;
        }
        l.requant = Requant { shift, relu };
        cur = layer_oracle(l, &cur, &data.weights[i])?;
    }
    Ok(())
}

fn align(n: usize) -> usize {
    n.next_multiple_of(64)
}

/// Tile geometry of one layer. Each L1 half holds the input tile at its
/// start, then the weights, then the output tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerTiling {
    /// Rows per band (dense rows for depthwise layers).
    pub rows: usize,
    /// Output channels per chunk.
    pub chunk: usize,
    /// Row width in L1, rounded up for the 4-pixel kernel tile.
    pub l1_w: usize,
    w_off: usize,
    out_off: usize,
    total: usize,
}

impl LayerTiling {
    fn new(l: &NetLayer, rows: usize, chunk: usize, l1_w: usize) -> Self {
        let (a, w, o) = match l.op {
            NetOp::Pointwise { .. } => (rows * l1_w * l.c_in, chunk * l.c_in / 2, rows * l1_w * chunk),
            NetOp::Depthwise { .. } => ((rows + 2) * (l.w + 2) * chunk, 9 * chunk, rows * l.w * chunk),
        };
        let w_off = align(a);
        let out_off = w_off + align(w);
        Self { rows, chunk, l1_w, w_off, out_off, total: out_off + align(o) }
    }

    pub fn bytes(&self) -> usize {
        self.total
    }

    pub fn bands(&self, l: &NetLayer) -> usize {
        l.h.div_ceil(self.rows)
    }

    pub fn chunks(&self, l: &NetLayer) -> usize {
        l.c_out.div_ceil(self.chunk)
    }
}

/// Smallest number of tiles per layer the tiler aims for, so loads of one
/// tile have another tile's compute to hide behind.
const MIN_TILES: usize = 8;

/// Bytes a layer moves between L2 and L1 under a tiling, counting weight
/// reuse when a half gets the same weight chunk twice in a row.
fn traffic(l: &NetLayer, t: &LayerTiling) -> usize {
    let (bands, chunks) = (t.bands(l), t.chunks(l));
    let w_chunk = l.weight_bytes() * t.chunk / l.c_out;
    let mut resident = [usize::MAX; 2];
    let mut bytes = l.out_bytes();
    for i in 0..bands * chunks {
        let (band, chunk) = (i / chunks, i % chunks);
        if resident[i % 2] != chunk {
            bytes += w_chunk;
            resident[i % 2] = chunk;
        }
        let rows = t.rows.min(l.h - band * t.rows);
        bytes += match l.op {
            NetOp::Pointwise { .. } => rows * l.w * l.c_in,
            NetOp::Depthwise { .. } => (rows + 2) * (l.w + 2) * t.chunk,
        };
    }
    bytes
}

/// The tiling with the least L2 traffic among those that fit one L1 half,
/// split into at least `MIN_TILES` tiles and, for the cores, give each core
/// some work.
pub fn tile_layer(l: &NetLayer, half: usize, n_cores: usize) -> Result<LayerTiling> {
    let (l1_w, slack, step) = match l.op {
        NetOp::Pointwise { .. } => {
            let w = l.w.next_multiple_of(4);
            (w, 4 * w * l.c_in, 4)
        }
        NetOp::Depthwise { .. } => (l.w, 0, 16),
    };
    let budget = half.saturating_sub(slack);
    let row_step = l.stride();
    let chunks = (1..=l.c_out).filter(|c| l.c_out.is_multiple_of(*c) && (c % step == 0 || *c == l.c_out));
    let mut fitting = Vec::new();
    for chunk in chunks {
        for rows in (row_step..=l.h).step_by(row_step) {
            let t = LayerTiling::new(l, rows, chunk, l1_w);
            if t.total <= budget {
                fitting.push(t);
            }
        }
    }
    let busy = |t: &LayerTiling| match l.op {
        NetOp::Pointwise { .. } => t.rows * (t.l1_w / 4) * (t.chunk / 4) >= n_cores,
        NetOp::Depthwise { .. } => true,
    };
    let split = |t: &LayerTiling| t.bands(l) * t.chunks(l) >= MIN_TILES;
    let key = |t: &LayerTiling| (traffic(l, t), t.bands(l) * t.chunks(l));
    let best = |ok: &dyn Fn(&LayerTiling) -> bool| fitting.iter().filter(|t| ok(t)).min_by_key(|t| key(t)).copied();
    best(&|t| busy(t) && split(t))
        .or_else(|| best(&busy))
        .or_else(|| best(&|_| true))
        .ok_or_else(|| SimError::Validation(format!("layer {l:?} does not fit half of L1")))
}

#[derive(Debug, Clone)]
enum Work {
    Cores(ConvLayer),
    Dwe(DweJob),
}

#[derive(Debug, Clone)]
struct Tile {
    layer: usize,
    /// Input fmap rows read and output fmap rows written, half-open.
    in_rows: (usize, usize),
    out_rows: (usize, usize),
    /// Weight chunk, absent when the half already holds it.
    weights: Vec<DmaJob>,
    loads: Vec<DmaJob>,
    stores: Vec<DmaJob>,
    work: Work,
}

/// Where everything lives in L2.
#[derive(Debug, Clone)]
pub struct L2Layout {
    pub zero: u32,
    pub weights: Vec<u32>,
    pub fmaps: [u32; 2],
    pub end: usize,
}

impl L2Layout {
    fn new(net: &MobileNetV2, zero_bytes: usize) -> Self {
        let mut at = align(zero_bytes);
        let weights = net
            .layers
            .iter()
            .map(|l| {
                let a = at as u32;
                at += align(l.weight_bytes());
                a
            })
            .collect();
        let fmap = net.layers.iter().map(|l| l.in_bytes().max(l.out_bytes())).max().unwrap_or(0);
        let fmaps = [at as u32, (at + align(fmap)) as u32];
        Self { zero: 0, weights, fmaps, end: at + 2 * align(fmap) }
    }

    /// Input buffer of layer `i`; its output goes to the other one.
    fn input(&self, i: usize) -> u32 {
        self.fmaps[i % 2]
    }

    fn output(&self, i: usize) -> u32 {
        self.fmaps[(i + 1) % 2]
    }
}

fn to_l1(src: u32, dst: u32, len: usize) -> DmaJob {
    DmaJob::linear(src, dst, len as u32, DmaDir::L2ToL1)
}

fn strided(src: u32, dst: u32, inner: usize, outer: usize, ss: usize, ds: usize, dir: DmaDir) -> DmaJob {
    DmaJob { src, dst, inner_len: inner as u32, outer_count: outer as u32, src_stride: ss as u32, dst_stride: ds as u32, dir }
}

/// The complete tile sequence of the network.
#[derive(Debug, Clone)]
pub struct TilePlan {
    pub l2: L2Layout,
    pub tilings: Vec<LayerTiling>,
    tiles: Vec<Tile>,
}

impl TilePlan {
    pub fn tiles(&self) -> usize {
        self.tiles.len()
    }

    pub fn dma_bytes(&self) -> u64 {
        self.tiles.iter().flat_map(|t| t.weights.iter().chain(&t.loads).chain(&t.stores)).map(|j| j.bytes()).sum()
    }
}

pub fn plan_tiles(net: &MobileNetV2, cfg: &ClusterConfig) -> Result<TilePlan> {
    let half = cfg.tcdm.total_bytes() / 2;
    let tilings = net.layers.iter().map(|l| tile_layer(l, half, cfg.n_cores)).collect::<Result<Vec<_>>>()?;
    let zero_bytes = net
        .layers
        .iter()
        .zip(&tilings)
        .filter(|(l, _)| matches!(l.op, NetOp::Depthwise { .. }))
        .map(|(l, t)| (l.w + 2).max(t.rows + 2) * t.chunk)
        .max()
        .unwrap_or(0);
    let l2 = L2Layout::new(net, zero_bytes);
    if l2.end > cfg.dma.l2.size {
        return Err(SimError::Validation(format!("network needs {} B of L2, have {}", l2.end, cfg.dma.l2.size)));
    }
    let mut tiles = Vec::new();
    // weights already resident in each half: (layer, first channel)
    let mut resident: [Option<(usize, usize)>; 2] = [None, None];
    for (li, (l, t)) in net.layers.iter().zip(&tilings).enumerate() {
        let (fin, fout, wl2) = (l2.input(li), l2.output(li), l2.weights[li]);
        for band in 0..t.bands(l) {
            let y0 = band * t.rows;
            let rows = t.rows.min(l.h - y0);
            for chunk in 0..t.chunks(l) {
                let c0 = chunk * t.chunk;
                let cn = t.chunk.min(l.c_out - c0);
                let half_i = tiles.len() % 2;
                let base = (half_i * half) as u32;
                let (a_l1, w_l1, o_l1) = (base, base + t.w_off as u32, base + t.out_off as u32);
                let mut loads = Vec::new();
                let mut weights = Vec::new();
                let mut stores = Vec::new();
                let reuse = resident[half_i] == Some((li, c0));
                resident[half_i] = Some((li, c0));
                let tile = match l.op {
                    NetOp::Pointwise { .. } => {
                        let (w, wp, ci) = (l.w, t.l1_w, l.c_in);
                        let src = fin + (y0 * w * ci) as u32;
                        loads.push(if wp == w {
                            to_l1(src, a_l1, rows * w * ci)
                        } else {
                            strided(src, a_l1, w * ci, rows, w * ci, wp * ci, DmaDir::L2ToL1)
                        });
                        if !reuse {
                            weights.push(to_l1(wl2 + (c0 * ci / 2) as u32, w_l1, cn * ci / 2));
                        }
                        let dst = fout + (y0 * w * l.c_out + c0) as u32;
                        if wp == w {
                            stores.push(strided(o_l1, dst, cn, rows * w, cn, l.c_out, DmaDir::L1ToL2));
                        } else {
                            for r in 0..rows {
                                let d = dst + (r * w * l.c_out) as u32;
                                stores.push(strided(o_l1 + (r * wp * cn) as u32, d, cn, w, cn, l.c_out, DmaDir::L1ToL2));
                            }
                        }
                        let layer = ConvLayer {
                            shape: ConvShape { h: rows, w: wp, c_in: ci, c_out: cn, k: 1, pad: 0 },
                            act: i8fmt(),
                            wgt: i4fmt(),
                            requant: l.requant,
                            in_base: a_l1,
                            w_base: w_l1,
                            out_base: o_l1,
                            out_pad: 0,
                        };
                        Tile { layer: li, in_rows: (y0, y0 + rows), out_rows: (y0, y0 + rows), weights, loads, stores, work: Work::Cores(layer) }
                    }
                    NetOp::Depthwise { stride } => {
                        let (w, c) = (l.w, l.c_in);
                        let row_bytes = (w + 2) * cn;
                        for r in 0..rows + 2 {
                            let dst = a_l1 + (r * row_bytes) as u32;
                            match (y0 + r).checked_sub(1).filter(|&y| y < l.h) {
                                Some(y) => {
                                    let src = fin + (y * w * c + c0) as u32;
                                    loads.push(strided(src, dst + cn as u32, cn, w, c, cn, DmaDir::L2ToL1));
                                }
                                None => loads.push(to_l1(l2.zero, dst, row_bytes)),
                            }
                        }
                        for col in [0, w + 1] {
                            loads.push(strided(l2.zero, a_l1 + (col * cn) as u32, cn, rows + 2, cn, row_bytes, DmaDir::L2ToL1));
                        }
                        if !reuse {
                            weights.push(to_l1(wl2 + (c0 * 9) as u32, w_l1, cn * 9));
                        }
                        let (ow, oc) = (l.out_w(), l.c_out);
                        for r in (0..rows).step_by(stride) {
                            let y = (y0 + r) / stride;
                            let src = o_l1 + (r * w * cn) as u32;
                            stores.push(strided(src, fout + (y * ow * oc + c0) as u32, cn, ow, stride * cn, oc, DmaDir::L1ToL2));
                        }
                        let job = DweJob {
                            in_base: a_l1,
                            w_base: w_l1,
                            out_base: o_l1,
                            h: (rows + 2) as u32,
                            w: (w + 2) as u32,
                            c: cn as u32,
                            requant: l.requant,
                        };
                        Tile {
                            layer: li,
                            in_rows: (y0.saturating_sub(1), (y0 + rows + 1).min(l.h)),
                            out_rows: (y0 / stride, (y0 + rows).div_ceil(stride)),
                            weights,
                            loads,
                            stores,
                            work: Work::Dwe(job),
                        }
                    }
                };
                tiles.push(tile);
            }
        }
    }
    Ok(TilePlan { l2, tilings, tiles })
}

/// How L2 traffic is timed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmaMode {
    /// Real DMA, overlapped with compute by double buffering.
    DoubleBuffered,
    /// Copies complete instantly; compute alone sets the latency.
    ComputeOnly,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub cycles: u64,
    /// Cycles during which a tile was computing.
    pub compute_busy: u64,
    /// Cycle at which each layer's last store completed.
    pub layer_end: Vec<u64>,
    pub tiles: usize,
    pub dma_bytes: u64,
    pub output: Tensor,
    pub metrics: ClusterMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Waiting,
    Loading,
    Loaded,
    Computing,
    Computed,
    Storing,
    Stored,
}

struct Sched<'a> {
    plan: &'a TilePlan,
    mode: DmaMode,
    stage: Vec<Stage>,
    /// Outstanding loads and stores per tile.
    pending_in: Vec<usize>,
    pending_out: Vec<usize>,
    /// Per layer and output row: tiles writing it that have not finished storing.
    rows_open: Vec<Vec<usize>>,
    /// Per layer: tiles whose loads have not completed.
    loads_open: Vec<usize>,
    queue: VecDeque<(usize, DmaJob)>,
    owner: Vec<(DmaHandle, usize, DmaDir)>,
    seen: usize,
    computing: Option<usize>,
    next_weights: usize,
    next_load: usize,
    next_compute: usize,
    next_store: usize,
    layer_end: Vec<u64>,
}

fn host_copy(c: &mut Cluster, j: &DmaJob) -> Result<()> {
    for r in 0..j.outer_count {
        let (s, d) = (j.src + r * j.src_stride, j.dst + r * j.dst_stride);
        let n = j.inner_len as usize;
        match j.dir {
            DmaDir::L2ToL1 => {
                let b = c.dma().l2_read(s, n)?;
                c.mem_mut().write_bytes(d, &b)?;
            }
            DmaDir::L1ToL2 => {
                let b = c.mem().read_bytes(s, n)?;
                c.dma_mut().l2_write(d, &b)?;
            }
        }
    }
    Ok(())
}

impl<'a> Sched<'a> {
    fn new(net: &'a MobileNetV2, plan: &'a TilePlan, mode: DmaMode) -> Self {
        let n = plan.tiles.len();
        let mut rows_open: Vec<Vec<usize>> = net.layers.iter().map(|l| vec![0; l.out_h()]).collect();
        let mut loads_open = vec![0; net.layers.len()];
        for t in &plan.tiles {
            for r in t.out_rows.0..t.out_rows.1 {
                rows_open[t.layer][r] += 1;
            }
            loads_open[t.layer] += 1;
        }
        Self {
            plan,
            mode,
            stage: vec![Stage::Waiting; n],
            pending_in: vec![0; n],
            pending_out: vec![0; n],
            rows_open,
            loads_open,
            queue: VecDeque::new(),
            owner: Vec::new(),
            seen: 0,
            computing: None,
            next_weights: 0,
            next_load: 0,
            next_compute: 0,
            next_store: 0,
            layer_end: vec![0; net.layers.len()],
        }
    }

    fn tile(&self, i: usize) -> &'a Tile {
        &self.plan.tiles[i]
    }

    /// The input and weight regions of the tile's half are no longer in use.
    fn half_free(&self, i: usize) -> bool {
        if i < 2 {
            return true;
        }
        let need = if self.tile(i - 2).layer == self.tile(i).layer { Stage::Computed } else { Stage::Stored };
        self.stage[i - 2] >= need
    }

    fn rows_ready(&self, i: usize) -> bool {
        let t = self.tile(i);
        t.layer == 0 || self.rows_open[t.layer - 1][t.in_rows.0..t.in_rows.1].iter().all(|&n| n == 0)
    }

    fn can_compute(&self, i: usize) -> bool {
        self.computing.is_none() && self.stage[i] == Stage::Loaded && (i < 2 || self.stage[i - 2] == Stage::Stored)
    }

    fn can_store(&self, i: usize) -> bool {
        let l = self.tile(i).layer;
        self.stage[i] == Stage::Computed && (l == 0 || self.loads_open[l - 1] == 0)
    }

    fn submit(&mut self, c: &mut Cluster, i: usize, jobs: &[DmaJob]) -> Result<()> {
        if let Some(j) = jobs.first() {
            if self.mode == DmaMode::DoubleBuffered {
                match j.dir {
                    DmaDir::L2ToL1 => self.pending_in[i] += jobs.len(),
                    DmaDir::L1ToL2 => self.pending_out[i] += jobs.len(),
                }
            }
        }
        match self.mode {
            DmaMode::ComputeOnly => {
                for j in jobs {
                    host_copy(c, j)?;
                }
            }
            DmaMode::DoubleBuffered => {
                self.queue.extend(jobs.iter().map(|&j| (i, j)));
            }
        }
        Ok(())
    }

    fn loads_done(&mut self, i: usize) {
        self.stage[i] = Stage::Loaded;
        let l = self.tile(i).layer;
        self.loads_open[l] -= 1;
    }

    fn stores_done(&mut self, i: usize, now: u64) {
        self.stage[i] = Stage::Stored;
        let t = self.tile(i);
        for r in t.out_rows.0..t.out_rows.1 {
            self.rows_open[t.layer][r] -= 1;
        }
        self.layer_end[t.layer] = now;
    }

    /// Start everything that has become possible; true if anything changed.
    fn advance(&mut self, c: &mut Cluster) -> Result<bool> {
        let n = self.plan.tiles.len();
        let mut changed = false;
        while self.next_store < n && self.can_store(self.next_store) {
            let i = self.next_store;
            self.stage[i] = Stage::Storing;
            self.submit(c, i, &self.tile(i).stores)?;
            if self.pending_out[i] == 0 {
                self.stores_done(i, c.cycle());
            }
            self.next_store += 1;
            changed = true;
        }
        while self.next_load < n && self.half_free(self.next_load) && self.rows_ready(self.next_load) {
            let i = self.next_load;
            if self.next_weights == i {
                self.submit(c, i, &self.tile(i).weights)?;
                self.next_weights += 1;
            }
            self.stage[i] = Stage::Loading;
            self.submit(c, i, &self.tile(i).loads)?;
            if self.pending_in[i] == 0 {
                self.loads_done(i);
            }
            self.next_load += 1;
            changed = true;
        }
        // weights only wait for buffer space; fetch them early while the DMA
        // has nothing else queued
        while self.next_weights < n && self.queue.is_empty() && self.half_free(self.next_weights) {
            let i = self.next_weights;
            self.submit(c, i, &self.tile(i).weights)?;
            self.next_weights += 1;
            changed = true;
        }
        if self.next_compute < n && self.can_compute(self.next_compute) {
            let i = self.next_compute;
            self.stage[i] = Stage::Computing;
            self.computing = Some(i);
            match &self.tile(i).work {
                Work::Cores(l) => {
                    let progs = gen_conv_programs(CoreVariant::MixedMl, l, c.config().n_cores, c.config().tcdm.total_bytes())?;
                    c.load_programs(progs.into_iter().map(Arc::new).collect())?;
                }
                Work::Dwe(j) => c.start_dwe(j)?,
            }
            self.next_compute += 1;
            changed = true;
        }
        Ok(changed)
    }

    /// Collect completions after a cycle; true if anything finished.
    fn observe(&mut self, c: &mut Cluster) -> bool {
        let mut changed = false;
        if let Some(i) = self.computing {
            let done = match self.tile(i).work {
                Work::Cores(_) => c.cores_done(),
                Work::Dwe(_) => c.events() & ctrl::EV_DWE != 0,
            };
            if done {
                c.clear_events(ctrl::EV_DWE);
                self.stage[i] = Stage::Computed;
                self.computing = None;
                changed = true;
            }
        }
        let done = c.dma_completions();
        if done.len() > self.seen {
            let fresh: Vec<DmaHandle> = done[self.seen..].iter().map(|d| d.0).collect();
            self.seen = done.len();
            for h in fresh {
                let k = self.owner.iter().position(|o| o.0 == h).expect("unknown DMA handle");
                let (_, i, dir) = self.owner.swap_remove(k);
                match dir {
                    DmaDir::L2ToL1 => {
                        self.pending_in[i] -= 1;
                        if self.pending_in[i] == 0 && self.stage[i] == Stage::Loading {
                            self.loads_done(i);
                        }
                    }
                    DmaDir::L1ToL2 => {
                        self.pending_out[i] -= 1;
                        if self.pending_out[i] == 0 {
                            self.stores_done(i, c.cycle());
                        }
                    }
                }
            }
            changed = true;
        }
        changed
    }

    fn feed(&mut self, c: &mut Cluster) -> Result<()> {
        let max = c.dma().config().max_outstanding;
        while c.dma().outstanding() < max {
            let Some((i, j)) = self.queue.pop_front() else { break };
            let h = c.enqueue_dma(j)?;
            self.owner.push((h, i, j.dir));
        }
        Ok(())
    }
}

fn pack_weights(l: &NetLayer, w: &[i32]) -> Result<Vec<u8>> {
    Ok(match l.op {
        NetOp::Pointwise { .. } => Tensor::from_values(TensorSpec::matrix(l.c_out, l.c_in, i4fmt().into()), w)?.data,
        NetOp::Depthwise { .. } => w.iter().map(|&v| v as i8 as u8).collect(),
    })
}

/// Run the whole stack; the output is the last layer's feature map read back from L2.
pub fn run_mobilenet(net: &MobileNetV2, data: &NetData, cfg: &ClusterConfig, mode: DmaMode, max_cycles: u64) -> Result<PipelineRun> {
    let plan = plan_tiles(net, cfg)?;
    let mut c = Cluster::new(*cfg)?;
    c.dma_mut().l2_write(plan.l2.input(0), &data.input.data)?;
    for (i, l) in net.layers.iter().enumerate() {
        c.dma_mut().l2_write(plan.l2.weights[i], &pack_weights(l, &data.weights[i])?)?;
    }
    let mut s = Sched::new(net, &plan, mode);
    let n = plan.tiles.len();
    let mut compute_busy = 0;
    let mut dirty = true;
    while s.next_store < n || s.stage.iter().any(|&st| st != Stage::Stored) {
        if dirty {
            while s.advance(&mut c)? {}
        }
        s.feed(&mut c)?;
        if s.stage.iter().rev().take(1).all(|&st| st == Stage::Stored) && s.next_store == n {
            break;
        }
        if c.cycle() >= max_cycles {
            return Err(SimError::Timeout(c.cycle()));
        }
        c.step()?;
        if s.computing.is_some() {
            compute_busy += 1;
        }
        dirty = s.observe(&mut c);
    }
    let last = net.layers.last().expect("network has layers");
    let out = c.dma().l2_read(plan.l2.output(net.layers.len() - 1), last.out_bytes())?;
    let output = hwc_tensor(out.into_iter().map(|b| b as i8).collect(), last.out_h(), last.out_w(), last.c_out)?;
    Ok(PipelineRun {
        cycles: c.cycle(),
        compute_busy,
        layer_end: s.layer_end,
        tiles: n,
        dma_bytes: plan.dma_bytes(),
        output,
        metrics: c.metrics(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn network_shape() {
        let net = MobileNetV2::new(224).unwrap();
        assert_eq!(net.layers.len(), 17 * 3 - 1);
        let last = net.layers.last().unwrap();
        assert_eq!((last.out_h(), last.c_out), (7, 320));
        // bottleneck blocks of the reference network, stem and head excluded
        assert!((250_000_000..320_000_000).contains(&net.macs()), "{}", net.macs());
    }

    #[test]
    fn tiles_fit_half_of_l1() {
        let net = MobileNetV2::new(128).unwrap();
        let cfg = ClusterConfig::default();
        let plan = plan_tiles(&net, &cfg).unwrap();
        for (l, t) in net.layers.iter().zip(&plan.tilings) {
            assert!(t.bytes() <= cfg.tcdm.total_bytes() / 2);
            assert!(t.bands(l) * t.chunks(l) >= MIN_TILES.min(l.h / l.stride()), "{l:?} {t:?}");
        }
        assert!(plan.l2.end <= cfg.dma.l2.size);
    }

    #[test]
    fn small_network_matches_oracle_in_both_modes() {
        let mut net = MobileNetV2::new(64).unwrap();
        net.layers.truncate(8);
        let data = NetData::random(&net, 3).unwrap();
        calibrate(&mut net, &data).unwrap();
        let want = net_oracle(&net, &data).unwrap().pop().unwrap();
        let cfg = ClusterConfig::default();
        for mode in [DmaMode::ComputeOnly, DmaMode::DoubleBuffered] {
            let r = run_mobilenet(&net, &data, &cfg, mode, u64::MAX).unwrap();
            assert_eq!(r.output.data, want.data, "{mode:?}");
        }
    }
}
