//! Inverted-residual bottleneck (pointwise expand, depthwise 3x3, pointwise
//! project) on int8 data, built up one hardware block at a time.
//!
//! Each phase is a separate cluster run on its own L1 image; the host moves
//! tensors between phases and the reported latency is the sum of phase cycles.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::cluster::{Cluster, ClusterConfig};
use crate::datamover::DmJob;
use crate::dwe::{DweJob, Requant};
use crate::error::{Result, SimError};
use crate::numerics::{LaneFormat, Precision};
use crate::rvnn::Program;

use super::conv::{gen_conv_programs, ConvLayer, CoreVariant};
use super::oracle::{depthwise3x3, pointwise, ConvShape};
use super::sw::{dm_offload_program, dwe_offload_program, gen_sw_depthwise, gen_sw_transpose, sw_depthwise_weights, Marshal, SwDepthwise};
use super::tensor::{Tensor, TensorSpec};

/// Cumulative hardware configurations, each adding one block to the previous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Rung {
    Ri5cy,
    MacLoad,
    DataMover,
    Dwe,
}

impl Rung {
    pub const ALL: [Rung; 4] = [Rung::Ri5cy, Rung::MacLoad, Rung::DataMover, Rung::Dwe];

    fn pointwise_variant(self) -> CoreVariant {
        if self == Rung::Ri5cy {
            CoreVariant::RI5CY
        } else {
            CoreVariant::MixedMl
        }
    }
}

impl fmt::Display for Rung {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rung::Ri5cy => "ri5cy",
            Rung::MacLoad => "mac-load",
            Rung::DataMover => "datamover",
            Rung::Dwe => "dwe",
        })
    }
}

impl FromStr for Rung {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Rung::ALL
            .into_iter()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| SimError::Parse(format!("unknown bottleneck configuration '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bottleneck {
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_mid: usize,
    pub c_out: usize,
    pub rq_expand: Requant,
    pub rq_dw: Requant,
    pub rq_project: Requant,
}

impl Bottleneck {
    /// 8x8x64 input, expansion 6, linear projection back to 64 channels.
    pub fn reduced() -> Self {
        Self {
            h: 8,
            w: 8,
            c_in: 64,
            c_mid: 384,
            c_out: 64,
            rq_expand: Requant { shift: 9, relu: true },
            rq_dw: Requant { shift: 7, relu: true },
            rq_project: Requant { shift: 10, relu: false },
        }
    }

    pub fn macs(&self) -> u64 {
        let px = (self.h * self.w) as u64;
        px * (self.c_mid * (self.c_in + 9 + self.c_out)) as u64
    }

    fn expand_shape(&self) -> ConvShape {
        ConvShape { h: self.h, w: self.w, c_in: self.c_in, c_out: self.c_mid, k: 1, pad: 0 }
    }

    fn project_shape(&self) -> ConvShape {
        ConvShape { h: self.h, w: self.w, c_in: self.c_mid, c_out: self.c_out, k: 1, pad: 0 }
    }
}

/// Input and weights; weights as signed int8 values.
#[derive(Debug, Clone)]
pub struct BottleneckData {
    pub input: Tensor,
    pub w_expand: Vec<i32>,
    pub w_dw: Vec<i32>,
    pub w_project: Vec<i32>,
}

impl BottleneckData {
    pub fn random(b: &Bottleneck, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v = |n: usize| -> Vec<i32> { (0..n).map(|_| rng.gen_range(-128..=127)).collect() };
        let input = Tensor::from_values(TensorSpec::hwc(b.h, b.w, b.c_in, i8fmt()), &v(b.h * b.w * b.c_in))?;
        Ok(Self { input, w_expand: v(b.c_mid * b.c_in), w_dw: v(b.c_mid * 9), w_project: v(b.c_out * b.c_mid) })
    }
}

fn i8fmt() -> LaneFormat {
    LaneFormat::signed(Precision::B8)
}

fn to_tensor(v: &[i8], h: usize, w: usize, c: usize) -> Result<Tensor> {
    Tensor::from_bytes(TensorSpec::hwc(h, w, c, i8fmt()), v.iter().map(|&x| x as u8).collect())
}

/// HWC output of the whole block computed by the reference functions.
pub fn bottleneck_oracle(b: &Bottleneck, d: &BottleneckData) -> Result<Vec<i8>> {
    let e = pointwise(&d.input, &d.w_expand, b.c_mid, b.rq_expand);
    let mut padded = Tensor::zeros(TensorSpec::hwc(b.h + 2, b.w + 2, b.c_mid, i8fmt()));
    let et = to_tensor(&e, b.h, b.w, b.c_mid)?;
    for y in 0..b.h {
        for x in 0..b.w {
            for c in 0..b.c_mid {
                padded.set(padded.spec.index3(y + 1, x + 1, c), et.at3(y, x, c))?;
            }
        }
    }
    let dw = depthwise3x3(&padded, &d.w_dw, b.rq_dw);
    Ok(pointwise(&to_tensor(&dw, b.h, b.w, b.c_mid)?, &d.w_project, b.c_out, b.rq_project))
}

#[derive(Debug, Clone)]
pub struct BottleneckRun {
    pub rung: Rung,
    /// Cycles of each phase in execution order.
    pub phases: Vec<(&'static str, u64)>,
    pub output: Vec<i8>,
}

impl BottleneckRun {
    pub fn cycles(&self) -> u64 {
        self.phases.iter().map(|p| p.1).sum()
    }
}

/// One phase: write the operands, run the programs, read back one region.
fn phase(cfg: &ClusterConfig, inputs: &[(u32, &[u8])], programs: Vec<Program>, out: (u32, usize)) -> Result<(u64, Vec<u8>)> {
    let mut c = Cluster::new(*cfg)?;
    for &(a, bytes) in inputs {
        c.mem_mut().write_bytes(a, bytes)?;
    }
    c.load_programs(programs.into_iter().map(Arc::new).collect())?;
    let cycles = c.run(u64::MAX)?;
    Ok((cycles, c.mem().read_bytes(out.0, out.1)?))
}

fn i8_bytes(v: &[i32]) -> Vec<u8> {
    v.iter().map(|&x| x as i8 as u8).collect()
}

fn pointwise_layer(shape: ConvShape, rq: Requant, w_base: u32, out_base: u32, out_pad: usize) -> ConvLayer {
    ConvLayer { shape, act: i8fmt(), wgt: i8fmt(), requant: rq, in_base: 0, w_base, out_base, out_pad }
}

/// Transpose between HWC and CHW, on the cores or on the DataMover.
fn marshal(cfg: &ClusterConfig, rung: Rung, src: &[u8], h: usize, w: usize, c: usize, dir: Marshal) -> Result<(u64, Vec<u8>)> {
    let n = h * w * c;
    let dst = n.next_multiple_of(64) as u32;
    let programs = if rung >= Rung::DataMover {
        let (rows, cols) = match dir {
            Marshal::HwcToChw => (h * w, c),
            Marshal::ChwToHwc => (c, h * w),
        };
        vec![dm_offload_program(&DmJob { src_base: 0, dst_base: dst, d: 8, rows: rows as u32, cols: cols as u32 })?]
    } else {
        gen_sw_transpose(h, w, c, dir, 0, dst, cfg.n_cores)?
    };
    phase(cfg, &[(0, src)], programs, (dst, n))
}

pub fn run_bottleneck(b: &Bottleneck, d: &BottleneckData, rung: Rung, cfg: &ClusterConfig) -> Result<BottleneckRun> {
    let l1 = cfg.tcdm.total_bytes();
    let variant = rung.pointwise_variant();
    let (hp, wp) = (b.h + 2, b.w + 2);
    let mut phases = Vec::new();

    let in_bytes = d.input.data.len().next_multiple_of(64) as u32;
    let we = i8_bytes(&d.w_expand);
    let e_out = in_bytes + we.len().next_multiple_of(64) as u32;
    let le = pointwise_layer(b.expand_shape(), b.rq_expand, in_bytes, e_out, 1);
    let (t, expanded) = phase(
        cfg,
        &[(0, &d.input.data), (in_bytes, &we)],
        gen_conv_programs(variant, &le, cfg.n_cores, l1)?,
        (e_out, le.output_bytes()),
    )?;
    phases.push(("expand", t));

    let mid = b.h * b.w * b.c_mid;
    let dw_hwc = if rung == Rung::Dwe {
        let wbytes = i8_bytes(&d.w_dw);
        let w_base = expanded.len().next_multiple_of(64) as u32;
        let out_base = w_base + wbytes.len().next_multiple_of(64) as u32;
        let job = DweJob { in_base: 0, w_base, out_base, h: hp as u32, w: wp as u32, c: b.c_mid as u32, requant: b.rq_dw };
        let (t, out) = phase(cfg, &[(0, &expanded), (w_base, &wbytes)], vec![dwe_offload_program(&job)?], (out_base, mid))?;
        phases.push(("depthwise", t));
        out
    } else {
        let (t, chw) = marshal(cfg, rung, &expanded, hp, wp, b.c_mid, Marshal::HwcToChw)?;
        phases.push(("to-chw", t));
        let w8: Vec<i8> = d.w_dw.iter().map(|&x| x as i8).collect();
        let wbytes = sw_depthwise_weights(&w8);
        let w_base = chw.len().next_multiple_of(64) as u32;
        let out_base = w_base + wbytes.len().next_multiple_of(64) as u32;
        let j = SwDepthwise { h: hp, w: wp, c: b.c_mid, requant: b.rq_dw, in_base: 0, w_base, out_base };
        let (t, out) = phase(cfg, &[(0, &chw), (w_base, &wbytes)], gen_sw_depthwise(&j, cfg.n_cores)?, (out_base, mid))?;
        phases.push(("depthwise", t));
        let (t, hwc) = marshal(cfg, rung, &out, b.h, b.w, b.c_mid, Marshal::ChwToHwc)?;
        phases.push(("to-hwc", t));
        hwc
    };

    let wpj = i8_bytes(&d.w_project);
    let w_base = dw_hwc.len().next_multiple_of(64) as u32;
    let out_base = w_base + wpj.len().next_multiple_of(64) as u32;
    let lp = pointwise_layer(b.project_shape(), b.rq_project, w_base, out_base, 0);
    let (t, out) = phase(
        cfg,
        &[(0, &dw_hwc), (w_base, &wpj)],
        gen_conv_programs(variant, &lp, cfg.n_cores, l1)?,
        (out_base, lp.output_bytes()),
    )?;
    phases.push(("project", t));
    Ok(BottleneckRun { rung, phases, output: out.into_iter().map(|x| x as i8).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Bottleneck {
        Bottleneck { h: 4, w: 4, c_in: 16, c_mid: 32, c_out: 8, ..Bottleneck::reduced() }
    }

    #[test]
    fn every_rung_matches_oracle() {
        let b = tiny();
        let d = BottleneckData::random(&b, 5).unwrap();
        let want = bottleneck_oracle(&b, &d).unwrap();
        assert!(want.iter().any(|&v| v != 0));
        let cfg = ClusterConfig { n_cores: 4, ..ClusterConfig::default() };
        for r in Rung::ALL {
            let run = run_bottleneck(&b, &d, r, &cfg).unwrap();
            assert_eq!(run.output, want, "{r}");
        }
    }

    #[test]
    fn rung_names_round_trip() {
        for r in Rung::ALL {
            assert_eq!(r.to_string().parse::<Rung>().unwrap(), r);
        }
    }
}
