//! MatMul inner-loop microbenchmark: the 4x2 kernel with explicit loads
//! against the 4x4 MAC-load kernel, on one core.

use crate::cluster::ClusterConfig;
use crate::dwe::Requant;
use crate::error::Result;
use crate::numerics::{LaneFormat, Precision};
use crate::rvnn::{CoreStats, Instr, Program};

use super::conv::{gen_conv_programs, run_conv, ConvLayer, ConvRun, CoreVariant};
use super::oracle::{conv2d, ConvShape};
use super::tensor::{Tensor, TensorSpec};

#[derive(Debug, Clone)]
pub struct KernelProfile {
    pub variant: CoreVariant,
    pub stats: CoreStats,
    pub cycles: u64,
    /// Pure loads in one iteration of the innermost loop.
    pub inner_loads: usize,
    /// Dot products in one iteration of the innermost loop.
    pub inner_dotps: usize,
    pub matches_oracle: bool,
}

impl KernelProfile {
    pub fn dotp_per_cycle(&self) -> f64 {
        self.stats.dotp as f64 / self.cycles as f64
    }

    pub fn utilization(&self) -> f64 {
        self.stats.dotp_utilization()
    }
}

#[derive(Debug, Clone)]
pub struct MicroBench {
    pub plain: KernelProfile,
    pub ml: KernelProfile,
}

impl MicroBench {
    pub fn load_reduction(&self) -> f64 {
        self.plain.inner_loads as f64 / self.ml.inner_loads as f64
    }

    pub fn dotp_gain(&self) -> f64 {
        self.ml.dotp_per_cycle() / self.plain.dotp_per_cycle() - 1.0
    }
}

/// Body of the first innermost loop.
pub fn innermost_body(p: &Program) -> &[Instr] {
    let ins = p.instrs();
    let mut open = None;
    for (i, x) in ins.iter().enumerate() {
        match x {
            Instr::LoopBegin { .. } => open = Some(i),
            Instr::LoopEnd => {
                if let Some(b) = open {
                    return &ins[b + 1..i];
                }
            }
            _ => {}
        }
    }
    &[]
}

/// `M=4` rows of u8 activations times `N=4` rows of i8 weights over `k` elements.
pub fn layer(k: usize) -> ConvLayer {
    ConvLayer {
        shape: ConvShape { h: 1, w: 4, c_in: k, c_out: 4, k: 1, pad: 0 },
        act: LaneFormat::unsigned(Precision::B8),
        wgt: LaneFormat::signed(Precision::B8),
        requant: Requant { shift: 10, relu: false },
        in_base: 0,
        w_base: 0x8000,
        out_base: 0x10000,
        out_pad: 0,
    }
}

fn profile(variant: CoreVariant, l: &ConvLayer, input: &Tensor, w: &[i32]) -> Result<KernelProfile> {
    let cfg = ClusterConfig { n_cores: 1, ..ClusterConfig::default() };
    let prog = gen_conv_programs(variant, l, 1, cfg.tcdm.total_bytes())?.remove(0);
    let body = innermost_body(&prog);
    let inner_loads = body.iter().filter(|i| matches!(i, Instr::Load { .. } | Instr::LoadNn(_))).count();
    let inner_dotps = body.iter().filter(|i| i.is_dotp()).count();
    let ConvRun { cycles, output, metrics } = run_conv(variant, l, input, w, &cfg)?;
    Ok(KernelProfile {
        variant,
        stats: metrics.cores[0],
        cycles,
        inner_loads,
        inner_dotps,
        matches_oracle: output == conv2d(input, w, &l.shape, l.requant),
    })
}

pub fn run_microbench(k: usize, seed: u64) -> Result<MicroBench> {
    use rand::{Rng, SeedableRng};
    let l = layer(k);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<i32> = (0..4 * k).map(|_| rng.gen_range(0..=255)).collect();
    let w: Vec<i32> = (0..4 * k).map(|_| rng.gen_range(-128..=127)).collect();
    let input = Tensor::from_values(TensorSpec::hwc(1, 4, k, l.act), &a)?;
    Ok(MicroBench { plain: profile(CoreVariant::Mixed, &l, &input, &w)?, ml: profile(CoreVariant::MixedMl, &l, &input, &w)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_loops_have_the_documented_shape() {
        let m = run_microbench(64, 1).unwrap();
        assert_eq!((m.plain.inner_loads, m.plain.inner_dotps), (6, 8));
        assert_eq!((m.ml.inner_loads, m.ml.inner_dotps), (1, 16));
        assert!(m.plain.matches_oracle && m.ml.matches_oracle);
    }

    #[test]
    fn long_reduction_approaches_loop_bound() {
        let m = run_microbench(1024, 2).unwrap();
        assert!(m.ml.utilization() > 0.9 && m.ml.utilization() <= 16.0 / 17.0);
        assert!(m.plain.utilization() > 0.54 && m.plain.utilization() <= 8.0 / 14.0);
        assert_eq!(m.ml.stats.stall_load_use + m.plain.stats.stall_load_use, 0);
    }
}
