//! Benchmark suites. Each returns named measurements with their bounds.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::{Cluster, ClusterConfig};
use crate::datamover::{self, DmJob};
use crate::dwe::{self, DweJob, Requant};
use crate::engine::{run_uncontended, EngineStats, Sequencer};
use crate::error::{Result, SimError};
use crate::hci::{arbitrate, ArbiterState, Branch, HciConfig, LogRequest, ShallowRequest};
use crate::numerics::{Fp16, LaneFormat, Precision};
use crate::rvnn::Program;
use crate::tcdm::Tcdm;
use crate::tpe::{self, TpeConfig, TpeJob};
use crate::workloads::autoencoder::{run_autoencoder, AeRung, AE_HIDDEN};
use crate::workloads::bottleneck::{bottleneck_oracle, run_bottleneck, Bottleneck, BottleneckData, Rung};
use crate::workloads::conv::{random_layer_data, run_conv, ConvLayer, CoreVariant};
use crate::workloads::microbench::run_microbench;
use crate::workloads::mobilenet::{calibrate, net_oracle, run_mobilenet, DmaMode, MobileNetV2, NetData};
use crate::workloads::oracle::{depthwise3x3, matmul_fp16_chain};
use crate::workloads::sw::{dm_offload_program, dwe_offload_program, gen_sw_depthwise, gen_sw_transpose, Marshal, SwDepthwise};
use crate::workloads::tensor::{Tensor, TensorSpec};

use super::report::{MetricsReport, Record};
use super::scenario::{run_scenario, Scenario};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    AtLeast(f64),
    AtMost(f64),
    Within(f64, f64),
    Exactly(f64),
    /// Reported, not judged.
    Info,
}

impl Bound {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::AtLeast(b) => v >= b,
            Bound::AtMost(b) => v <= b,
            Bound::Within(lo, hi) => (lo..=hi).contains(&v),
            Bound::Exactly(b) => v == b,
            Bound::Info => true,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Bound::AtLeast(b) => write!(f, ">={b:.4}"),
            Bound::AtMost(b) => write!(f, "<={b:.4}"),
            Bound::Within(lo, hi) => write!(f, "[{lo:.4},{hi:.4}]"),
            Bound::Exactly(b) => write!(f, "=={b:.4}"),
            Bound::Info => f.write_str("info"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub criterion: u32,
    pub name: String,
    pub value: f64,
    pub bound: Bound,
}

impl Check {
    pub fn new(criterion: u32, name: &str, value: f64, bound: Bound) -> Self {
        Self { criterion, name: name.into(), value, bound }
    }

    pub fn pass(&self) -> bool {
        self.bound.holds(self.value)
    }

    pub fn record(&self) -> Record {
        Record::new("check")
            .int("criterion", self.criterion as u64)
            .str("name", &self.name)
            .float("value", self.value)
            .str("bound", &self.bound.to_string())
            .int("pass", self.pass() as u64)
    }
}

fn flag(b: bool) -> f64 {
    b as u64 as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Suite {
    Hci,
    Tpe,
    Dwe,
    Ml,
    Kernels,
    DweSw,
    DataMover,
    Autoencoder,
    Bottleneck,
    MobileNet,
    Determinism,
}

impl Suite {
    pub const ALL: [Suite; 11] = [
        Suite::Hci,
        Suite::Tpe,
        Suite::Dwe,
        Suite::Ml,
        Suite::Kernels,
        Suite::DweSw,
        Suite::DataMover,
        Suite::Autoencoder,
        Suite::Bottleneck,
        Suite::MobileNet,
        Suite::Determinism,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Hci => "hci",
            Suite::Tpe => "tpe",
            Suite::Dwe => "dwe",
            Suite::Ml => "ml",
            Suite::Kernels => "kernels",
            Suite::DweSw => "dwe-sw",
            Suite::DataMover => "datamover",
            Suite::Autoencoder => "autoencoder",
            Suite::Bottleneck => "bottleneck",
            Suite::MobileNet => "mobilenet",
            Suite::Determinism => "determinism",
        }
    }

    pub fn run(self, seed: u64) -> Result<Vec<Check>> {
        match self {
            Suite::Hci => bench_hci(),
            Suite::Tpe => bench_tpe(seed),
            Suite::Dwe => bench_dwe(seed),
            Suite::Ml => bench_ml(seed),
            Suite::Kernels => bench_kernels(seed),
            Suite::DweSw => bench_dwe_sw(seed),
            Suite::DataMover => bench_datamover(seed),
            Suite::Autoencoder => bench_autoencoder(seed),
            Suite::Bottleneck => bench_bottleneck(seed),
            Suite::MobileNet => bench_mobilenet(seed),
            Suite::Determinism => bench_determinism(),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| SimError::Parse(format!("unknown bench suite `{s}`")))
    }
}

pub fn checks_report(suite: Suite, checks: &[Check]) -> MetricsReport {
    let mut records = vec![Record::new("suite").str("name", suite.name()).int("checks", checks.len() as u64).int(
        "failed",
        checks.iter().filter(|c| !c.pass()).count() as u64,
    )];
    records.extend(checks.iter().map(Check::record));
    MetricsReport { records }
}

/// Run suites on up to `workers` threads; results come back in input order.
pub fn run_suites(suites: &[Suite], seed: u64, workers: usize) -> Vec<(Suite, Result<Vec<Check>>)> {
    let workers = workers.max(1);
    let mut out: Vec<Option<Result<Vec<Check>>>> = (0..suites.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(&mut out);
    std::thread::scope(|s| {
        for _ in 0..workers.min(suites.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= suites.len() {
                    break;
                }
                let r = suites[i].run(seed);
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    suites.iter().copied().zip(out.into_iter().map(|r| r.expect("every suite ran"))).collect()
}

/// Worker cap from `HETSIM_WORKERS`, else the available parallelism.
pub fn worker_cap() -> usize {
    std::env::var("HETSIM_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

// ---------------------------------------------------------------- hci

/// Both branches request bank 2 every cycle; returns the cycles at which the
/// logarithmic request was granted.
fn contested_log_grants(cfg: &HciConfig, cycles: usize) -> Result<(Vec<usize>, usize)> {
    let t = crate::tcdm::TcdmConfig::default();
    let mut st = ArbiterState::new(t.n_banks);
    let wide = ShallowRequest::read(0, cfg.shallow_width_words, &t)?;
    let log = vec![Some(LogRequest::at(8, &t, None)?)];
    let mut granted = Vec::new();
    let mut wide_grants = 0;
    for cyc in 0..cycles {
        let g = arbitrate(&log, Some(&wide), &mut st, cfg);
        if g.log[0] {
            granted.push(cyc);
        }
        wide_grants += g.shallow as usize;
    }
    Ok((granted, wide_grants))
}

/// Winner of each of the first `cycles` contested cycles.
pub fn hci_duty_table(cycles: usize) -> Result<Vec<Record>> {
    let cfg = HciConfig { priority: Branch::Shallow, max_stall: 10, ..HciConfig::default() };
    let (log, _) = contested_log_grants(&cfg, cycles)?;
    Ok((0..cycles)
        .map(|c| Record::new("duty").int("cycle", c as u64).str("granted", if log.contains(&c) { "logarithmic" } else { "shallow" }))
        .collect())
}

pub fn bench_hci() -> Result<Vec<Check>> {
    let cfg = HciConfig { priority: Branch::Shallow, max_stall: 10, ..HciConfig::default() };
    const WINDOW: usize = 10_000;
    let (grants, wide) = contested_log_grants(&cfg, WINDOW)?;
    let spaced = grants.first() == Some(&10) && grants.windows(2).all(|w| w[1] - w[0] == 11);
    let mut checks = vec![
        Check::new(1, "log_grants_per_10000", grants.len() as f64, Bound::Exactly((WINDOW / 11) as f64)),
        Check::new(1, "one_in_eleven_pattern", flag(spaced && grants.len() + wide == WINDOW), Bound::Exactly(1.0)),
        Check::new(1, "collision_rate", grants.len() as f64 / WINDOW as f64, Bound::Info),
    ];
    // conflict-free saturation: the wide port on banks 0..9, one log port per
    // remaining bank
    let t = crate::tcdm::TcdmConfig::default();
    let mut st = ArbiterState::new(t.n_banks);
    let wide = ShallowRequest::read(0, cfg.shallow_width_words, &t)?;
    let log: Vec<_> = (0..cfg.n_log_ports).map(|p| LogRequest::at(4 * (cfg.shallow_width_words + p) as u32, &t, None).map(Some)).collect::<Result<_>>()?;
    let mut bytes = 0u64;
    const CYCLES: u64 = 1000;
    for _ in 0..CYCLES {
        let g = arbitrate(&log, Some(&wide), &mut st, &cfg);
        bytes += 4 * g.log.iter().filter(|&&b| b).count() as u64;
        if g.shallow {
            bytes += wide.bytes() as u64;
        }
    }
    let bpc = bytes as f64 / CYCLES as f64;
    checks.push(Check::new(2, "peak_bytes_per_cycle", bpc, Bound::Exactly(72.0)));
    checks.push(Check::new(2, "peak_gbps_at_290mhz", bpc * 290e6 / 1e9, Bound::Info));
    Ok(checks)
}

// ---------------------------------------------------------------- tpe

fn random_fp16(rng: &mut ChaCha8Rng) -> Fp16 {
    if rng.gen_ratio(1, 8) {
        // any finite encoding, subnormals included
        loop {
            let h = Fp16(rng.gen());
            if !h.is_nan() && !h.is_infinite() {
                return h;
            }
        }
    }
    Fp16::from_f64(rng.gen_range(-4.0..4.0))
}

fn run_job(slots: (Vec<crate::engine::Slot>, Box<dyn crate::engine::Kernel>), mem: &mut Tcdm, width: usize) -> EngineStats {
    let mut seq = Sequencer::new(slots.0, slots.1, width);
    let mut st = EngineStats::default();
    run_uncontended(&mut seq, mem, &mut st);
    st
}

pub fn bench_tpe(seed: u64) -> Result<Vec<Check>> {
    let cfg = ClusterConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Cluster::new(cfg)?;
    let job = TpeJob::dense(0, 0x4800, 0x9000, 96, 96, 96);
    for i in 0..2 * 96 * 96 {
        c.mem_mut().write_u16(2 * i as u32, Fp16::from_f64(rng.gen_range(-2.0..2.0)).0)?;
    }
    c.start_tpe(&job)?;
    c.run(10_000_000)?;
    let m = c.metrics();
    let mpc = m.tpe.macs_per_cycle();
    let mut checks = vec![
        Check::new(3, "tpe_96_macs_per_cycle", mpc, Bound::AtLeast(31.0)),
        Check::new(3, "tpe_96_fma_utilization", mpc / cfg.tpe.peak_macs() as f64, Bound::AtLeast(0.98)),
    ];
    let mut mem = Tcdm::new(cfg.tcdm);
    let mut mismatches = 0;
    const TRIALS: usize = 1000;
    for _ in 0..TRIALS {
        let (m, n, k) = (rng.gen_range(1..=20), rng.gen_range(1..=28), rng.gen_range(1..=24));
        let x: Vec<Fp16> = (0..m * k).map(|_| random_fp16(&mut rng)).collect();
        let w: Vec<Fp16> = (0..k * n).map(|_| random_fp16(&mut rng)).collect();
        let job = TpeJob::dense(0, 0x2000, 0x4000, m as u32, n as u32, k as u32);
        for (i, v) in x.iter().enumerate() {
            mem.write_u16(2 * i as u32, v.0)?;
        }
        for (i, v) in w.iter().enumerate() {
            mem.write_u16(0x2000 + 2 * i as u32, v.0)?;
        }
        run_job(tpe::plan(&job, &TpeConfig::default(), &cfg.tcdm)?, &mut mem, cfg.hci.shallow_width_words);
        let want = matmul_fp16_chain(&x, &w, m, n, k);
        let same = want.iter().enumerate().all(|(i, z)| mem.read_u16(0x4000 + 2 * i as u32).ok() == Some(z.0));
        mismatches += !same as u64;
    }
    checks.push(Check::new(3, "random_matmuls_bit_exact", (TRIALS as u64 - mismatches) as f64, Bound::Exactly(TRIALS as f64)));
    Ok(checks)
}

// ---------------------------------------------------------------- dwe

fn i8_tensor(h: usize, w: usize, c: usize, bytes: &[u8]) -> Result<Tensor> {
    let vals: Vec<i32> = bytes.iter().map(|&b| b as i8 as i32).collect();
    Tensor::from_values(TensorSpec::hwc(h, w, c, LaneFormat::signed(Precision::B8)), &vals)
}

pub fn bench_dwe(seed: u64) -> Result<Vec<Check>> {
    let cfg = ClusterConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd3e);
    let mut mem = Tcdm::new(cfg.tcdm);
    const SHAPES: usize = 300;
    let (mut ok, mut odd_c) = (0, 0);
    for _ in 0..SHAPES {
        let (h, w, c) = (rng.gen_range(3..=12usize), rng.gen_range(3..=12usize), rng.gen_range(1..=48usize));
        odd_c += (c % 16 != 0) as usize;
        let rq = Requant { shift: rng.gen_range(0..=10), relu: rng.gen() };
        let mut input = vec![0u8; h * w * c];
        rng.fill_bytes(&mut input);
        let mut wts = vec![0u8; 9 * c];
        rng.fill_bytes(&mut wts);
        let in_bytes = (h * w * c) as u32;
        let job = DweJob { in_base: 0, w_base: in_bytes.next_multiple_of(4), out_base: (in_bytes + 9 * c as u32).next_multiple_of(4) + 4, h: h as u32, w: w as u32, c: c as u32, requant: rq };
        mem.write_bytes(job.in_base, &input)?;
        mem.write_bytes(job.w_base, &wts)?;
        run_job(dwe::plan(&job, &cfg.tcdm, cfg.hci.shallow_width_words as u32)?, &mut mem, cfg.hci.shallow_width_words);
        let wv: Vec<i32> = wts.iter().map(|&b| b as i8 as i32).collect();
        let want: Vec<u8> = depthwise3x3(&i8_tensor(h, w, c, &input)?, &wv, rq).into_iter().map(|v| v as u8).collect();
        ok += (mem.read_bytes(job.out_base, want.len())? == want) as usize;
    }
    let mut checks = vec![
        Check::new(4, "random_shapes_bit_exact", ok as f64, Bound::Exactly(SHAPES as f64)),
        Check::new(4, "shapes_with_c_not_multiple_of_16", odd_c as f64, Bound::AtLeast(1.0)),
    ];
    // 64x64 output over 64 channels in tiles of 32 rows x 16 channels; the
    // whole layer does not fit L1
    let mut c = Cluster::new(cfg)?;
    for _tile in 0..2 * 4 {
        let job = DweJob { in_base: 0, w_base: 0x8C40, out_base: 0x8D00, h: 34, w: 66, c: 16, requant: Requant { shift: 8, relu: true } };
        let input = random_bytes(&mut rng, (job.h * job.w * job.c) as usize);
        c.mem_mut().write_bytes(job.in_base, &input)?;
        let wts = random_bytes(&mut rng, 9 * 16);
        c.mem_mut().write_bytes(job.w_base, &wts)?;
        c.start_dwe(&job)?;
        c.run(10_000_000)?;
    }
    let m = c.metrics();
    checks.push(Check::new(4, "dwe_64x64x64_macs", m.dwe.macs as f64, Bound::Exactly((64 * 64 * 64 * 9) as f64)));
    checks.push(Check::new(4, "dwe_64x64x64_macs_per_cycle", m.dwe.macs_per_cycle(), Bound::AtLeast(29.0)));
    Ok(checks)
}

// ---------------------------------------------------------------- ml

pub fn bench_ml(seed: u64) -> Result<Vec<Check>> {
    let m = run_microbench(1024, seed)?;
    Ok(vec![
        Check::new(5, "inner_load_reduction", m.load_reduction(), Bound::Exactly(6.0)),
        Check::new(5, "dotp_per_cycle_gain", m.dotp_gain(), Bound::Within(0.49, 0.65)),
        Check::new(5, "ml_dotp_utilization", m.ml.utilization(), Bound::Within(0.89, 0.99)),
        Check::new(5, "plain_dotp_utilization", m.plain.utilization(), Bound::Within(0.53, 0.63)),
        Check::new(5, "outputs_match_oracle", flag(m.ml.matches_oracle && m.plain.matches_oracle), Bound::Exactly(1.0)),
    ])
}

// ---------------------------------------------------------------- kernels

pub const FORMATS: [(u32, u32); 6] = [(8, 8), (8, 4), (8, 2), (4, 4), (4, 2), (2, 2)];

/// Single-core cycles of every variant on every benchmark-layer format.
pub fn kernel_ladder(seed: u64, variants: &[CoreVariant]) -> Result<Vec<((u32, u32), Vec<Option<u64>>)>> {
    let cfg = ClusterConfig { n_cores: 1, ..ClusterConfig::default() };
    FORMATS
        .iter()
        .map(|&(a, w)| {
            let l = ConvLayer::benchmark(a, w)?;
            let (input, wts) = random_layer_data(&l, seed ^ (a * 16 + w) as u64)?;
            let cycles = variants
                .iter()
                .map(|&v| {
                    if l.validate(v, cfg.tcdm.total_bytes()).is_err() {
                        return Ok(None);
                    }
                    Ok(Some(run_conv(v, &l, &input, &wts, &cfg)?.cycles))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(((a, w), cycles))
        })
        .collect()
}

pub fn bench_kernels(seed: u64) -> Result<Vec<Check>> {
    let ladder = kernel_ladder(seed, &[CoreVariant::RI5CY, CoreVariant::Mixed, CoreVariant::MixedMl, CoreVariant::Ri5cy { unpack_cost: 3 }])?;
    let ratio = |a: Option<u64>, b: Option<u64>| a.zip(b).map(|(a, b)| a as f64 / b as f64);
    let sub_byte = |f: (u32, u32)| f.0 < 8 || f.1 < 8;
    let mut checks = Vec::new();
    let (mut ml_mixed, mut ml_ri5cy, mut mixed_ri5cy, mut ml_ri5cy3) = (0f64, 0f64, 0f64, 0f64);
    let mut mixed_2bit = 0f64;
    for (f, c) in &ladder {
        let name = format!("a{}w{}", f.0, f.1);
        for (label, v) in [("ri5cy", c[0]), ("mixed", c[1]), ("mixed_ml", c[2])] {
            if let Some(v) = v {
                checks.push(Check::new(6, &format!("{name}_{label}_cycles"), v as f64, Bound::Info));
            }
        }
        if let Some(r) = ratio(c[1], c[2]) {
            ml_mixed = ml_mixed.max(r);
        }
        if sub_byte(*f) {
            ml_ri5cy = ml_ri5cy.max(ratio(c[0], c[2]).unwrap_or(0.0));
            ml_ri5cy3 = ml_ri5cy3.max(ratio(c[3], c[2]).unwrap_or(0.0));
            if let Some(r) = ratio(c[0], c[1]) {
                mixed_ri5cy = mixed_ri5cy.max(r);
            }
        }
        if *f == (2, 2) {
            mixed_2bit = ratio(c[0], c[1]).unwrap_or(0.0);
        }
    }
    checks.push(Check::new(6, "best_ml_vs_mixed", ml_mixed, Bound::Within(1.5, 1.8)));
    checks.push(Check::new(6, "best_subbyte_ml_vs_ri5cy", ml_ri5cy, Bound::Within(10.0, 16.0)));
    checks.push(Check::new(6, "max_subbyte_mixed_vs_ri5cy", mixed_ri5cy, Bound::AtMost(7.7)));
    checks.push(Check::new(6, "mixed_vs_ri5cy_2bit", mixed_2bit, Bound::AtLeast(5.0)));
    checks.push(Check::new(6, "best_subbyte_ml_vs_ri5cy_unpack3", ml_ri5cy3, Bound::Info));
    Ok(checks)
}

// ---------------------------------------------------------------- dwe-sw

fn run_programs(cfg: &ClusterConfig, mem: &[(u32, Vec<u8>)], programs: Vec<Program>) -> Result<u64> {
    let mut c = Cluster::new(*cfg)?;
    for (a, b) in mem {
        c.mem_mut().write_bytes(*a, b)?;
    }
    c.load_programs(programs.into_iter().map(Arc::new).collect())?;
    c.run(u64::MAX)
}

fn random_bytes(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let mut v = vec![0u8; n];
    rng.fill_bytes(&mut v);
    v
}

pub fn bench_dwe_sw(seed: u64) -> Result<Vec<Check>> {
    let cfg = ClusterConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 16x16x32 layer, zero-padded input
    let rq = Requant { shift: 7, relu: true };
    let mem = vec![(0, random_bytes(&mut rng, 18 * 18 * 32)), (0x4000, random_bytes(&mut rng, 32 * 12))];
    let sw_job = SwDepthwise { h: 18, w: 18, c: 32, requant: rq, in_base: 0, w_base: 0x4000, out_base: 0x8000 };
    let sw = run_programs(&cfg, &mem, gen_sw_depthwise(&sw_job, cfg.n_cores)?)?;
    let job = DweJob { in_base: 0, w_base: 0x4000, out_base: 0x8000, h: 18, w: 18, c: 32, requant: rq };
    let hw = run_programs(&cfg, &mem, vec![dwe_offload_program(&job)?])?;
    let b = Bottleneck::reduced();
    let data = BottleneckData::random(&b, seed)?;
    let depthwise = |rung| -> Result<u64> {
        let r = run_bottleneck(&b, &data, rung, &cfg)?;
        Ok(r.phases.iter().filter(|p| p.0 == "depthwise").map(|p| p.1).sum())
    };
    let (dw_sw, dw_hw) = (depthwise(Rung::DataMover)?, depthwise(Rung::Dwe)?);
    Ok(vec![
        Check::new(7, "sw_depthwise_cycles", sw as f64, Bound::Info),
        Check::new(7, "dwe_offload_cycles", hw as f64, Bound::Info),
        Check::new(7, "benchmark_layer_speedup", sw as f64 / hw as f64, Bound::AtLeast(5.0)),
        Check::new(7, "bottleneck_dwe_step", dw_sw as f64 / dw_hw as f64, Bound::AtLeast(4.0)),
    ])
}

// ---------------------------------------------------------------- datamover

/// Element `(i, j)` of a packed `rows x cols` matrix of `d`-bit elements,
/// read bit by bit.
fn element(bytes: &[u8], cols: usize, d: usize, i: usize, j: usize) -> u64 {
    let first = (i * cols + j) * d;
    (0..d).fold(0u64, |acc, b| acc | (((bytes[(first + b) / 8] >> ((first + b) % 8)) & 1) as u64) << b)
}

pub fn bench_datamover(seed: u64) -> Result<Vec<Check>> {
    let cfg = ClusterConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mem = Tcdm::new(cfg.tcdm);
    const TILES: usize = 10_000;
    let mut checks = Vec::new();
    for d in [1u32, 2, 4, 8, 16, 32] {
        let e = 32 / d;
        let mut ok = 0;
        let mut cycles_match = 0;
        for _ in 0..TILES {
            let (rows, cols) = (e * rng.gen_range(1..=3), e * rng.gen_range(1..=3));
            let job = DmJob { src_base: 0, dst_base: 0x8000, d, rows, cols };
            let src = random_bytes(&mut rng, job.bytes() as usize);
            mem.write_bytes(0, &src)?;
            let st = run_job(datamover::plan(&job, &cfg.tcdm)?, &mut mem, 1);
            let dst = mem.read_bytes(0x8000, src.len())?;
            let (r, c, du) = (rows as usize, cols as usize, d as usize);
            let good = (0..r).all(|i| (0..c).all(|j| element(&src, c, du, i, j) == element(&dst, r, du, j, i)));
            ok += good as usize;
            cycles_match += (st.busy + st.stall == datamover::dm_cycle_model(&job)) as usize;
        }
        checks.push(Check::new(8, &format!("d{d}_tiles_bit_exact"), ok as f64, Bound::Exactly(TILES as f64)));
        checks.push(Check::new(8, &format!("d{d}_tiles_on_cycle_model"), cycles_match as f64, Bound::Info));
    }
    let img = vec![(0, random_bytes(&mut rng, 16 * 16 * 32))];
    let sw = run_programs(&cfg, &img, gen_sw_transpose(16, 16, 32, Marshal::HwcToChw, 0, 0x4000, cfg.n_cores)?)?;
    let hw = run_programs(&cfg, &img, vec![dm_offload_program(&DmJob { src_base: 0, dst_base: 0x4000, d: 8, rows: 256, cols: 32 })?])?;
    checks.push(Check::new(8, "sw_transpose_cycles", sw as f64, Bound::Info));
    checks.push(Check::new(8, "datamover_cycles", hw as f64, Bound::Info));
    checks.push(Check::new(8, "marshalling_speedup", sw as f64 / hw as f64, Bound::AtLeast(3.0)));
    Ok(checks)
}

// ---------------------------------------------------------------- autoencoder

pub fn bench_autoencoder(seed: u64) -> Result<Vec<Check>> {
    let cfg = ClusterConfig::default();
    let run = run_autoencoder(&cfg, seed)?;
    let mut checks = Vec::new();
    for (i, l) in run.layers.iter().enumerate() {
        let (a, b) = (l.layer.n_in, l.layer.n_out);
        let bound = if l.layer.is_latent() {
            Bound::Within(4.0, 7.0)
        } else if a == AE_HIDDEN || b == AE_HIDDEN {
            Bound::AtLeast(10.0)
        } else {
            Bound::Info
        };
        checks.push(Check::new(9, &format!("layer{i}_{a}x{b}_speedup"), l.tpe_speedup(), bound));
    }
    checks.push(Check::new(9, "tpe_matches_oracle", flag(run.layers.iter().all(|l| l.matches_oracle)), Bound::Exactly(1.0)));
    checks.push(Check::new(9, "epoch_speedup_tpe", run.speedup(AeRung::Tpe), Bound::Info));
    checks.push(Check::new(9, "epoch_speedup_tpe_datamover", run.speedup(AeRung::TpeDataMover), Bound::Within(9.0, 22.0)));
    Ok(checks)
}

// ---------------------------------------------------------------- bottleneck

pub fn bench_bottleneck(seed: u64) -> Result<Vec<Check>> {
    let cfg = ClusterConfig::default();
    let b = Bottleneck::reduced();
    let data = BottleneckData::random(&b, seed)?;
    let want = bottleneck_oracle(&b, &data)?;
    let mut cycles = Vec::new();
    let mut all_match = true;
    for rung in Rung::ALL {
        let r = run_bottleneck(&b, &data, rung, &cfg)?;
        all_match &= r.output == want;
        cycles.push(r.cycles() as f64);
    }
    let mut checks: Vec<Check> = Rung::ALL.iter().zip(&cycles).map(|(r, &c)| Check::new(10, &format!("{r}_cycles"), c, Bound::Info)).collect();
    checks.push(Check::new(10, "strictly_monotone", flag(cycles.windows(2).all(|w| w[1] < w[0])), Bound::Exactly(1.0)));
    checks.push(Check::new(10, "mac_load_step", cycles[0] / cycles[1], Bound::AtLeast(1.2)));
    checks.push(Check::new(10, "datamover_step", cycles[1] / cycles[2], Bound::AtLeast(1.05)));
    checks.push(Check::new(10, "dwe_step", cycles[2] / cycles[3], Bound::Info));
    checks.push(Check::new(10, "overall", cycles[0] / cycles[3], Bound::AtLeast(1.6)));
    checks.push(Check::new(10, "outputs_match_oracle", flag(all_match), Bound::Exactly(1.0)));
    Ok(checks)
}

// ---------------------------------------------------------------- mobilenet

pub const MOBILENET_RESOLUTION: usize = 128;

pub fn bench_mobilenet_at(seed: u64, resolution: usize) -> Result<Vec<Check>> {
    let cfg = ClusterConfig::default();
    let mut net = MobileNetV2::new(resolution)?;
    let data = NetData::random(&net, seed)?;
    calibrate(&mut net, &data)?;
    let want = net_oracle(&net, &data)?.pop().ok_or_else(|| SimError::Validation("empty network".into()))?;
    let co = run_mobilenet(&net, &data, &cfg, DmaMode::ComputeOnly, u64::MAX)?;
    let db = run_mobilenet(&net, &data, &cfg, DmaMode::DoubleBuffered, u64::MAX)?;
    Ok(vec![
        Check::new(11, "compute_only_cycles", co.cycles as f64, Bound::Info),
        Check::new(11, "double_buffered_cycles", db.cycles as f64, Bound::Info),
        Check::new(11, "tiles", db.tiles as f64, Bound::Info),
        Check::new(11, "double_buffer_overhead", db.cycles as f64 / co.cycles as f64, Bound::AtMost(1.05)),
        Check::new(11, "outputs_match_oracle", flag(co.output.data == want.data && db.output.data == want.data), Bound::Exactly(1.0)),
    ])
}

pub fn bench_mobilenet(seed: u64) -> Result<Vec<Check>> {
    bench_mobilenet_at(seed, MOBILENET_RESOLUTION)
}

// ---------------------------------------------------------------- determinism

pub const BUNDLED_SCENARIOS: [(&str, &str); 4] = [
    ("microbench.scn", include_str!("../../scenarios/microbench.scn")),
    ("tpe_then_dwe.scn", include_str!("../../scenarios/tpe_then_dwe.scn")),
    ("contention.scn", include_str!("../../scenarios/contention.scn")),
    ("dma_marshal.scn", include_str!("../../scenarios/dma_marshal.scn")),
];

/// Every bundled scenario and a fast suite run twice; reports compared byte for byte.
pub fn bench_determinism() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (name, text) in BUNDLED_SCENARIOS {
        let sc = Scenario::parse(text, None)?;
        let a = run_scenario(&sc)?;
        let b = run_scenario(&sc)?;
        let same = a.report.render_lines() == b.report.render_lines() && a.l1 == b.l1 && a.l2 == b.l2;
        checks.push(Check::new(12, &format!("{}_identical", name.trim_end_matches(".scn")), flag(same), Bound::Exactly(1.0)));
    }
    let a = checks_report(Suite::Dwe, &bench_dwe(1)?).render_lines();
    let b = checks_report(Suite::Dwe, &bench_dwe(1)?).render_lines();
    checks.push(Check::new(12, "dwe_suite_identical", flag(a == b), Bound::Exactly(1.0)));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds() {
        assert!(Bound::Within(1.0, 2.0).holds(2.0));
        assert!(!Bound::Within(1.0, 2.0).holds(2.01));
        assert!(Bound::Exactly(6.0).holds(6.0) && !Bound::Exactly(6.0).holds(5.999));
        assert!(Bound::AtMost(1.05).holds(1.05) && !Bound::AtLeast(3.0).holds(2.9));
        assert_eq!(Bound::Within(1.5, 1.8).to_string(), "[1.5000,1.8000]");
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn hci_suite_passes() {
        let c = bench_hci().unwrap();
        assert!(c.iter().all(Check::pass), "{c:?}");
    }

    #[test]
    fn element_reader_matches_bytes() {
        let bytes = [0b1011_0100u8, 0xff];
        assert_eq!(element(&bytes, 4, 2, 0, 1), 0b01);
        assert_eq!(element(&bytes, 4, 2, 0, 2), 0b11);
        assert_eq!(element(&bytes, 1, 8, 1, 0), 0xff);
    }

    #[test]
    fn bundled_scenarios_parse_and_conserve() {
        for (name, text) in BUNDLED_SCENARIOS {
            let sc = Scenario::parse(text, None).unwrap_or_else(|e| panic!("{name}: {e}"));
            let out = run_scenario(&sc).unwrap();
            assert!(!out.timed_out, "{name}");
            out.report.check_conservation().unwrap();
        }
    }

    #[test]
    fn parallel_runs_keep_order() {
        let r = run_suites(&[Suite::Hci, Suite::Hci], 0, 2);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].1.as_ref().unwrap(), r[1].1.as_ref().unwrap());
    }
}
