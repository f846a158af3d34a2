//! Scenario files: line-oriented sections of `key = value` pairs.
//!
//! ```text
//! # comment
//! [cluster]
//! cores = 8
//! priority = shallow          # shallow | logarithmic
//! max_stall = 10
//! l2_latency = 10
//! l2_bytes_per_cycle = 8
//!
//! [run]
//! name = demo
//! max_cycles = 100000
//! seed = 7
//!
//! [memory]
//! random = 0x0 4096           # L1 bytes from the scenario seed
//! bytes = 0x1000 01 02 ff
//! file = 0x2000 image.bin     # relative to the scenario file
//! l2_random = 0x0 65536
//! l2_file = 0x10000 weights.bin
//!
//! [core 0]                    # body is assembly up to the next section
//! li x1, 4
//!
//! [kernel]                    # generated convolution kernel
//! variant = mixed-ml          # ri5cy | ri5cy:<unpack cost> | mixed | mixed-ml
//! cores = 0 1                 # first core and core count
//! act = u8
//! wgt = i8
//! shape = 1 4 1024 4 1 0      # h w c_in c_out k pad
//! requant = 10 norelu
//! base = 0x0 0x8000 0x10000   # input, weights, output
//!
//! [tpe]                       # also [dwe], [dm], [dma]; one job per section
//! at = 0                      # start cycle (waits if the engine is busy)
//! x = 0x0
//! ...
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::cluster::{Cluster, ClusterConfig};
use crate::datamover::DmJob;
use crate::dma::{DmaDir, DmaJob};
use crate::dwe::{dwe_cycle_model, DweJob, Requant};
use crate::error::{Result, SimError};
use crate::hci::Branch;
use crate::numerics::LaneFormat;
use crate::rvnn::{parse_program, Program};
use crate::tpe::{tpe_cycle_model, TpeJob};
use crate::workloads::conv::{gen_conv_programs, ConvLayer, CoreVariant};
use crate::workloads::oracle::ConvShape;

use super::report::MetricsReport;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemInit {
    L1 { addr: u32, bytes: Vec<u8> },
    L1Random { addr: u32, len: usize },
    L2 { addr: u32, bytes: Vec<u8> },
    L2Random { addr: u32, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Job {
    Tpe(TpeJob),
    Dwe(DweJob),
    Dm(DmJob),
    Dma(DmaJob),
}

impl Job {
    pub fn unit(&self) -> &'static str {
        match self {
            Job::Tpe(_) => "tpe",
            Job::Dwe(_) => "dwe",
            Job::Dm(_) => "dm",
            Job::Dma(_) => "dma",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimedJob {
    pub at: u64,
    pub job: Job,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// SHA-256 of the source text.
    pub hash: String,
    pub cluster: ClusterConfig,
    pub max_cycles: u64,
    pub seed: u64,
    pub memory: Vec<MemInit>,
    /// Program per core index; unlisted cores below the highest index idle.
    pub programs: BTreeMap<usize, Program>,
    pub jobs: Vec<TimedJob>,
}

fn perr(line: usize, msg: impl std::fmt::Display) -> SimError {
    SimError::Parse(format!("line {line}: {msg}"))
}

fn num(tok: &str, line: usize) -> Result<u64> {
    let t = tok.replace('_', "");
    let r = match t.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16),
        None => t.parse(),
    };
    r.map_err(|_| perr(line, format!("bad number `{tok}`")))
}

fn num32(tok: &str, line: usize) -> Result<u32> {
    u32::try_from(num(tok, line)?).map_err(|_| perr(line, format!("`{tok}` does not fit 32 bits")))
}

fn nums(v: &str, n: usize, line: usize) -> Result<Vec<u64>> {
    let out: Vec<u64> = v.split_whitespace().map(|t| num(t, line)).collect::<Result<_>>()?;
    if out.len() != n {
        return Err(perr(line, format!("expected {n} numbers, got {}", out.len())));
    }
    Ok(out)
}

fn requant(v: &str, line: usize) -> Result<Requant> {
    let mut it = v.split_whitespace();
    let shift = it.next().ok_or_else(|| perr(line, "requant needs a shift"))?;
    let shift = u8::try_from(num(shift, line)?).map_err(|_| perr(line, "shift too large"))?;
    let relu = match it.next() {
        None | Some("norelu") => false,
        Some("relu") => true,
        Some(o) => return Err(perr(line, format!("expected relu/norelu, got `{o}`"))),
    };
    Ok(Requant { shift, relu })
}

/// Key/value pairs of one section with the line each came from.
struct Section {
    name: String,
    arg: Option<String>,
    line: usize,
    kv: Vec<(String, String, usize)>,
    body: String,
}

impl Section {
    fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.kv.iter().rev().find(|(k, _, _)| k == key).map(|(_, v, l)| (v.as_str(), *l))
    }

    fn need(&self, key: &str) -> Result<(&str, usize)> {
        self.get(key).ok_or_else(|| perr(self.line, format!("[{}] needs `{key}`", self.name)))
    }

    fn u32_or(&self, key: &str, default: u32) -> Result<u32> {
        self.get(key).map_or(Ok(default), |(v, l)| num32(v, l))
    }

    fn req_u32(&self, key: &str) -> Result<u32> {
        let (v, l) = self.need(key)?;
        num32(v, l)
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, _, l) in &self.kv {
            if !allowed.contains(&k.as_str()) {
                return Err(perr(*l, format!("unknown key `{k}` in [{}]", self.name)));
            }
        }
        Ok(())
    }
}

fn split_sections(text: &str) -> Result<Vec<Section>> {
    let mut out: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if let Some(h) = trimmed.strip_prefix('[') {
            let h = h.split('#').next().unwrap_or("").trim();
            let h = h.strip_suffix(']').ok_or_else(|| perr(line, "unterminated section header"))?;
            let mut parts = h.split_whitespace();
            let name = parts.next().ok_or_else(|| perr(line, "empty section header"))?.to_string();
            let arg = parts.next().map(str::to_string);
            out.push(Section { name, arg, line, kv: Vec::new(), body: String::new() });
            continue;
        }
        let Some(sec) = out.last_mut() else {
            let content = trimmed.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            return Err(perr(line, "content before the first section"));
        };
        if sec.name == "core" {
            sec.body.push_str(raw);
            sec.body.push('\n');
            continue;
        }
        let content = trimmed.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| perr(line, format!("expected `key = value`, got `{content}`")))?;
        sec.kv.push((k.trim().to_string(), v.trim().to_string(), line));
    }
    Ok(out)
}

fn read_file(base: Option<&Path>, name: &str, line: usize) -> Result<Vec<u8>> {
    let p = match base {
        Some(b) => b.join(name),
        None => Path::new(name).to_path_buf(),
    };
    std::fs::read(&p).map_err(|e| perr(line, format!("{}: {e}", p.display())))
}

fn parse_memory(s: &Section, base: Option<&Path>, out: &mut Vec<MemInit>) -> Result<()> {
    for (k, v, l) in &s.kv {
        let (l, mut toks) = (*l, v.split_whitespace());
        let addr = num32(toks.next().ok_or_else(|| perr(l, "missing address"))?, l)?;
        let rest: Vec<&str> = toks.collect();
        let one = |what: &str| -> Result<&str> {
            match rest.as_slice() {
                [x] => Ok(x),
                _ => Err(perr(l, format!("`{k}` takes an address and {what}"))),
            }
        };
        let item = match k.as_str() {
            "random" => MemInit::L1Random { addr, len: num(one("a length")?, l)? as usize },
            "l2_random" => MemInit::L2Random { addr, len: num(one("a length")?, l)? as usize },
            "bytes" => MemInit::L1 {
                addr,
                bytes: rest.iter().map(|t| u8::from_str_radix(t, 16).map_err(|_| perr(l, format!("bad hex byte `{t}`")))).collect::<Result<_>>()?,
            },
            "file" => MemInit::L1 { addr, bytes: read_file(base, one("a path")?, l)? },
            "l2_file" => MemInit::L2 { addr, bytes: read_file(base, one("a path")?, l)? },
            _ => return Err(perr(l, format!("unknown memory directive `{k}`"))),
        };
        out.push(item);
    }
    Ok(())
}

fn parse_kernel(s: &Section, cfg: &ClusterConfig) -> Result<(usize, Vec<Program>)> {
    s.check_keys(&["variant", "cores", "act", "wgt", "shape", "requant", "base"])?;
    let (v, l) = s.need("variant")?;
    let variant: CoreVariant = v.parse().map_err(|e| perr(l, e))?;
    let (first, count) = match s.get("cores") {
        Some((v, l)) => {
            let c = nums(v, 2, l)?;
            (c[0] as usize, c[1] as usize)
        }
        None => (0, cfg.n_cores),
    };
    let fmt = |key: &str| -> Result<LaneFormat> {
        let (v, l) = s.need(key)?;
        v.parse().map_err(|e| perr(l, e))
    };
    let (v, l) = s.need("shape")?;
    let d = nums(v, 6, l)?;
    let shape = ConvShape { h: d[0] as usize, w: d[1] as usize, c_in: d[2] as usize, c_out: d[3] as usize, k: d[4] as usize, pad: d[5] as usize };
    let rq = match s.get("requant") {
        Some((v, l)) => requant(v, l)?,
        None => Requant::default(),
    };
    let (v, l) = s.need("base")?;
    let b = nums(v, 3, l)?;
    let layer = ConvLayer { shape, act: fmt("act")?, wgt: fmt("wgt")?, requant: rq, in_base: b[0] as u32, w_base: b[1] as u32, out_base: b[2] as u32, out_pad: 0 };
    let progs = gen_conv_programs(variant, &layer, count, cfg.tcdm.total_bytes()).map_err(|e| perr(s.line, e))?;
    Ok((first, progs))
}

fn parse_job(s: &Section) -> Result<TimedJob> {
    let at = s.get("at").map_or(Ok(0), |(v, l)| num(v, l))?;
    let job = match s.name.as_str() {
        "tpe" => {
            s.check_keys(&["at", "x", "w", "z", "m", "n", "k", "x_stride", "w_stride", "z_stride"])?;
            Job::Tpe(TpeJob {
                x_base: s.req_u32("x")?,
                w_base: s.req_u32("w")?,
                z_base: s.req_u32("z")?,
                m: s.req_u32("m")?,
                n: s.req_u32("n")?,
                k: s.req_u32("k")?,
                x_stride: s.u32_or("x_stride", 0)?,
                w_stride: s.u32_or("w_stride", 0)?,
                z_stride: s.u32_or("z_stride", 0)?,
            })
        }
        "dwe" => {
            s.check_keys(&["at", "input", "weights", "output", "h", "w", "c", "requant"])?;
            let rq = match s.get("requant") {
                Some((v, l)) => requant(v, l)?,
                None => Requant::default(),
            };
            Job::Dwe(DweJob {
                in_base: s.req_u32("input")?,
                w_base: s.req_u32("weights")?,
                out_base: s.req_u32("output")?,
                h: s.req_u32("h")?,
                w: s.req_u32("w")?,
                c: s.req_u32("c")?,
                requant: rq,
            })
        }
        "dm" => {
            s.check_keys(&["at", "src", "dst", "bits", "rows", "cols"])?;
            Job::Dm(DmJob { src_base: s.req_u32("src")?, dst_base: s.req_u32("dst")?, d: s.req_u32("bits")?, rows: s.req_u32("rows")?, cols: s.req_u32("cols")? })
        }
        "dma" => {
            s.check_keys(&["at", "src", "dst", "len", "count", "src_stride", "dst_stride", "dir"])?;
            let (v, l) = s.need("dir")?;
            let dir = match v {
                "in" | "l2_to_l1" => DmaDir::L2ToL1,
                "out" | "l1_to_l2" => DmaDir::L1ToL2,
                o => return Err(perr(l, format!("DMA direction `{o}` (expected in/out)"))),
            };
            let len = s.req_u32("len")?;
            Job::Dma(DmaJob {
                src: s.req_u32("src")?,
                dst: s.req_u32("dst")?,
                inner_len: len,
                outer_count: s.u32_or("count", 1)?,
                src_stride: s.u32_or("src_stride", len)?,
                dst_stride: s.u32_or("dst_stride", len)?,
                dir,
            })
        }
        _ => unreachable!(),
    };
    Ok(TimedJob { at, job })
}

impl Scenario {
    /// Parse scenario text; file references resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut sc = Scenario {
            name: "scenario".into(),
            hash: hex(&Sha256::digest(text.as_bytes())),
            cluster: ClusterConfig::default(),
            max_cycles: 10_000_000,
            seed: 0,
            memory: Vec::new(),
            programs: BTreeMap::new(),
            jobs: Vec::new(),
        };
        let sections = split_sections(text)?;
        // cluster settings first: kernels depend on them
        for s in sections.iter().filter(|s| s.name == "cluster") {
            s.check_keys(&["cores", "priority", "max_stall", "l2_latency", "l2_bytes_per_cycle", "l2_size"])?;
            let c = &mut sc.cluster;
            if let Some((v, l)) = s.get("cores") {
                c.n_cores = num(v, l)? as usize;
            }
            if let Some((v, l)) = s.get("priority") {
                c.hci.priority = v.parse::<Branch>().map_err(|e| perr(l, e))?;
            }
            c.hci.max_stall = s.u32_or("max_stall", c.hci.max_stall)?;
            if let Some((v, l)) = s.get("l2_latency") {
                c.dma.l2.latency = num(v, l)?;
            }
            c.dma.l2.bytes_per_cycle = s.u32_or("l2_bytes_per_cycle", c.dma.l2.bytes_per_cycle)?;
            if let Some((v, l)) = s.get("l2_size") {
                c.dma.l2.size = num(v, l)? as usize;
            }
        }
        for s in &sections {
            match s.name.as_str() {
                "cluster" => {}
                "run" => {
                    s.check_keys(&["name", "max_cycles", "seed"])?;
                    if let Some((v, _)) = s.get("name") {
                        sc.name = v.to_string();
                    }
                    if let Some((v, l)) = s.get("max_cycles") {
                        sc.max_cycles = num(v, l)?;
                    }
                    if let Some((v, l)) = s.get("seed") {
                        sc.seed = num(v, l)?;
                    }
                }
                "memory" => parse_memory(s, base, &mut sc.memory)?,
                "core" => {
                    let idx = s.arg.as_deref().ok_or_else(|| perr(s.line, "[core N] needs a core index"))?;
                    let idx = num(idx, s.line)? as usize;
                    let p = parse_program(&s.body).map_err(|e| perr(s.line, e))?;
                    if sc.programs.insert(idx, p).is_some() {
                        return Err(perr(s.line, format!("core {idx} has two programs")));
                    }
                }
                "kernel" => {
                    let (first, progs) = parse_kernel(s, &sc.cluster)?;
                    for (i, p) in progs.into_iter().enumerate() {
                        if sc.programs.insert(first + i, p).is_some() {
                            return Err(perr(s.line, format!("core {} has two programs", first + i)));
                        }
                    }
                }
                "tpe" | "dwe" | "dm" | "dma" => sc.jobs.push(parse_job(s)?),
                o => return Err(perr(s.line, format!("unknown section [{o}]"))),
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    /// Static checks: configuration, address ranges, job legality and the
    /// rule that TPE and DWE never hold the wide port at the same time.
    pub fn validate(&self) -> Result<()> {
        let c = &self.cluster;
        c.validate()?;
        if let Some(&i) = self.programs.keys().next_back() {
            if i >= c.n_cores {
                return Err(SimError::Validation(format!("program for core {i} but only {} cores", c.n_cores)));
            }
        }
        let l1 = c.tcdm.total_bytes();
        for m in &self.memory {
            let (addr, len, limit, what) = match m {
                MemInit::L1 { addr, bytes } => (*addr, bytes.len(), l1, "L1"),
                MemInit::L1Random { addr, len } => (*addr, *len, l1, "L1"),
                MemInit::L2 { addr, bytes } => (*addr, bytes.len(), c.dma.l2.size, "L2"),
                MemInit::L2Random { addr, len } => (*addr, *len, c.dma.l2.size, "L2"),
            };
            if addr as usize + len > limit {
                return Err(SimError::Validation(format!("{what} image at {addr:#x}+{len} exceeds {limit} bytes")));
            }
        }
        let mut wide = Vec::new();
        for j in &self.jobs {
            match &j.job {
                Job::Tpe(t) => wide.push((j.at, j.at + tpe_cycle_model(t, &c.tpe, &c.tcdm)?.cycles, "tpe")),
                Job::Dwe(d) => {
                    d.validate(&c.tcdm)?;
                    wide.push((j.at, j.at + dwe_cycle_model(d)?.cycles, "dwe"));
                }
                Job::Dm(d) => d.validate(&c.tcdm)?,
                Job::Dma(d) => d.validate(&c.tcdm, &c.dma.l2)?,
            }
        }
        for (i, a) in wide.iter().enumerate() {
            for b in &wide[i + 1..] {
                if a.2 != b.2 && a.0 < b.1 && b.0 < a.1 {
                    return Err(SimError::Validation(format!(
                        "{} job at cycle {} and {} job at cycle {} would share the wide port",
                        a.2, a.0, b.2, b.0
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Start and end cycle of every scenario job, in job order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobSpan {
    pub unit: &'static str,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub report: MetricsReport,
    pub l1: Vec<u8>,
    pub l2: Vec<u8>,
    pub timed_out: bool,
}

fn engine_busy(c: &Cluster, unit: &str) -> bool {
    match unit {
        "tpe" => c.tpe_busy(),
        "dwe" => c.dwe_busy(),
        "dm" => c.dm_busy(),
        _ => false,
    }
}

/// Run to completion or `max_cycles`. Jobs start at their cycle, or as soon
/// after as their unit is free (DMA jobs as soon as the queue has room).
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioOutcome> {
    let mut c = Cluster::new(sc.cluster)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(sc.seed);
    for m in &sc.memory {
        match m {
            MemInit::L1 { addr, bytes } => c.mem_mut().write_bytes(*addr, bytes)?,
            MemInit::L1Random { addr, len } => {
                let mut b = vec![0u8; *len];
                rng.fill_bytes(&mut b);
                c.mem_mut().write_bytes(*addr, &b)?;
            }
            MemInit::L2 { addr, bytes } => c.dma_mut().l2_write(*addr, bytes)?,
            MemInit::L2Random { addr, len } => {
                let mut b = vec![0u8; *len];
                rng.fill_bytes(&mut b);
                c.dma_mut().l2_write(*addr, &b)?;
            }
        }
    }
    if let Some(&last) = sc.programs.keys().next_back() {
        let progs = (0..=last).map(|i| Arc::new(sc.programs.get(&i).cloned().unwrap_or_default())).collect();
        c.load_programs(progs)?;
    }
    let mut order: Vec<usize> = (0..sc.jobs.len()).collect();
    order.sort_by_key(|&i| (sc.jobs[i].at, i));
    let mut next = 0;
    let mut spans: Vec<Option<JobSpan>> = vec![None; sc.jobs.len()];
    let mut running: Vec<(usize, &'static str)> = Vec::new();
    let mut dma_handles: Vec<(usize, crate::dma::DmaHandle)> = Vec::new();
    let mut timed_out = false;
    loop {
        // retire finished jobs
        running.retain(|&(i, unit)| {
            if engine_busy(&c, unit) {
                true
            } else {
                if let Some(s) = spans[i].as_mut() {
                    s.end = c.cycle();
                }
                false
            }
        });
        for &(h, t) in c.dma_completions() {
            if let Some(&(i, _)) = dma_handles.iter().find(|(_, hh)| *hh == h) {
                if let Some(s) = spans[i].as_mut() {
                    s.end = t;
                }
            }
        }
        while next < order.len() && sc.jobs[order[next]].at <= c.cycle() {
            let i = order[next];
            let j = &sc.jobs[i];
            let started = match &j.job {
                Job::Tpe(t) if !c.tpe_busy() && !c.dwe_busy() => c.start_tpe(t).map(|_| true)?,
                Job::Dwe(d) if !c.tpe_busy() && !c.dwe_busy() => c.start_dwe(d).map(|_| true)?,
                Job::Dm(d) if !c.dm_busy() => c.start_dm(d).map(|_| true)?,
                Job::Dma(d) if c.dma().outstanding() < c.dma().config().max_outstanding => {
                    let h = c.enqueue_dma(*d)?;
                    dma_handles.push((i, h));
                    true
                }
                _ => false,
            };
            if !started {
                break;
            }
            spans[i] = Some(JobSpan { unit: j.job.unit(), start: c.cycle(), end: c.cycle() });
            if !matches!(j.job, Job::Dma(_)) {
                running.push((i, j.job.unit()));
            }
            next += 1;
        }
        if next == order.len() && c.done() {
            break;
        }
        if c.cycle() >= sc.max_cycles {
            timed_out = true;
            break;
        }
        c.step()?;
    }
    for &(i, _) in &running {
        if let Some(s) = spans[i].as_mut() {
            s.end = c.cycle();
        }
    }
    let spans: Vec<JobSpan> = spans.into_iter().flatten().collect();
    let report = MetricsReport::from_run(sc, &c.metrics(), &spans, timed_out);
    Ok(ScenarioOutcome { report, l1: c.mem().image(), l2: c.dma().l2().to_vec(), timed_out })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TPE_DWE: &str = "
[run]
name = mix
seed = 3
[memory]
random = 0x0 2048
[tpe]
at = 0
x = 0x0
w = 0x800
z = 0x4000
m = 16
n = 16
k = 16
[dwe]
at = {AT}
input = 0x8000
weights = 0x9000
output = 0xa000
h = 6
w = 6
c = 16
requant = 4 relu
";

    fn tpe_dwe(at: u64) -> String {
        TPE_DWE.replace("{AT}", &at.to_string())
    }

    #[test]
    fn overlapping_wide_port_jobs_rejected() {
        let e = Scenario::parse(&tpe_dwe(5), None).unwrap_err();
        assert!(matches!(e, SimError::Validation(_)), "{e}");
    }

    #[test]
    fn sequential_wide_port_jobs_run() {
        let sc = Scenario::parse(&tpe_dwe(100_000), None).unwrap();
        assert_eq!(sc.name, "mix");
        assert_eq!(sc.jobs.len(), 2);
        let tpe_model = match sc.jobs[0].job {
            Job::Tpe(t) => tpe_cycle_model(&t, &sc.cluster.tpe, &sc.cluster.tcdm).unwrap().cycles,
            _ => unreachable!(),
        };
        let sc = Scenario::parse(&tpe_dwe(tpe_model), None).unwrap();
        let out = run_scenario(&sc).unwrap();
        assert!(!out.timed_out);
        let jobs: Vec<_> = out.report.find("job").collect();
        assert_eq!(jobs.len(), 2);
        assert_eq!(jobs[0].u64("start"), Some(0));
        assert_eq!(jobs[1].u64("start"), Some(tpe_model));
        out.report.check_conservation().unwrap();
    }

    #[test]
    fn same_engine_jobs_queue() {
        let text = "
[tpe]
x = 0
w = 0x1000
z = 0x2000
m = 8
n = 8
k = 8
[tpe]
x = 0
w = 0x1000
z = 0x3000
m = 8
n = 8
k = 8
";
        let sc = Scenario::parse(text, None).unwrap();
        let out = run_scenario(&sc).unwrap();
        let j: Vec<_> = out.report.find("job").collect();
        assert!(j[1].u64("start").unwrap() >= j[0].u64("end").unwrap());
        assert_eq!(out.l1[0x2000..0x2080], out.l1[0x3000..0x3080]);
    }

    #[test]
    fn core_programs_and_memory() {
        let text = "
[memory]
bytes = 0x10 01 02 03 04
[core 1]
li x1, 0x10
lw x2, 0(x1)
sw x2, 4(x1)
";
        let sc = Scenario::parse(text, None).unwrap();
        let out = run_scenario(&sc).unwrap();
        assert_eq!(&out.l1[0x14..0x18], &[1, 2, 3, 4]);
        assert_eq!(out.report.find("core").count(), 2);
    }

    #[test]
    fn dma_moves_l2_data() {
        let text = "
[memory]
l2_random = 0x100 256
[dma]
src = 0x100
dst = 0x40
len = 256
dir = in
";
        let sc = Scenario::parse(text, None).unwrap();
        let out = run_scenario(&sc).unwrap();
        assert_eq!(out.l1[0x40..0x140], out.l2[0x100..0x200]);
        let j = out.report.find("job").next().unwrap();
        assert!(j.u64("cycles").unwrap() >= 64);
    }

    #[test]
    fn kernel_section_generates_programs() {
        let text = "
[memory]
random = 0x0 0x4000
[kernel]
variant = mixed-ml
cores = 0 2
act = u8
wgt = i8
shape = 2 4 64 4 1 0
requant = 8 norelu
base = 0x0 0x1000 0x8000
";
        let sc = Scenario::parse(text, None).unwrap();
        assert_eq!(sc.programs.len(), 2);
        let out = run_scenario(&sc).unwrap();
        assert!(out.report.find("core").all(|c| c.u64("instrs").unwrap() > 0));
    }

    #[test]
    fn timeout_is_flagged() {
        let text = "[run]\nmax_cycles = 50\n[core 0]\nloop 1000 {\nnop\n}\n";
        let out = run_scenario(&Scenario::parse(text, None).unwrap()).unwrap();
        assert!(out.timed_out);
        assert_eq!(out.report.find("run").next().unwrap().u64("timed_out"), Some(1));
    }

    #[test]
    fn errors_carry_line_numbers() {
        for (text, line) in [
            ("[run]\nbogus = 1\n", "line 2"),
            ("[tpe]\nx = 0\n", "line 1"),
            ("x = 1\n", "line 1"),
            ("[run]\n[wat]\n", "line 2"),
            ("[memory]\nbytes = 0x0 zz\n", "line 2"),
        ] {
            let e = Scenario::parse(text, None).unwrap_err().to_string();
            assert!(e.contains(line), "{text:?}: {e}");
        }
        assert!(matches!(Scenario::parse("[memory]\nrandom = 0x1ffff 16\n", None), Err(SimError::Validation(_))));
        assert!(Scenario::parse("[core 9]\nnop\n", None).is_err());
    }

    #[test]
    fn hash_tracks_text() {
        let a = Scenario::parse("[run]\nseed = 1\n", None).unwrap();
        let b = Scenario::parse("[run]\nseed = 1\n", None).unwrap();
        let c = Scenario::parse("[run]\nseed = 2\n", None).unwrap();
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
        assert_eq!(a.hash.len(), 64);
    }

    #[test]
    fn reruns_are_identical() {
        let sc = Scenario::parse(&tpe_dwe(1_000_000), None).unwrap();
        let a = run_scenario(&sc).unwrap();
        let b = run_scenario(&sc).unwrap();
        assert_eq!(a, b);
    }
}
