//! Metrics reports: one record per line, `kind key=value ...`.
//!
//! Integers print as-is, ratios with four decimals, strings without spaces.
//! Core `dotp_util` is dot products per active (busy or stalled) cycle.
//! The line form parses back into the same report.

use std::fmt::{self, Write as _};

use crate::cluster::ClusterMetrics;
use crate::error::{Result, SimError};

use super::scenario::{JobSpan, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(u64),
    Float(f64),
    Str(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:.4}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

impl Value {
    fn parse(s: &str) -> Value {
        if let Ok(v) = s.parse::<u64>() {
            Value::Int(v)
        } else if let (true, Ok(v)) = (s.contains('.'), s.parse::<f64>()) {
            Value::Float(v)
        } else {
            Value::Str(s.to_string())
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Str(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub kind: String,
    pub fields: Vec<(String, Value)>,
}

impl Record {
    pub fn new(kind: &str) -> Self {
        Self { kind: kind.into(), fields: Vec::new() }
    }

    pub fn int(mut self, k: &str, v: u64) -> Self {
        self.fields.push((k.into(), Value::Int(v)));
        self
    }

    pub fn float(mut self, k: &str, v: f64) -> Self {
        self.fields.push((k.into(), Value::Float(v)));
        self
    }

    pub fn str(mut self, k: &str, v: &str) -> Self {
        let v: String = v.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect();
        self.fields.push((k.into(), Value::Str(if v.is_empty() { "-".into() } else { v })));
        self
    }

    pub fn get(&self, k: &str) -> Option<&Value> {
        self.fields.iter().find(|(kk, _)| kk == k).map(|(_, v)| v)
    }

    pub fn u64(&self, k: &str) -> Option<u64> {
        self.get(k).and_then(Value::as_u64)
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.kind)?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub records: Vec<Record>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl MetricsReport {
    pub fn from_run(sc: &Scenario, m: &ClusterMetrics, jobs: &[JobSpan], timed_out: bool) -> Self {
        let mut r = Vec::new();
        r.push(
            Record::new("run")
                .str("name", &sc.name)
                .str("hash", &sc.hash)
                .int("seed", sc.seed)
                .int("cores", sc.cluster.n_cores as u64)
                .int("cycles", m.cycles)
                .int("timed_out", timed_out as u64),
        );
        for (i, c) in m.cores.iter().enumerate() {
            r.push(
                Record::new("core")
                    .int("id", i as u64)
                    .int("cycles", c.cycles)
                    .int("busy", c.busy)
                    .int("stall", c.stalls())
                    .int("idle", c.idle)
                    .int("stall_mem", c.stall_mem)
                    .int("stall_load_use", c.stall_load_use)
                    .int("stall_branch", c.stall_branch)
                    .int("instrs", c.instrs)
                    .int("dotp", c.dotp)
                    .int("mac_loads", c.mac_loads)
                    .int("loads", c.loads)
                    .int("stores", c.stores)
                    .int("unpacks", c.unpacks)
                    .float("dotp_util", ratio(c.dotp, c.busy + c.stalls())),
            );
        }
        for (name, e) in [("tpe", &m.tpe), ("dwe", &m.dwe), ("dm", &m.dm)] {
            r.push(
                Record::new("engine")
                    .str("unit", name)
                    .int("cycles", e.cycles)
                    .int("busy", e.busy)
                    .int("stall", e.stall)
                    .int("idle", e.idle)
                    .int("jobs", e.jobs)
                    .int("bytes_read", e.bytes_read)
                    .int("bytes_written", e.bytes_written)
                    .int("peak_bytes", e.max_bytes_per_cycle)
                    .int("macs", e.macs)
                    .float("macs_per_cycle", e.macs_per_cycle()),
            );
        }
        let d = &m.dma_cycles;
        r.push(
            Record::new("dma")
                .int("cycles", d.cycles)
                .int("busy", d.busy)
                .int("stall", d.stall)
                .int("idle", d.idle)
                .int("jobs", m.dma.jobs)
                .int("bytes", m.dma.bytes)
                .int("l1_words", m.dma.l1_words)
                .int("l1_stall", m.dma.l1_stall),
        );
        let h = &m.hci;
        let peak = h.peak_bytes;
        r.push(
            Record::new("hci")
                .int("log_requests", h.log_requests)
                .int("log_grants", h.log_grants)
                .int("log_denied", h.log_denied)
                .int("shallow_requests", h.shallow_requests)
                .int("shallow_grants", h.shallow_grants)
                .int("contested", h.contested)
                .int("shallow_wins", h.shallow_wins)
                .int("log_wins", h.log_wins)
                .int("shallow_bytes", h.shallow_bytes)
                .int("peak_bytes", peak)
                .float("bytes_per_cycle", ratio(h.log_bytes.iter().sum::<u64>() + h.shallow_bytes, m.cycles)),
        );
        for (i, b) in h.log_bytes.iter().enumerate() {
            r.push(Record::new("port").int("id", i as u64).int("bytes", *b).float("bytes_per_cycle", ratio(*b, m.cycles)));
        }
        let banks = &m.bank_accesses;
        r.push(
            Record::new("banks")
                .int("count", banks.len() as u64)
                .int("accesses", banks.iter().sum())
                .int("min", banks.iter().copied().min().unwrap_or(0))
                .int("max", banks.iter().copied().max().unwrap_or(0)),
        );
        for (i, j) in jobs.iter().enumerate() {
            r.push(Record::new("job").int("id", i as u64).str("unit", j.unit).int("start", j.start).int("end", j.end).int("cycles", j.end - j.start));
        }
        MetricsReport { records: r }
    }

    pub fn find<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn render_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(s, "{r}");
        }
        s
    }

    /// Column-aligned tables, one per consecutive run of records of the same
    /// kind and key set.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let mut i = 0;
        while i < self.records.len() {
            let keys: Vec<&str> = self.records[i].fields.iter().map(|(k, _)| k.as_str()).collect();
            let kind = &self.records[i].kind;
            let mut j = i;
            while j < self.records.len()
                && self.records[j].kind == *kind
                && self.records[j].fields.iter().map(|(k, _)| k.as_str()).eq(keys.iter().copied())
            {
                j += 1;
            }
            let rows: Vec<Vec<String>> = self.records[i..j].iter().map(|r| r.fields.iter().map(|(_, v)| v.to_string()).collect()).collect();
            let widths: Vec<usize> = keys.iter().enumerate().map(|(c, k)| rows.iter().map(|r| r[c].len()).max().unwrap_or(0).max(k.len())).collect();
            let _ = writeln!(s, "[{kind}]");
            let line = |cells: Vec<&str>| cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ");
            let _ = writeln!(s, "{}", line(keys.clone()));
            for r in &rows {
                let _ = writeln!(s, "{}", line(r.iter().map(String::as_str).collect()));
            }
            s.push('\n');
            i = j;
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut toks = line.split_whitespace();
            let kind = toks.next().unwrap_or_default();
            let mut rec = Record::new(kind);
            for t in toks {
                let (k, v) = t.split_once('=').ok_or_else(|| SimError::Parse(format!("line {}: `{t}` is not key=value", n + 1)))?;
                rec.fields.push((k.to_string(), Value::parse(v)));
            }
            records.push(rec);
        }
        Ok(MetricsReport { records })
    }

    /// Every record carrying a cycle breakdown must add up:
    /// busy + stall + idle == cycles.
    pub fn check_conservation(&self) -> Result<()> {
        for r in &self.records {
            if let (Some(c), Some(b), Some(s), Some(i)) = (r.u64("cycles"), r.u64("busy"), r.u64("stall"), r.u64("idle")) {
                if b + s + i != c {
                    return Err(SimError::Validation(format!("{r}: busy+stall+idle = {} != cycles {c}", b + s + i)));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsReport {
        MetricsReport {
            records: vec![
                Record::new("run").str("name", "a b").int("cycles", 10),
                Record::new("core").int("id", 0).int("cycles", 10).int("busy", 6).int("stall", 1).int("idle", 3).float("util", 0.5),
                Record::new("core").int("id", 1).int("cycles", 10).int("busy", 10).int("stall", 0).int("idle", 0).float("util", 1.0 / 3.0),
            ],
        }
    }

    #[test]
    fn lines_round_trip() {
        let r = sample();
        let text = r.render_lines();
        assert!(text.contains("name=a_b"));
        assert!(text.contains("util=0.3333"));
        let back = MetricsReport::parse(&text).unwrap();
        assert_eq!(back.render_lines(), text);
        assert_eq!(back.find("core").count(), 2);
    }

    #[test]
    fn table_groups_kinds() {
        let t = sample().render_table();
        assert_eq!(t.matches("[core]").count(), 1);
        assert!(t.contains("util"));
    }

    #[test]
    fn conservation_detects_mismatch() {
        let mut r = sample();
        r.check_conservation().unwrap();
        r.records[1].fields[2] = ("busy".into(), Value::Int(5));
        assert!(r.check_conservation().is_err());
    }

    #[test]
    fn bad_field_rejected() {
        assert!(MetricsReport::parse("run cycles").is_err());
    }
}
