//! Depthwise engine: weight-stationary 3x3 depthwise convolution over groups
//! of 16 channels, int8 HWC in and out, with requantization.
//!
//! Per group: weights preload through the wide port, then the input is scanned
//! in vertical strips one output column wide. Each strip fills a 3x3 pixel
//! window, then spends 4 cycles per output; those cycles carry the store of the
//! previous output pixel and the three loads of the next window row.

use crate::engine::{chunked_reads, pack_bytes, word_span, Kernel, Mirror, Slot};
use crate::error::{fault, Result, SimError};
use crate::tcdm::{Tcdm, TcdmConfig};

pub const GROUP: usize = 16;
pub const TAPS: usize = 9;
/// Cycles per output pixel in steady state.
pub const LOOP_CYCLES: usize = 4;
pub const MAC_UNITS: usize = GROUP * TAPS / LOOP_CYCLES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Requant {
    pub shift: u8,
    pub relu: bool,
}

impl Requant {
    pub fn apply(&self, acc: i32) -> i8 {
        let v = if self.relu { acc.max(0) } else { acc };
        (v >> self.shift.min(31)).clamp(-128, 127) as i8
    }

    /// Register encoding: shift in bits 0..8, relu in bit 8.
    pub fn to_word(self) -> u32 {
        self.shift as u32 | (self.relu as u32) << 8
    }

    pub fn from_word(w: u32) -> Self {
        Self { shift: (w & 0xFF) as u8, relu: w & 0x100 != 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DweJob {
    pub in_base: u32,
    pub w_base: u32,
    pub out_base: u32,
    pub h: u32,
    pub w: u32,
    pub c: u32,
    pub requant: Requant,
}

impl DweJob {
    pub fn out_h(&self) -> u32 {
        self.h.saturating_sub(2)
    }

    pub fn out_w(&self) -> u32 {
        self.w.saturating_sub(2)
    }

    pub fn groups(&self) -> u32 {
        self.c.div_ceil(GROUP as u32)
    }

    pub fn macs(&self) -> u64 {
        self.out_h() as u64 * self.out_w() as u64 * self.c as u64 * TAPS as u64
    }

    fn group_channels(&self, g: u32) -> u32 {
        (self.c - g * GROUP as u32).min(GROUP as u32)
    }

    fn in_addr(&self, y: u32, x: u32, ch: u32) -> u32 {
        self.in_base + (y * self.w + x) * self.c + ch
    }

    fn out_addr(&self, y: u32, x: u32, ch: u32) -> u32 {
        self.out_base + (y * self.out_w() + x) * self.c + ch
    }

    pub fn validate(&self, tcdm: &TcdmConfig) -> Result<()> {
        if self.c == 0 {
            return Err(SimError::JobRejected("depthwise job has no channels".into()));
        }
        let spans = [
            (self.in_base, self.h as u64 * self.w as u64 * self.c as u64),
            (self.w_base, self.c as u64 * TAPS as u64),
            (self.out_base, self.out_h() as u64 * self.out_w() as u64 * self.c as u64),
        ];
        for &(a, n) in &spans {
            if a as u64 + n > tcdm.total_bytes() as u64 {
                return Err(fault(a, "depthwise operand leaves L1"));
            }
        }
        let (o, on) = spans[2];
        for &(a, n) in &spans[..2] {
            if on > 0 && n > 0 && (o as u64) < a as u64 + n && (a as u64) < o as u64 + on {
                return Err(SimError::JobRejected("depthwise output aliases an input".into()));
            }
        }
        Ok(())
    }
}

/// Engine-local storage for one 16-channel group.
#[derive(Debug, Clone)]
pub struct DweBuffers {
    pub weights: [[i8; TAPS]; GROUP],
    pub window: [[[i8; GROUP]; 3]; 4],
    pub acc: [i32; GROUP],
    pub out: [i8; GROUP],
}

impl Default for DweBuffers {
    fn default() -> Self {
        Self { weights: [[0; TAPS]; GROUP], window: [[[0; GROUP]; 3]; 4], acc: [0; GROUP], out: [0; GROUP] }
    }
}

impl DweBuffers {
    /// The 4-cycle datapath loop over window rows `top..top+3` (mod 4),
    /// four accumulators per cycle, then requantization into `out`.
    pub fn compute(&mut self, top: usize, rq: Requant) {
        self.acc = [0; GROUP];
        for cycle in 0..LOOP_CYCLES {
            for ch in cycle * 4..cycle * 4 + 4 {
                for dy in 0..3 {
                    for dx in 0..3 {
                        let a = self.window[(top + dy) % 4][dx][ch] as i32;
                        self.acc[ch] = self.acc[ch].wrapping_add(a * self.weights[ch][dy * 3 + dx] as i32);
                    }
                }
            }
        }
        for ch in 0..GROUP {
            self.out[ch] = rq.apply(self.acc[ch]);
        }
    }
}

struct DweKernel {
    job: DweJob,
}

impl DweKernel {
    fn decode(&self, tag: u32) -> (u32, u32, u32) {
        let (ho, wo) = (self.job.out_h(), self.job.out_w());
        (tag / (ho * wo), tag / ho % wo, tag % ho)
    }
}

impl Kernel for DweKernel {
    fn write(&self, tag: u32, m: &Mirror) -> (u32, Vec<(u32, u8)>) {
        let j = &self.job;
        let (g, x, y) = self.decode(tag);
        let cc = j.group_channels(g) as usize;
        let c0 = g * GROUP as u32;
        let mut b = DweBuffers::default();
        for ch in 0..cc {
            for t in 0..TAPS {
                b.weights[ch][t] = m.byte(j.w_base + (c0 + ch as u32) * TAPS as u32 + t as u32) as i8;
            }
        }
        // window rows live at (row mod 4) as the hardware buffer rotates
        for dy in 0..3 {
            for dx in 0..3 {
                for ch in 0..cc {
                    b.window[(y + dy) as usize % 4][dx as usize][ch] =
                        m.byte(j.in_addr(y + dy, x + dx, c0 + ch as u32)) as i8;
                }
            }
        }
        b.compute(y as usize % 4, j.requant);
        let bytes: Vec<u8> = b.out[..cc].iter().map(|&v| v as u8).collect();
        pack_bytes(j.out_addr(y, x, c0), &bytes)
    }

    fn macs(&self) -> u64 {
        self.job.macs()
    }
}

pub fn plan(job: &DweJob, tcdm: &TcdmConfig, max_words: u32) -> Result<(Vec<Slot>, Box<dyn Kernel>)> {
    job.validate(tcdm)?;
    Ok((schedule(job, max_words), Box::new(DweKernel { job: *job })))
}

fn schedule(job: &DweJob, max_words: u32) -> Vec<Slot> {
    let (ho, wo) = (job.out_h(), job.out_w());
    let mut slots = Vec::new();
    for g in 0..job.groups() {
        let cc = job.group_channels(g);
        let c0 = g * GROUP as u32;
        slots.extend(chunked_reads(job.w_base + c0 * TAPS as u32, cc * TAPS as u32, max_words));
        let pixel = |y: u32, x: u32| {
            let (addr, words) = word_span(job.in_addr(y, x, c0), cc);
            Slot::Read { addr, words }
        };
        let tag = |x: u32, y: u32| (g * wo + x) * ho + y;
        for x in 0..if ho == 0 { 0 } else { wo } {
            for dy in 0..3 {
                for dx in 0..3 {
                    slots.push(pixel(dy, x + dx));
                }
            }
            for y in 0..ho {
                slots.push(if y > 0 { Slot::Write { tag: tag(x, y - 1) } } else { Slot::Compute });
                for dx in 0..3 {
                    slots.push(if y + 3 < job.h { pixel(y + 3, x + dx) } else { Slot::Compute });
                }
            }
            slots.push(Slot::Write { tag: tag(x, ho - 1) });
        }
    }
    slots
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DweTiming {
    pub cycles: u64,
    pub macs: u64,
    pub macs_per_cycle: f64,
}

/// Uncontended timing; depends only on the shape, not on where tensors live.
pub fn dwe_cycle_model(job: &DweJob) -> Result<DweTiming> {
    if job.c == 0 {
        return Err(SimError::JobRejected("depthwise job has no channels".into()));
    }
    let slots = schedule(job, 9);
    let cycles = slots.len() as u64;
    let macs = job.macs();
    Ok(DweTiming { cycles, macs, macs_per_cycle: if cycles == 0 { 0.0 } else { macs as f64 / cycles as f64 } })
}

/// Reference result written straight into memory.
pub fn dwe_functional(job: &DweJob, mem: &mut Tcdm) -> Result<()> {
    job.validate(mem.config())?;
    let rb = |mem: &Tcdm, a: u32| -> Result<i32> { Ok(mem.read_bytes(a, 1)?[0] as i8 as i32) };
    for y in 0..job.out_h() {
        for x in 0..job.out_w() {
            for ch in 0..job.c {
                let mut acc = 0i32;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let a = rb(mem, job.in_addr(y + dy, x + dx, ch))?;
                        let w = rb(mem, job.w_base + ch * TAPS as u32 + dy * 3 + dx)?;
                        acc = acc.wrapping_add(a * w);
                    }
                }
                mem.write_bytes(job.out_addr(y, x, ch), &[job.requant.apply(acc) as u8])?;
            }
        }
    }
    Ok(())
}
