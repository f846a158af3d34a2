//! Memory-mapped control registers of the cluster peripherals.
//!
//! Word accesses only. Register blocks are relative to [`CTRL_BASE`]:
//!
//! | offset | block |
//! |--------|-------|
//! | 0x000  | interconnect: priority (0 shallow, 1 log), max stall, event flags (write 1 to clear) |
//! | 0x100  | TPE: x, w, z, m, n, k, x stride, w stride, z stride, START, STATUS |
//! | 0x200  | DWE: in, w, out, h, w, c, requant, START, STATUS |
//! | 0x300  | DataMover: src, dst, d, rows, cols, START, STATUS |
//! | 0x400  | DMA: src, dst, len, count, src stride, dst stride, dir, ENQUEUE, STATUS |
//!
//! STATUS reads 1 while the engine is busy (for the DMA: jobs outstanding).

use crate::datamover::DmJob;
use crate::dma::{DmaDir, DmaJob};
use crate::dwe::{DweJob, Requant};
use crate::error::{fault, Result};
use crate::hci::Branch;
use crate::tpe::TpeJob;

pub const CTRL_BASE: u32 = 0x0010_0000;
pub const CTRL_SIZE: u32 = 0x1000;

pub const HCI_PRIORITY: u32 = 0x000;
pub const HCI_MAX_STALL: u32 = 0x004;
pub const EVENTS: u32 = 0x008;

pub const TPE_BASE: u32 = 0x100;
pub const DWE_BASE: u32 = 0x200;
pub const DM_BASE: u32 = 0x300;
pub const DMA_BASE: u32 = 0x400;

/// Argument registers per block; START sits right after them, STATUS after START.
pub const TPE_ARGS: u32 = 9;
pub const DWE_ARGS: u32 = 7;
pub const DM_ARGS: u32 = 5;
pub const DMA_ARGS: u32 = 7;

pub const EV_TPE: u32 = 1 << 0;
pub const EV_DWE: u32 = 1 << 1;
pub const EV_DM: u32 = 1 << 2;
pub const EV_DMA: u32 = 1 << 3;

pub fn is_ctrl(addr: u32) -> bool {
    (CTRL_BASE..CTRL_BASE + CTRL_SIZE).contains(&addr)
}

/// Register address of argument `i` in block `base`.
pub fn reg(base: u32, i: u32) -> u32 {
    CTRL_BASE + base + 4 * i
}

pub fn start_reg(base: u32, args: u32) -> u32 {
    reg(base, args)
}

pub fn status_reg(base: u32, args: u32) -> u32 {
    reg(base, args + 1)
}

/// Side effect requested by a register write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CtrlCommand {
    StartTpe(TpeJob),
    StartDwe(DweJob),
    StartDm(DmJob),
    EnqueueDma(DmaJob),
    SetArbiter { priority: Branch, max_stall: u32 },
    ClearEvents(u32),
}

/// Busy view supplied by the cluster for STATUS reads.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitStatus {
    pub tpe_busy: bool,
    pub dwe_busy: bool,
    pub dm_busy: bool,
    pub dma_outstanding: u32,
    pub events: u32,
}

#[derive(Debug, Clone, Default)]
pub struct CtrlRegs {
    pub priority: u32,
    pub max_stall: u32,
    tpe: [u32; TPE_ARGS as usize],
    dwe: [u32; DWE_ARGS as usize],
    dm: [u32; DM_ARGS as usize],
    dma: [u32; DMA_ARGS as usize],
}

fn block(off: u32, base: u32, args: u32) -> Option<u32> {
    (base..base + 4 * (args + 2)).contains(&off).then(|| (off - base) / 4)
}

impl CtrlRegs {
    pub fn new(priority: Branch, max_stall: u32) -> Self {
        Self { priority: priority.code(), max_stall, ..Default::default() }
    }

    pub fn read(&self, addr: u32, st: &UnitStatus) -> Result<u32> {
        let off = self.offset(addr)?;
        let pick = |regs: &[u32], i: u32, busy: u32| match i as usize {
            n if n < regs.len() => regs[n],
            n if n == regs.len() => 0,
            _ => busy,
        };
        Ok(match off {
            HCI_PRIORITY => self.priority,
            HCI_MAX_STALL => self.max_stall,
            EVENTS => st.events,
            _ => {
                if let Some(i) = block(off, TPE_BASE, TPE_ARGS) {
                    pick(&self.tpe, i, st.tpe_busy as u32)
                } else if let Some(i) = block(off, DWE_BASE, DWE_ARGS) {
                    pick(&self.dwe, i, st.dwe_busy as u32)
                } else if let Some(i) = block(off, DM_BASE, DM_ARGS) {
                    pick(&self.dm, i, st.dm_busy as u32)
                } else if let Some(i) = block(off, DMA_BASE, DMA_ARGS) {
                    pick(&self.dma, i, st.dma_outstanding)
                } else {
                    return Err(fault(addr, "unmapped control register"));
                }
            }
        })
    }

    fn offset(&self, addr: u32) -> Result<u32> {
        if !is_ctrl(addr) || !addr.is_multiple_of(4) {
            return Err(fault(addr, "bad control register access"));
        }
        Ok(addr - CTRL_BASE)
    }

    pub fn write(&mut self, addr: u32, v: u32) -> Result<Option<CtrlCommand>> {
        let off = self.offset(addr)?;
        let arb = |s: &Self| -> Result<CtrlCommand> {
            Ok(CtrlCommand::SetArbiter { priority: Branch::from_code(s.priority)?, max_stall: s.max_stall })
        };
        match off {
            HCI_PRIORITY => {
                Branch::from_code(v)?;
                self.priority = v;
                return arb(self).map(Some);
            }
            HCI_MAX_STALL => {
                self.max_stall = v;
                return arb(self).map(Some);
            }
            EVENTS => return Ok(Some(CtrlCommand::ClearEvents(v))),
            _ => {}
        }
        let ro = || fault(addr, "read-only status register");
        if let Some(i) = block(off, TPE_BASE, TPE_ARGS) {
            return match i {
                i if i < TPE_ARGS => {
                    self.tpe[i as usize] = v;
                    Ok(None)
                }
                i if i == TPE_ARGS => Ok(Some(CtrlCommand::StartTpe(self.tpe_job()))),
                _ => Err(ro()),
            };
        }
        if let Some(i) = block(off, DWE_BASE, DWE_ARGS) {
            return match i {
                i if i < DWE_ARGS => {
                    self.dwe[i as usize] = v;
                    Ok(None)
                }
                i if i == DWE_ARGS => Ok(Some(CtrlCommand::StartDwe(self.dwe_job()))),
                _ => Err(ro()),
            };
        }
        if let Some(i) = block(off, DM_BASE, DM_ARGS) {
            return match i {
                i if i < DM_ARGS => {
                    self.dm[i as usize] = v;
                    Ok(None)
                }
                i if i == DM_ARGS => Ok(Some(CtrlCommand::StartDm(self.dm_job()))),
                _ => Err(ro()),
            };
        }
        if let Some(i) = block(off, DMA_BASE, DMA_ARGS) {
            return match i {
                i if i < DMA_ARGS => {
                    self.dma[i as usize] = v;
                    Ok(None)
                }
                i if i == DMA_ARGS => Ok(Some(CtrlCommand::EnqueueDma(self.dma_job()?))),
                _ => Err(ro()),
            };
        }
        Err(fault(addr, "unmapped control register"))
    }

    fn tpe_job(&self) -> TpeJob {
        let r = &self.tpe;
        TpeJob { x_base: r[0], w_base: r[1], z_base: r[2], m: r[3], n: r[4], k: r[5], x_stride: r[6], w_stride: r[7], z_stride: r[8] }
    }

    fn dwe_job(&self) -> DweJob {
        let r = &self.dwe;
        DweJob { in_base: r[0], w_base: r[1], out_base: r[2], h: r[3], w: r[4], c: r[5], requant: Requant::from_word(r[6]) }
    }

    fn dm_job(&self) -> DmJob {
        let r = &self.dm;
        DmJob { src_base: r[0], dst_base: r[1], d: r[2], rows: r[3], cols: r[4] }
    }

    fn dma_job(&self) -> Result<DmaJob> {
        let r = &self.dma;
        Ok(DmaJob {
            src: r[0],
            dst: r[1],
            inner_len: r[2],
            outer_count: r[3],
            src_stride: r[4],
            dst_stride: r[5],
            dir: DmaDir::from_code(r[6])?,
        })
    }
}

/// `(register address, value)` writes that program and start a TPE job.
pub fn tpe_writes(j: &TpeJob) -> Vec<(u32, u32)> {
    let v = [j.x_base, j.w_base, j.z_base, j.m, j.n, j.k, j.x_stride, j.w_stride, j.z_stride];
    let mut out: Vec<_> = v.iter().enumerate().map(|(i, &x)| (reg(TPE_BASE, i as u32), x)).collect();
    out.push((start_reg(TPE_BASE, TPE_ARGS), 1));
    out
}

pub fn dwe_writes(j: &DweJob) -> Vec<(u32, u32)> {
    let v = [j.in_base, j.w_base, j.out_base, j.h, j.w, j.c, j.requant.to_word()];
    let mut out: Vec<_> = v.iter().enumerate().map(|(i, &x)| (reg(DWE_BASE, i as u32), x)).collect();
    out.push((start_reg(DWE_BASE, DWE_ARGS), 1));
    out
}

pub fn dm_writes(j: &DmJob) -> Vec<(u32, u32)> {
    let v = [j.src_base, j.dst_base, j.d, j.rows, j.cols];
    let mut out: Vec<_> = v.iter().enumerate().map(|(i, &x)| (reg(DM_BASE, i as u32), x)).collect();
    out.push((start_reg(DM_BASE, DM_ARGS), 1));
    out
}

pub fn dma_writes(j: &DmaJob) -> Vec<(u32, u32)> {
    let v = [j.src, j.dst, j.inner_len, j.outer_count, j.src_stride, j.dst_stride, j.dir.code()];
    let mut out: Vec<_> = v.iter().enumerate().map(|(i, &x)| (reg(DMA_BASE, i as u32), x)).collect();
    out.push((start_reg(DMA_BASE, DMA_ARGS), 1));
    out
}
