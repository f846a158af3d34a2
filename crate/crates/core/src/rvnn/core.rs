//! Cycle-stepped in-order core.
//!
//! Each cycle the owner calls [`Core::poll`], arbitrates the returned memory
//! operation, then calls [`Core::commit`] with the outcome.

use std::sync::Arc;

use crate::error::{fault, SimError};
use crate::numerics::{LaneFormat, Precision};

use super::program::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoreConfig {
    pub load_use_penalty: u32,
    pub branch_penalty: u32,
    pub barrier_overhead: u32,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self { load_use_penalty: 1, branch_penalty: 1, barrier_overhead: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FmtCsr {
    pub act: LaneFormat,
    pub wgt: LaneFormat,
    pub mpc_auto: bool,
    /// Dot products issued before the subgroup advances.
    pub mpc_stride: u32,
}

impl Default for FmtCsr {
    fn default() -> Self {
        Self {
            act: LaneFormat::unsigned(Precision::B8),
            wgt: LaneFormat::signed(Precision::B8),
            mpc_auto: true,
            mpc_stride: 1,
        }
    }
}

impl FmtCsr {
    pub fn subgroups(&self) -> u32 {
        self.act.bits() / self.wgt.bits()
    }
}

/// A core's single memory access for this cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemOp {
    pub addr: u32,
    pub width: Width,
    pub store: Option<u32>,
}

impl MemOp {
    pub fn word_addr(&self) -> u32 {
        self.addr & !3
    }

    /// Word-positioned write data and byte enables.
    pub fn word_write(&self) -> Option<(u32, u8)> {
        let sh = 8 * (self.addr & 3);
        self.store.map(|v| match self.width {
            Width::W => (v, 0xF),
            Width::H => ((v & 0xFFFF) << sh, 0b11 << (self.addr & 3)),
            Width::B => ((v & 0xFF) << sh, 1 << (self.addr & 3)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemOutcome {
    /// Access served; carries the read word (ignored for stores).
    Granted(u32),
    Denied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoreStatus {
    Running,
    Barrier,
    WaitEvent(u32),
    Done,
    Faulted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CoreStats {
    pub cycles: u64,
    pub busy: u64,
    pub stall_mem: u64,
    pub stall_load_use: u64,
    pub stall_branch: u64,
    pub idle: u64,
    pub instrs: u64,
    pub dotp: u64,
    pub mac_loads: u64,
    pub loads: u64,
    pub stores: u64,
    pub unpacks: u64,
    pub other: u64,
}

impl CoreStats {
    pub fn stalls(&self) -> u64 {
        self.stall_mem + self.stall_load_use + self.stall_branch
    }

    /// Fraction of cycles in which the dot-product unit produced a result.
    pub fn dotp_utilization(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.dotp as f64 / self.cycles as f64
        }
    }

    pub fn merge(&mut self, o: &CoreStats) {
        self.cycles += o.cycles;
        self.busy += o.busy;
        self.stall_mem += o.stall_mem;
        self.stall_load_use += o.stall_load_use;
        self.stall_branch += o.stall_branch;
        self.idle += o.idle;
        self.instrs += o.instrs;
        self.dotp += o.dotp;
        self.mac_loads += o.mac_loads;
        self.loads += o.loads;
        self.stores += o.stores;
        self.unpacks += o.unpacks;
        self.other += o.other;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Idle,
    Busy,
    Penalty,
    LoadUse,
    Exec(usize),
    Mem(usize, MemOp),
}

#[derive(Debug, Clone, Copy)]
struct LoopFrame {
    begin: usize,
    remaining: u32,
}

#[derive(Debug, Clone)]
pub struct Core {
    pub id: usize,
    pub gp: [u32; 32],
    pub nn: [u32; NN_REGS],
    pub fmt: FmtCsr,
    pub mpc_subgroup: u32,
    mpc_count: u32,
    program: Arc<Program>,
    pc: usize,
    loops: Vec<LoopFrame>,
    busy_left: u32,
    penalty_left: u32,
    last_load: Option<Src>,
    action: Action,
    status: CoreStatus,
    fault: Option<SimError>,
    pub stats: CoreStats,
    cfg: CoreConfig,
}

impl Core {
    pub fn new(id: usize, program: Arc<Program>, cfg: CoreConfig) -> Self {
        Self {
            id,
            gp: [0; 32],
            nn: [0; NN_REGS],
            fmt: FmtCsr::default(),
            mpc_subgroup: 0,
            mpc_count: 0,
            program,
            pc: 0,
            loops: Vec::new(),
            busy_left: 0,
            penalty_left: 0,
            last_load: None,
            action: Action::Idle,
            status: CoreStatus::Running,
            fault: None,
            stats: CoreStats::default(),
            cfg,
        }
    }

    pub fn status(&self) -> CoreStatus {
        self.status
    }

    pub fn take_fault(&mut self) -> Option<SimError> {
        self.fault.take()
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    /// Leave a barrier; the synchronisation overhead is spent as busy cycles.
    pub fn release_barrier(&mut self) {
        if self.status == CoreStatus::Barrier {
            self.status = CoreStatus::Running;
            self.busy_left = self.cfg.barrier_overhead;
        }
    }

    pub fn wake(&mut self) {
        if let CoreStatus::WaitEvent(_) = self.status {
            self.status = CoreStatus::Running;
        }
    }

    fn fail(&mut self, e: SimError) {
        self.fault = Some(e);
        self.status = CoreStatus::Faulted;
    }

    fn settle_hw_loops(&mut self) {
        let prog = self.program.clone();
        while self.pc < prog.len() && prog.instrs()[self.pc] == Instr::LoopEnd {
            let begin = prog.partner(self.pc);
            if !matches!(prog.instrs()[begin], Instr::LoopBegin { kind: LoopKind::Hw, .. }) {
                return;
            }
            let top = self.loops.last_mut().expect("loop stack underflow");
            top.remaining -= 1;
            if top.remaining > 0 {
                self.pc = top.begin + 1;
            } else {
                self.loops.pop();
                self.pc += 1;
            }
        }
    }

    /// Decide this cycle's action; returns the memory access to arbitrate, if any.
    pub fn poll(&mut self) -> Option<MemOp> {
        self.action = Action::Idle;
        if self.status != CoreStatus::Running {
            return None;
        }
        if self.busy_left > 0 {
            self.busy_left -= 1;
            self.action = Action::Busy;
            return None;
        }
        if self.penalty_left > 0 {
            self.penalty_left -= 1;
            self.action = Action::Penalty;
            return None;
        }
        self.settle_hw_loops();
        let Some(&ins) = self.program.instrs().get(self.pc) else {
            self.status = CoreStatus::Done;
            return None;
        };
        if let Some(r) = self.last_load.take() {
            if self.cfg.load_use_penalty > 0 && ins.reads().contains(&r) {
                self.penalty_left = self.cfg.load_use_penalty - 1;
                self.action = Action::LoadUse;
                return None;
            }
        }
        if !ins.is_memory() {
            self.action = Action::Exec(self.pc);
            return None;
        }
        let op = match ins {
            Instr::MacLoad { load: Some(l), .. } | Instr::LoadNn(l) => {
                MemOp { addr: self.gp[l.base as usize], width: Width::W, store: None }
            }
            Instr::Load { base, offset, post_inc, width, .. } => {
                let b = self.gp[base as usize];
                MemOp { addr: if post_inc { b } else { b.wrapping_add(offset as u32) }, width, store: None }
            }
            Instr::Store { rs, base, offset, post_inc, width } => {
                let b = self.gp[base as usize];
                MemOp {
                    addr: if post_inc { b } else { b.wrapping_add(offset as u32) },
                    width,
                    store: Some(self.gp[rs as usize]),
                }
            }
            _ => unreachable!(),
        };
        if op.addr % op.width.bytes() != 0 {
            self.fail(fault(op.addr, format!("misaligned access by core {}", self.id)));
            return None;
        }
        self.action = Action::Mem(self.pc, op);
        Some(op)
    }

    /// Finish the cycle started by [`Core::poll`].
    pub fn commit(&mut self, outcome: Option<MemOutcome>) {
        self.stats.cycles += 1;
        match self.action {
            Action::Idle => self.stats.idle += 1,
            Action::Busy => self.stats.busy += 1,
            Action::Penalty => self.stats.stall_branch += 1,
            Action::LoadUse => self.stats.stall_load_use += 1,
            Action::Exec(pc) => {
                self.stats.busy += 1;
                self.execute(pc, None);
            }
            Action::Mem(pc, op) => match outcome {
                Some(MemOutcome::Granted(word)) => {
                    self.stats.busy += 1;
                    self.execute(pc, Some((op, word)));
                }
                _ => self.stats.stall_mem += 1,
            },
        }
        self.action = Action::Idle;
    }

    fn src(&self, s: Src) -> u32 {
        match s {
            Src::Gp(r) => self.gp[r as usize],
            Src::Nn(n) => self.nn[n as usize],
        }
    }

    fn set_gp(&mut self, r: Reg, v: u32) {
        if r != 0 {
            self.gp[r as usize] = v;
        }
    }

    /// Dot product of the activation word with the current weight subgroup.
    pub fn dotp(&self, act: u32, wgt: u32) -> i32 {
        let (fa, fw) = (self.fmt.act, self.fmt.wgt);
        let lanes = fa.lanes() as u32;
        let (pa, pw) = (fa.bits(), fw.bits());
        let mut acc = 0i32;
        for i in 0..lanes {
            let a = fa.extend(act.checked_shr(i * pa).unwrap_or(0));
            let w = fw.extend(wgt.checked_shr((self.mpc_subgroup * lanes + i) * pw).unwrap_or(0));
            acc = acc.wrapping_add(a.wrapping_mul(w));
        }
        acc
    }

    fn advance_mpc(&mut self) {
        if !self.fmt.mpc_auto {
            return;
        }
        self.mpc_count += 1;
        if self.mpc_count >= self.fmt.mpc_stride {
            self.mpc_count = 0;
            self.mpc_subgroup = (self.mpc_subgroup + 1) % self.fmt.subgroups();
        }
    }

    fn execute(&mut self, pc: usize, mem: Option<(MemOp, u32)>) {
        let ins = self.program.instrs()[pc];
        self.stats.instrs += 1;
        self.last_load = None;
        let mut next = pc + 1;
        match ins {
            Instr::Sdotp { acc, act, wgt } | Instr::MacLoad { acc, act, wgt, .. } => {
                let d = self.dotp(self.src(act), self.src(wgt));
                self.set_gp(acc, self.gp[acc as usize].wrapping_add(d as u32));
                self.advance_mpc();
                self.stats.dotp += 1;
                if let Instr::MacLoad { load: Some(l), .. } = ins {
                    let (_, word) = mem.expect("fused load without data");
                    self.nn[l.dest as usize] = word;
                    self.set_gp(l.base, self.gp[l.base as usize].wrapping_add(l.inc as u32));
                    self.last_load = Some(Src::Nn(l.dest));
                    self.stats.mac_loads += 1;
                }
            }
            Instr::LoadNn(l) => {
                let (_, word) = mem.expect("load without data");
                self.nn[l.dest as usize] = word;
                self.set_gp(l.base, self.gp[l.base as usize].wrapping_add(l.inc as u32));
                self.last_load = Some(Src::Nn(l.dest));
                self.stats.loads += 1;
            }
            Instr::Load { rd, base, offset, post_inc, width, signed } => {
                let (op, word) = mem.expect("load without data");
                let raw = word >> (8 * (op.addr & 3));
                let v = match (width, signed) {
                    (Width::W, _) => raw,
                    (Width::H, true) => raw as u16 as i16 as i32 as u32,
                    (Width::H, false) => raw & 0xFFFF,
                    (Width::B, true) => raw as u8 as i8 as i32 as u32,
                    (Width::B, false) => raw & 0xFF,
                };
                if post_inc {
                    self.set_gp(base, self.gp[base as usize].wrapping_add(offset as u32));
                }
                self.set_gp(rd, v);
                self.last_load = Some(Src::Gp(rd));
                self.stats.loads += 1;
            }
            Instr::Store { base, offset, post_inc, .. } => {
                if post_inc {
                    self.set_gp(base, self.gp[base as usize].wrapping_add(offset as u32));
                }
                self.stats.stores += 1;
            }
            Instr::CsrFmt { act, wgt, mpc_auto, mpc_stride } => {
                if act.bits() < wgt.bits() {
                    self.fail(SimError::Config(format!(
                        "core {}: activation format {act} narrower than weight format {wgt}",
                        self.id
                    )));
                    return;
                }
                self.fmt = FmtCsr { act, wgt, mpc_auto, mpc_stride: mpc_stride.max(1) };
                self.mpc_subgroup = 0;
                self.mpc_count = 0;
                self.stats.other += 1;
            }
            Instr::Alu { op, rd, rs1, rhs } => {
                let b = match rhs {
                    Operand::Reg(r) => self.gp[r as usize],
                    Operand::Imm(i) => i as u32,
                };
                self.set_gp(rd, op.apply(self.gp[rs1 as usize], b));
                self.stats.other += 1;
            }
            Instr::Li { rd, imm } => {
                self.set_gp(rd, imm as u32);
                self.stats.other += 1;
            }
            Instr::Clip { rd, rs, bits } => {
                let v = self.gp[rs as usize] as i32 as i64;
                let hi = (1i64 << (bits - 1)) - 1;
                self.set_gp(rd, v.clamp(-hi - 1, hi) as i32 as u32);
                self.stats.other += 1;
            }
            Instr::Unpack { rd, rs, part, from, cost } => {
                let w = self.gp[rs as usize];
                let mut out = 0u32;
                for i in 0..4u32 {
                    let lane = part as u32 * 4 + i;
                    let v = from.extend(w >> (lane * from.bits()));
                    out |= (v as u32 & 0xFF) << (8 * i);
                }
                self.set_gp(rd, out);
                self.busy_left = cost.saturating_sub(1);
                self.stats.unpacks += 1;
            }
            Instr::LoopBegin { count, .. } => {
                if count == 0 {
                    next = self.program.partner(pc) + 1;
                } else {
                    self.loops.push(LoopFrame { begin: pc, remaining: count });
                }
                self.stats.other += 1;
            }
            Instr::LoopEnd => {
                // software latch: counter update + branch
                let top = self.loops.last_mut().expect("loop stack underflow");
                top.remaining -= 1;
                self.busy_left = 1;
                if top.remaining > 0 {
                    next = top.begin + 1;
                    self.penalty_left = self.cfg.branch_penalty;
                } else {
                    self.loops.pop();
                }
                self.stats.other += 1;
            }
            Instr::Barrier => {
                self.status = CoreStatus::Barrier;
                self.stats.other += 1;
            }
            Instr::WaitEvent { mask } => {
                self.status = CoreStatus::WaitEvent(mask);
                self.stats.other += 1;
            }
            Instr::Nop => self.stats.other += 1,
        }
        self.pc = next;
    }
}
