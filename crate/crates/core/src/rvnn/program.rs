//! Modeled instruction stream for the RVNN core.

use std::fmt;

use crate::error::{Result, SimError};
use crate::numerics::LaneFormat;

/// General-purpose register index, `x0`..`x31`.
pub type Reg = u8;

/// NN register file slots: `w0..w3` are 0..=3, `a0`, `a1` are 4 and 5.
pub const W0: u8 = 0;
pub const A0: u8 = 4;
pub const A1: u8 = 5;
pub const NN_REGS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Src {
    Gp(Reg),
    Nn(u8),
}

impl Src {
    pub fn w(i: u8) -> Src {
        Src::Nn(W0 + i)
    }

    pub fn a(i: u8) -> Src {
        Src::Nn(A0 + i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Width {
    B,
    H,
    W,
}

impl Width {
    pub fn bytes(self) -> u32 {
        match self {
            Width::B => 1,
            Width::H => 2,
            Width::W => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Sll,
    Srl,
    Sra,
    Max,
    Min,
}

impl AluOp {
    pub const ALL: [AluOp; 11] = [
        AluOp::Add,
        AluOp::Sub,
        AluOp::Mul,
        AluOp::And,
        AluOp::Or,
        AluOp::Xor,
        AluOp::Sll,
        AluOp::Srl,
        AluOp::Sra,
        AluOp::Max,
        AluOp::Min,
    ];

    pub fn apply(self, a: u32, b: u32) -> u32 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Mul => a.wrapping_mul(b),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Sll => a << (b & 31),
            AluOp::Srl => a >> (b & 31),
            AluOp::Sra => ((a as i32) >> (b & 31)) as u32,
            AluOp::Max => (a as i32).max(b as i32) as u32,
            AluOp::Min => (a as i32).min(b as i32) as u32,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Mul => "mul",
            AluOp::And => "and",
            AluOp::Or => "or",
            AluOp::Xor => "xor",
            AluOp::Sll => "sll",
            AluOp::Srl => "srl",
            AluOp::Sra => "sra",
            AluOp::Max => "max",
            AluOp::Min => "min",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Reg),
    Imm(i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoopKind {
    /// Zero-overhead hardware loop; one setup cycle.
    Hw,
    /// Counter + branch: two latch instructions per iteration plus the taken-branch penalty.
    Sw,
}

/// Load into the NN register file with base-register post-increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NnLoad {
    pub dest: u8,
    pub base: Reg,
    pub inc: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instr {
    Sdotp { acc: Reg, act: Src, wgt: Src },
    /// Fused MAC-load; `load: None` is the dotp-only variant.
    MacLoad { acc: Reg, act: Src, wgt: Src, load: Option<NnLoad> },
    LoadNn(NnLoad),
    /// `post_inc`: address is `base` and `base += offset` afterwards; otherwise address is `base + offset`.
    Load { rd: Reg, base: Reg, offset: i32, post_inc: bool, width: Width, signed: bool },
    Store { rs: Reg, base: Reg, offset: i32, post_inc: bool, width: Width },
    CsrFmt { act: LaneFormat, wgt: LaneFormat, mpc_auto: bool, mpc_stride: u32 },
    Alu { op: AluOp, rd: Reg, rs1: Reg, rhs: Operand },
    Li { rd: Reg, imm: i32 },
    /// Saturate to a signed `bits`-wide range.
    Clip { rd: Reg, rs: Reg, bits: u8 },
    /// Expand lanes `[part*4, part*4+4)` of a sub-byte word into four 8-bit lanes.
    Unpack { rd: Reg, rs: Reg, part: u8, from: LaneFormat, cost: u32 },
    LoopBegin { count: u32, kind: LoopKind },
    LoopEnd,
    Barrier,
    WaitEvent { mask: u32 },
    Nop,
}

impl Instr {
    pub fn is_dotp(&self) -> bool {
        matches!(self, Instr::Sdotp { .. } | Instr::MacLoad { .. })
    }

    /// Registers read, as (is_nn, index) pairs.
    pub fn reads(&self) -> Vec<Src> {
        let mut v = Vec::new();
        match *self {
            Instr::Sdotp { acc, act, wgt } | Instr::MacLoad { acc, act, wgt, .. } => {
                v.extend([Src::Gp(acc), act, wgt]);
                if let Instr::MacLoad { load: Some(l), .. } = self {
                    v.push(Src::Gp(l.base));
                }
            }
            Instr::LoadNn(l) => v.push(Src::Gp(l.base)),
            Instr::Load { base, .. } => v.push(Src::Gp(base)),
            Instr::Store { rs, base, .. } => v.extend([Src::Gp(rs), Src::Gp(base)]),
            Instr::Alu { rs1, rhs, .. } => {
                v.push(Src::Gp(rs1));
                if let Operand::Reg(r) = rhs {
                    v.push(Src::Gp(r));
                }
            }
            Instr::Clip { rs, .. } | Instr::Unpack { rs, .. } => v.push(Src::Gp(rs)),
            _ => {}
        }
        v
    }

    /// Destination written by a memory load, if any.
    pub fn load_dest(&self) -> Option<Src> {
        match *self {
            Instr::MacLoad { load: Some(l), .. } | Instr::LoadNn(l) => Some(Src::Nn(l.dest)),
            Instr::Load { rd, .. } => Some(Src::Gp(rd)),
            _ => None,
        }
    }

    pub fn is_memory(&self) -> bool {
        matches!(
            self,
            Instr::MacLoad { load: Some(_), .. } | Instr::LoadNn(_) | Instr::Load { .. } | Instr::Store { .. }
        )
    }
}

/// A flat instruction list with matched loop markers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    instrs: Vec<Instr>,
    /// For each `LoopBegin`, the index of its `LoopEnd`, and vice versa.
    partner: Vec<usize>,
}

impl Program {
    pub fn new(instrs: Vec<Instr>) -> Result<Self> {
        let mut partner = vec![usize::MAX; instrs.len()];
        let mut stack = Vec::new();
        for (i, ins) in instrs.iter().enumerate() {
            match ins {
                Instr::LoopBegin { .. } => stack.push(i),
                Instr::LoopEnd => {
                    let b = stack
                        .pop()
                        .ok_or_else(|| SimError::Parse(format!("unmatched loop end at {i}")))?;
                    partner[b] = i;
                    partner[i] = b;
                }
                _ => {}
            }
        }
        if let Some(b) = stack.pop() {
            return Err(SimError::Parse(format!("loop at {b} is never closed")));
        }
        for ins in &instrs {
            check_regs(ins)?;
        }
        Ok(Self { instrs, partner })
    }

    pub fn instrs(&self) -> &[Instr] {
        &self.instrs
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn partner(&self, i: usize) -> usize {
        self.partner[i]
    }
}

fn check_regs(ins: &Instr) -> Result<()> {
    let bad = |what: &str| Err(SimError::Parse(format!("{what} out of range in {ins}")));
    for s in ins.reads() {
        match s {
            Src::Gp(r) if r >= 32 => return bad("register"),
            Src::Nn(n) if n as usize >= NN_REGS => return bad("NN register"),
            _ => {}
        }
    }
    if let Some(Src::Nn(n)) = ins.load_dest() {
        if n as usize >= NN_REGS {
            return bad("NN register");
        }
    }
    match *ins {
        Instr::Alu { rd, .. } | Instr::Li { rd, .. } | Instr::Clip { rd, .. } | Instr::Load { rd, .. } if rd >= 32 => {
            bad("register")
        }
        Instr::Clip { bits, .. } if !(1..=32).contains(&bits) => bad("clip width"),
        Instr::Unpack { rd, part, from, .. } => {
            if rd >= 32 {
                return bad("register");
            }
            if from.bits() >= 8 || part as usize >= from.lanes() / 4 {
                return bad("unpack part");
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Convenience builder for generated kernels.
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    instrs: Vec<Instr>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, i: Instr) -> &mut Self {
        self.instrs.push(i);
        self
    }

    pub fn extend(&mut self, it: impl IntoIterator<Item = Instr>) -> &mut Self {
        self.instrs.extend(it);
        self
    }

    pub fn repeat(&mut self, count: u32, kind: LoopKind, body: impl FnOnce(&mut Self)) -> &mut Self {
        self.instrs.push(Instr::LoopBegin { count, kind });
        body(self);
        self.instrs.push(Instr::LoopEnd);
        self
    }

    pub fn li(&mut self, rd: Reg, imm: i32) -> &mut Self {
        self.push(Instr::Li { rd, imm })
    }

    pub fn addi(&mut self, rd: Reg, rs1: Reg, imm: i32) -> &mut Self {
        self.push(Instr::Alu { op: AluOp::Add, rd, rs1, rhs: Operand::Imm(imm) })
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn build(self) -> Result<Program> {
        Program::new(self.instrs)
    }
}

fn src(s: Src) -> String {
    match s {
        Src::Gp(r) => format!("x{r}"),
        Src::Nn(n) if n < A0 => format!("w{n}"),
        Src::Nn(n) => format!("a{}", n - A0),
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mem = |base: Reg, offset: i32, post: bool| {
            if post {
                format!("(x{base})+{offset}")
            } else {
                format!("{offset}(x{base})")
            }
        };
        match *self {
            Instr::Sdotp { acc, act, wgt } => write!(f, "sdotp x{acc}, {}, {}", src(act), src(wgt)),
            Instr::MacLoad { acc, act, wgt, load: None } => write!(f, "ml x{acc}, {}, {}", src(act), src(wgt)),
            Instr::MacLoad { acc, act, wgt, load: Some(l) } => write!(
                f,
                "ml.ld x{acc}, {}, {}, {}, {}",
                src(act),
                src(wgt),
                src(Src::Nn(l.dest)),
                mem(l.base, l.inc, true)
            ),
            Instr::LoadNn(l) => write!(f, "lnn {}, {}", src(Src::Nn(l.dest)), mem(l.base, l.inc, true)),
            Instr::Load { rd, base, offset, post_inc, width, signed } => {
                let m = match (width, signed) {
                    (Width::W, _) => "lw",
                    (Width::H, true) => "lh",
                    (Width::H, false) => "lhu",
                    (Width::B, true) => "lb",
                    (Width::B, false) => "lbu",
                };
                write!(f, "{m} x{rd}, {}", mem(base, offset, post_inc))
            }
            Instr::Store { rs, base, offset, post_inc, width } => {
                let m = match width {
                    Width::W => "sw",
                    Width::H => "sh",
                    Width::B => "sb",
                };
                write!(f, "{m} x{rs}, {}", mem(base, offset, post_inc))
            }
            Instr::CsrFmt { act, wgt, mpc_auto, mpc_stride } => {
                write!(f, "csrfmt {act}, {wgt}, {}, {mpc_stride}", if mpc_auto { "auto" } else { "manual" })
            }
            Instr::Alu { op, rd, rs1, rhs: Operand::Reg(r) } => write!(f, "{} x{rd}, x{rs1}, x{r}", op.mnemonic()),
            Instr::Alu { op, rd, rs1, rhs: Operand::Imm(i) } => write!(f, "{}i x{rd}, x{rs1}, {i}", op.mnemonic()),
            Instr::Li { rd, imm } => write!(f, "li x{rd}, {imm}"),
            Instr::Clip { rd, rs, bits } => write!(f, "clip x{rd}, x{rs}, {bits}"),
            Instr::Unpack { rd, rs, part, from, cost } => write!(f, "unpack x{rd}, x{rs}, {part}, {from}, {cost}"),
            Instr::LoopBegin { count, kind: LoopKind::Hw } => write!(f, "loop {count} {{"),
            Instr::LoopBegin { count, kind: LoopKind::Sw } => write!(f, "sloop {count} {{"),
            Instr::LoopEnd => write!(f, "}}"),
            Instr::Barrier => write!(f, "barrier"),
            Instr::WaitEvent { mask } => write!(f, "wait {mask:#x}"),
            Instr::Nop => write!(f, "nop"),
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut depth = 0usize;
        for ins in &self.instrs {
            if matches!(ins, Instr::LoopEnd) {
                depth = depth.saturating_sub(1);
            }
            writeln!(f, "{:indent$}{ins}", "", indent = 4 * depth)?;
            if matches!(ins, Instr::LoopBegin { .. }) {
                depth += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loop_partners() {
        let p = Program::new(vec![
            Instr::LoopBegin { count: 2, kind: LoopKind::Hw },
            Instr::Nop,
            Instr::LoopBegin { count: 3, kind: LoopKind::Sw },
            Instr::LoopEnd,
            Instr::LoopEnd,
        ])
        .unwrap();
        assert_eq!((p.partner(0), p.partner(4), p.partner(2), p.partner(3)), (4, 0, 3, 2));
    }

    #[test]
    fn unbalanced_loops_rejected() {
        assert!(Program::new(vec![Instr::LoopEnd]).is_err());
        assert!(Program::new(vec![Instr::LoopBegin { count: 1, kind: LoopKind::Hw }]).is_err());
    }

    #[test]
    fn bad_registers_rejected() {
        assert!(Program::new(vec![Instr::Li { rd: 32, imm: 0 }]).is_err());
        assert!(Program::new(vec![Instr::Sdotp { acc: 1, act: Src::Nn(6), wgt: Src::w(0) }]).is_err());
    }

    #[test]
    fn alu_semantics() {
        assert_eq!(AluOp::Sra.apply(0x8000_0000, 4), 0xF800_0000);
        assert_eq!(AluOp::Srl.apply(0x8000_0000, 4), 0x0800_0000);
        assert_eq!(AluOp::Max.apply(-3i32 as u32, 2), 2);
        assert_eq!(AluOp::Min.apply(-3i32 as u32, 2), -3i32 as u32);
    }
}
