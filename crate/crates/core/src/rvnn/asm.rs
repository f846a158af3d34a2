//! Line-oriented assembly for [`Program`].
//!
//! ```text
//! # comment                      ; also a comment
//! csrfmt u8, i4, auto, 16        # act format, weight format, mpc mode, mpc stride
//! li x5, 4096
//! loop 24 {                      # hardware loop (sloop = software loop)
//!     ml.ld x10, a0, w0, w1, (x5)+4
//!     sdotp x11, a1, w1
//! }
//! lw x3, 8(x4)                   # base + offset
//! lbu x3, (x4)+1                 # post-increment
//! ```
//!
//! NN registers are `w0..w3`, `a0`, `a1`; general-purpose registers are `x0..x31`.

use crate::error::{Result, SimError};
use crate::numerics::LaneFormat;

use super::program::*;

fn err(line: usize, msg: impl std::fmt::Display) -> SimError {
    SimError::Parse(format!("line {line}: {msg}"))
}

fn gp(tok: &str, line: usize) -> Result<Reg> {
    tok.strip_prefix('x')
        .and_then(|n| n.parse::<u8>().ok())
        .filter(|&n| n < 32)
        .ok_or_else(|| err(line, format!("expected x0..x31, got `{tok}`")))
}

fn nn(tok: &str, line: usize) -> Result<u8> {
    let bad = || err(line, format!("expected w0..w3/a0/a1, got `{tok}`"));
    let (kind, idx) = tok.split_at(1.min(tok.len()));
    let i: u8 = idx.parse().map_err(|_| bad())?;
    match kind {
        "w" if i < 4 => Ok(W0 + i),
        "a" if i < 2 => Ok(A0 + i),
        _ => Err(bad()),
    }
}

fn operand(tok: &str, line: usize) -> Result<Src> {
    if tok.starts_with('x') {
        Ok(Src::Gp(gp(tok, line)?))
    } else {
        Ok(Src::Nn(nn(tok, line)?))
    }
}

fn imm(tok: &str, line: usize) -> Result<i32> {
    let t = tok.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let v = if let Some(h) = body.strip_prefix("0x") {
        i64::from_str_radix(h, 16)
    } else {
        body.parse::<i64>()
    }
    .map_err(|_| err(line, format!("bad immediate `{tok}`")))?;
    let v = if neg { -v } else { v };
    i32::try_from(v)
        .or_else(|_| u32::try_from(v).map(|u| u as i32))
        .map_err(|_| err(line, format!("immediate `{tok}` out of range")))
}

/// `off(xB)` or `(xB)+inc`; returns (base, offset, post_inc).
fn mem(tok: &str, line: usize) -> Result<(Reg, i32, bool)> {
    let bad = || err(line, format!("bad memory operand `{tok}`"));
    if let Some(rest) = tok.strip_prefix('(') {
        let (reg, tail) = rest.split_once(')').ok_or_else(bad)?;
        let inc = if tail.is_empty() { 0 } else { imm(tail, line)? };
        Ok((gp(reg, line)?, inc, true))
    } else {
        let (off, rest) = tok.split_once('(').ok_or_else(bad)?;
        let reg = rest.strip_suffix(')').ok_or_else(bad)?;
        let off = if off.is_empty() { 0 } else { imm(off, line)? };
        Ok((gp(reg, line)?, off, false))
    }
}

fn fmt_tok(tok: &str, line: usize) -> Result<LaneFormat> {
    tok.parse().map_err(|e| err(line, e))
}

fn want(args: &[&str], n: usize, line: usize, op: &str) -> Result<()> {
    if args.len() != n {
        return Err(err(line, format!("`{op}` takes {n} operands, got {}", args.len())));
    }
    Ok(())
}

pub fn parse_program(text: &str) -> Result<Program> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let code = raw.split(['#', ';']).next().unwrap_or("").trim();
        if code.is_empty() {
            continue;
        }
        out.push(parse_line(code, line)?);
    }
    Program::new(out)
}

fn parse_line(code: &str, line: usize) -> Result<Instr> {
    if code == "}" {
        return Ok(Instr::LoopEnd);
    }
    let (op, rest) = code.split_once(char::is_whitespace).unwrap_or((code, ""));
    let args: Vec<&str> = rest.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let load = |width, signed| -> Result<Instr> {
        want(&args, 2, line, op)?;
        let (base, offset, post_inc) = mem(args[1], line)?;
        Ok(Instr::Load { rd: gp(args[0], line)?, base, offset, post_inc, width, signed })
    };
    let store = |width| -> Result<Instr> {
        want(&args, 2, line, op)?;
        let (base, offset, post_inc) = mem(args[1], line)?;
        Ok(Instr::Store { rs: gp(args[0], line)?, base, offset, post_inc, width })
    };
    let nn_load = |dst: &str, m: &str| -> Result<NnLoad> {
        let (base, inc, post) = mem(m, line)?;
        if !post {
            return Err(err(line, "NN loads use post-increment addressing `(xB)+inc`"));
        }
        Ok(NnLoad { dest: nn(dst, line)?, base, inc })
    };
    Ok(match op {
        "sdotp" => {
            want(&args, 3, line, op)?;
            Instr::Sdotp { acc: gp(args[0], line)?, act: operand(args[1], line)?, wgt: operand(args[2], line)? }
        }
        "ml" => {
            want(&args, 3, line, op)?;
            Instr::MacLoad {
                acc: gp(args[0], line)?,
                act: operand(args[1], line)?,
                wgt: operand(args[2], line)?,
                load: None,
            }
        }
        "ml.ld" => {
            want(&args, 5, line, op)?;
            Instr::MacLoad {
                acc: gp(args[0], line)?,
                act: operand(args[1], line)?,
                wgt: operand(args[2], line)?,
                load: Some(nn_load(args[3], args[4])?),
            }
        }
        "lnn" => {
            want(&args, 2, line, op)?;
            Instr::LoadNn(nn_load(args[0], args[1])?)
        }
        "lw" => load(Width::W, true)?,
        "lh" => load(Width::H, true)?,
        "lhu" => load(Width::H, false)?,
        "lb" => load(Width::B, true)?,
        "lbu" => load(Width::B, false)?,
        "sw" => store(Width::W)?,
        "sh" => store(Width::H)?,
        "sb" => store(Width::B)?,
        "csrfmt" => {
            if !(2..=4).contains(&args.len()) {
                return Err(err(line, "`csrfmt` takes act, wgt [, auto|manual [, stride]]"));
            }
            let mpc_auto = match args.get(2).copied().unwrap_or("auto") {
                "auto" => true,
                "manual" => false,
                other => return Err(err(line, format!("expected auto/manual, got `{other}`"))),
            };
            let mpc_stride = match args.get(3) {
                Some(s) => imm(s, line)? as u32,
                None => 1,
            };
            if mpc_stride == 0 {
                return Err(err(line, "mpc stride must be positive"));
            }
            Instr::CsrFmt { act: fmt_tok(args[0], line)?, wgt: fmt_tok(args[1], line)?, mpc_auto, mpc_stride }
        }
        "li" => {
            want(&args, 2, line, op)?;
            Instr::Li { rd: gp(args[0], line)?, imm: imm(args[1], line)? }
        }
        "clip" => {
            want(&args, 3, line, op)?;
            Instr::Clip { rd: gp(args[0], line)?, rs: gp(args[1], line)?, bits: imm(args[2], line)? as u8 }
        }
        "unpack" => {
            want(&args, 5, line, op)?;
            Instr::Unpack {
                rd: gp(args[0], line)?,
                rs: gp(args[1], line)?,
                part: imm(args[2], line)? as u8,
                from: fmt_tok(args[3], line)?,
                cost: imm(args[4], line)? as u32,
            }
        }
        "loop" | "sloop" => {
            let body = rest.trim();
            let n = body
                .strip_suffix('{')
                .ok_or_else(|| err(line, "loop header must end with `{`"))?
                .trim();
            Instr::LoopBegin {
                count: imm(n, line)? as u32,
                kind: if op == "loop" { LoopKind::Hw } else { LoopKind::Sw },
            }
        }
        "barrier" => Instr::Barrier,
        "nop" => Instr::Nop,
        "wait" => {
            want(&args, 1, line, op)?;
            Instr::WaitEvent { mask: imm(args[0], line)? as u32 }
        }
        _ => {
            let (base, is_imm) = match op.strip_suffix('i') {
                Some(b) if AluOp::ALL.iter().any(|o| o.mnemonic() == b) => (b, true),
                _ => (op, false),
            };
            let alu = AluOp::ALL
                .iter()
                .copied()
                .find(|o| o.mnemonic() == base)
                .ok_or_else(|| err(line, format!("unknown mnemonic `{op}`")))?;
            want(&args, 3, line, op)?;
            let rhs = if is_imm { Operand::Imm(imm(args[2], line)?) } else { Operand::Reg(gp(args[2], line)?) };
            Instr::Alu { op: alu, rd: gp(args[0], line)?, rs1: gp(args[1], line)?, rhs }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Precision;

    #[test]
    fn parses_sample() {
        let p = parse_program(
            "# demo\n csrfmt u8, i4, auto, 16\nli x5, 0x100\nloop 3 {\n  ml.ld x10, a0, w0, w1, (x5)+4 ; fused\n  sdotp x11, a1, x7\n}\nlw x3, -8(x4)\nsb x3, (x4)+1\naddi x1, x1, -1\nmax x2, x1, x0\n",
        )
        .unwrap();
        let i = p.instrs();
        assert_eq!(i.len(), 10);
        assert_eq!(
            i[0],
            Instr::CsrFmt {
                act: LaneFormat::unsigned(Precision::B8),
                wgt: LaneFormat::signed(Precision::B4),
                mpc_auto: true,
                mpc_stride: 16
            }
        );
        assert_eq!(
            i[3],
            Instr::MacLoad {
                acc: 10,
                act: Src::a(0),
                wgt: Src::w(0),
                load: Some(NnLoad { dest: 1, base: 5, inc: 4 })
            }
        );
        assert_eq!(i[6], Instr::Load { rd: 3, base: 4, offset: -8, post_inc: false, width: Width::W, signed: true });
        assert_eq!(i[9], Instr::Alu { op: AluOp::Max, rd: 2, rs1: 1, rhs: Operand::Reg(0) });
    }

    #[test]
    fn display_round_trip() {
        let src = "csrfmt u2, i2, manual, 1\nli x1, -5\nsloop 2 {\nlnn a1, (x3)+-4\nunpack x4, x5, 3, i2, 2\nclip x6, x7, 8\nsrai x6, x6, 3\nwait 0x1\nbarrier\nnop\nsh x1, 2(x2)\nlhu x9, (x8)+2\n}\n";
        let p = parse_program(src).unwrap();
        let again = parse_program(&p.to_string()).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_program("nop\nfrob x1\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(parse_program("sdotp x1, a2, w0").is_err());
        assert!(parse_program("loop 3 {\n").is_err());
        assert!(parse_program("lnn a0, 4(x1)").is_err());
    }
}
