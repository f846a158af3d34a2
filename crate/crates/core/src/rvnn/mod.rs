//! RVNN core model: mixed-precision SIMD dot products, the NN register file
//! and the fused MAC-load.

pub mod asm;
pub mod core;
pub mod program;

use std::sync::Arc;

pub use self::asm::parse_program;
pub use self::core::{Core, CoreConfig, CoreStats, CoreStatus, FmtCsr, MemOp, MemOutcome};
pub use self::program::{
    AluOp, Instr, LoopKind, NnLoad, Operand, Program, ProgramBuilder, Reg, Src, Width, A0, A1, NN_REGS, W0,
};

use crate::error::{fault, Result, SimError};
use crate::tcdm::{address_to_bank, BankAccess, Tcdm};

/// Run one core alone against `mem` with every access granted.
pub fn run_program(core: &mut Core, mem: &mut Tcdm, max_cycles: u64) -> Result<CoreStats> {
    let mut cycle = 0u64;
    loop {
        let op = core.poll();
        if core.status() == CoreStatus::Done {
            return Ok(core.stats);
        }
        if let Some(e) = core.take_fault() {
            return Err(e);
        }
        if cycle >= max_cycles {
            return Err(SimError::Timeout(cycle));
        }
        let outcome = match op {
            Some(op) => Some(MemOutcome::Granted(serve(mem, &op)?)),
            None => None,
        };
        core.commit(outcome);
        if let Some(e) = core.take_fault() {
            return Err(e);
        }
        match core.status() {
            CoreStatus::Barrier => core.release_barrier(),
            CoreStatus::WaitEvent(_) => {
                return Err(SimError::Config("core waits for an event but nothing can raise one".into()))
            }
            _ => {}
        }
        cycle += 1;
    }
}

fn serve(mem: &mut Tcdm, op: &MemOp) -> Result<u32> {
    let (bank, offset) = address_to_bank(op.word_addr(), mem.config()).map_err(|_| fault(op.addr, "core access outside L1"))?;
    mem.next_cycle();
    let r = mem.serve(&BankAccess { bank, offset, write: op.word_write() });
    Ok(r.unwrap_or(0))
}

/// Convenience: assemble, run on a fresh core, return (core, stats).
pub fn run_asm(text: &str, mem: &mut Tcdm, max_cycles: u64) -> Result<(Core, CoreStats)> {
    let prog = Arc::new(parse_program(text)?);
    let mut core = Core::new(0, prog, CoreConfig::default());
    let stats = run_program(&mut core, mem, max_cycles)?;
    Ok((core, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sdotp_scalar_oracle, LaneFormat, PackedVector, Precision};
    use crate::tcdm::TcdmConfig;
    use proptest::prelude::*;

    fn mem() -> Tcdm {
        Tcdm::new(TcdmConfig::default())
    }

    fn run(text: &str) -> (Core, CoreStats) {
        run_asm(text, &mut mem(), 1_000_000).unwrap()
    }

    #[test]
    fn empty_program_zero_cycles() {
        let (_, s) = run("");
        assert_eq!(s.cycles, 0);
    }

    #[test]
    fn hardware_loop_has_no_overhead() {
        let (c, s) = run("li x1, 0\nloop 10 {\naddi x1, x1, 3\n}\n");
        assert_eq!(c.gp[1], 30);
        // li + setup + 10 body
        assert_eq!(s.cycles, 12);
    }

    #[test]
    fn software_loop_pays_latch_and_branch() {
        let (c, s) = run("sloop 4 {\naddi x1, x1, 1\n}\n");
        assert_eq!(c.gp[1], 4);
        // setup + 4*(body + 2 latch) + 3 taken-branch penalties
        assert_eq!(s.cycles, 1 + 4 * 3 + 3);
        assert_eq!(s.stall_branch, 3);
    }

    #[test]
    fn nested_and_zero_trip_loops() {
        let (c, _) = run("loop 3 {\nloop 4 {\naddi x1, x1, 1\n}\nloop 0 {\naddi x2, x2, 1\n}\n}\n");
        assert_eq!((c.gp[1], c.gp[2]), (12, 0));
    }

    #[test]
    fn load_use_stall() {
        let mut m = mem();
        m.write_word(64, 7).unwrap();
        let (c, s) = run_asm("li x2, 64\nlw x1, 0(x2)\naddi x3, x1, 1\n", &mut m, 100).unwrap();
        assert_eq!(c.gp[3], 8);
        assert_eq!((s.cycles, s.stall_load_use), (4, 1));
        let (_, s) = run_asm("li x2, 64\nlw x1, 0(x2)\nnop\naddi x3, x1, 1\n", &mut m, 100).unwrap();
        assert_eq!((s.cycles, s.stall_load_use), (4, 0));
    }

    #[test]
    fn sub_word_memory() {
        let mut m = mem();
        let (c, _) = run_asm(
            "li x1, 0x1f0\nli x2, -2\nsb x2, 1(x1)\nsh x2, 2(x1)\nlw x3, 0(x1)\nlb x4, 1(x1)\nlbu x5, (x1)+1\nlhu x6, 1(x1)\n",
            &mut m,
            100,
        )
        .unwrap();
        assert_eq!(c.gp[3], 0xFFFE_FE00);
        assert_eq!(c.gp[4], -2i32 as u32);
        assert_eq!(c.gp[5], 0);
        assert_eq!(c.gp[1], 0x1f1);
        assert_eq!(c.gp[6], 0xFFFE);
    }

    #[test]
    fn misaligned_access_faults() {
        let e = run_asm("li x1, 2\nlw x2, 0(x1)\n", &mut mem(), 100).unwrap_err();
        assert!(matches!(e, SimError::AddressFault { .. }));
    }

    #[test]
    fn csr_rejects_narrow_activation() {
        let e = run_asm("csrfmt u4, i8\n", &mut mem(), 100).unwrap_err();
        assert!(matches!(e, SimError::Config(_)));
    }

    #[test]
    fn timeout_guard() {
        let e = run_asm("sloop 1000 {\nnop\n}\n", &mut mem(), 50).unwrap_err();
        assert_eq!(e, SimError::Timeout(50));
    }

    #[test]
    fn zero_activation_leaves_accumulator() {
        let (c, _) = run("li x10, 77\nli x1, 0\nli x2, -1\nsdotp x10, x1, x2\n");
        assert_eq!(c.gp[10], 77);
    }

    #[test]
    fn mac_load_uses_old_value() {
        let mut m = mem();
        m.write_word(0x100, 0x0101_0101).unwrap();
        // a0 holds [2,2,2,2]; w0 holds [1,1,1,1]; ml.ld reloads a0 while reading it
        let text = "csrfmt u8, i8\nli x1, 0x02020202\nli x2, 0x01010101\nli x5, 0x100\nli x20, 0x40\n\
                    sw x1, 0(x20)\nsw x2, 4(x20)\nlnn a0, (x20)+4\nlnn w0, (x20)+4\nnop\n\
                    ml.ld x10, a0, w0, a0, (x5)+4\nml x11, a0, w0\n";
        let (c, s) = run_asm(text, &mut m, 100).unwrap();
        assert_eq!(c.gp[10], 8);
        assert_eq!(c.gp[11], 4);
        assert_eq!(c.gp[5], 0x104);
        assert_eq!(s.stall_load_use, 1);
        assert_eq!(s.mac_loads, 1);
    }

    #[test]
    fn mpc_subgroup_cycling() {
        // act u8 [1,1,1,1], wgt i4 lanes [1,2,3,4,5,6,7,-1]
        let wgt = PackedVector::pack(&[1, 2, 3, 4, 5, 6, 7, -1], LaneFormat::signed(Precision::B4)).word;
        let text = format!(
            "csrfmt u8, i4\nli x1, 0x01010101\nli x2, {}\nsdotp x10, x1, x2\nsdotp x11, x1, x2\nsdotp x12, x1, x2\n",
            wgt as i32
        );
        let (c, _) = run(&text);
        assert_eq!((c.gp[10], c.gp[11], c.gp[12]), (10, 17, 10));
        assert_eq!(c.mpc_subgroup, 1);
    }

    #[test]
    fn mpc_stride_and_eight_by_two() {
        let wgt = PackedVector::pack(&[1; 16], LaneFormat::signed(Precision::B2)).word;
        let text = format!(
            "csrfmt u8, i2, auto, 2\nli x1, 0x01010101\nli x2, {}\nloop 8 {{\nsdotp x10, x1, x2\n}}\n",
            wgt as i32
        );
        let (c, _) = run(&text);
        assert_eq!(c.gp[10], 32);
        assert_eq!(c.mpc_subgroup, 0);
    }

    #[test]
    fn unpack_sub_byte() {
        let w = PackedVector::pack(
            &[1, -1, 0, 1, -2, -2, 1, 0, 0, 0, 0, 0, 1, 1, 1, 1],
            LaneFormat::signed(Precision::B2),
        )
        .word;
        let (c, s) = run(&format!("li x1, {}\nunpack x2, x1, 1, i2, 3\nunpack x3, x1, 3, i2, 3\n", w as i32));
        let f8 = LaneFormat::signed(Precision::B8);
        assert_eq!(PackedVector::new(c.gp[2], f8).unpack(), vec![-2, -2, 1, 0]);
        assert_eq!(PackedVector::new(c.gp[3], f8).unpack(), vec![1, 1, 1, 1]);
        assert_eq!(s.cycles, 7);
    }

    fn formats() -> impl Strategy<Value = (LaneFormat, LaneFormat)> {
        (0usize..5, 0usize..5, any::<bool>(), any::<bool>()).prop_filter_map("act >= wgt", |(a, w, sa, sw)| {
            (a >= w).then(|| (LaneFormat::new(Precision::ALL[a], sa), LaneFormat::new(Precision::ALL[w], sw)))
        })
    }

    proptest! {
        #[test]
        fn sdotp_matches_sliced_oracle((fa, fw) in formats(), act in any::<u32>(), wgt in any::<u32>(), acc in any::<i32>()) {
            let prog = Arc::new(Program::new(vec![]).unwrap());
            let mut core = Core::new(0, prog, CoreConfig::default());
            core.fmt = FmtCsr { act: fa, wgt: fw, mpc_auto: true, mpc_stride: 1 };
            let l = fa.lanes();
            let wv = PackedVector::new(wgt, fw).unpack();
            for sub in 0..core.fmt.subgroups() as usize {
                core.mpc_subgroup = sub as u32;
                let want = sdotp_scalar_oracle(PackedVector::new(act, fa), &wv[sub * l..sub * l + l], acc);
                prop_assert_eq!(acc.wrapping_add(core.dotp(act, wgt)), want);
            }
        }

        #[test]
        fn assembly_round_trip(n in 1u32..50, r in 1u8..32, imm in any::<i32>()) {
            let text = format!("loop {n} {{\naddi x{r}, x{r}, {imm}\nli x{r}, {imm}\n}}\n");
            let p = parse_program(&text).unwrap();
            prop_assert_eq!(parse_program(&p.to_string()).unwrap(), p);
        }
    }
}
