//! Two-branch L1 interconnect: per-bank round-robin for the narrow
//! (logarithmic) ports and an all-or-nothing wide (shallow) port, with a
//! priority/max-stall rotation between the branches.

use std::fmt;
use std::str::FromStr;

use crate::error::{fault, Result, SimError};
use crate::tcdm::{address_to_bank, BankAccess, TcdmConfig, WORD_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Shallow,
    Logarithmic,
}

impl Branch {
    pub fn other(self) -> Branch {
        match self {
            Branch::Shallow => Branch::Logarithmic,
            Branch::Logarithmic => Branch::Shallow,
        }
    }

    /// Encoding used by the memory-mapped arbiter register.
    pub fn code(self) -> u32 {
        match self {
            Branch::Shallow => 0,
            Branch::Logarithmic => 1,
        }
    }

    pub fn from_code(v: u32) -> Result<Branch> {
        match v {
            0 => Ok(Branch::Shallow),
            1 => Ok(Branch::Logarithmic),
            _ => Err(SimError::Config(format!("bad branch code {v}"))),
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Shallow => "shallow",
            Branch::Logarithmic => "log",
        })
    }
}

impl FromStr for Branch {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Branch> {
        match s {
            "shallow" => Ok(Branch::Shallow),
            "log" | "logarithmic" => Ok(Branch::Logarithmic),
            _ => Err(SimError::Parse(format!("unknown branch `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HciConfig {
    pub n_log_ports: usize,
    pub shallow_width_words: usize,
    pub priority: Branch,
    pub max_stall: u32,
}

impl Default for HciConfig {
    fn default() -> Self {
        Self { n_log_ports: 9, shallow_width_words: 9, priority: Branch::Shallow, max_stall: 10 }
    }
}

impl HciConfig {
    pub fn validate(&self, tcdm: &TcdmConfig) -> Result<()> {
        if self.shallow_width_words == 0 || self.shallow_width_words > tcdm.n_banks {
            return Err(SimError::Config(format!(
                "shallow width {} must be in 1..={}",
                self.shallow_width_words, tcdm.n_banks
            )));
        }
        if self.n_log_ports == 0 {
            return Err(SimError::Config("need at least one log port".into()));
        }
        Ok(())
    }

    /// Peak bytes per cycle when both branches run conflict-free.
    pub fn peak_bytes_per_cycle(&self) -> usize {
        (self.n_log_ports + self.shallow_width_words) * WORD_BYTES
    }
}

/// Banks and word offsets touched by a wide access starting at `addr`.
///
/// Banks past the last one wrap to bank 0 at the next offset.
pub fn route_shallow(addr: u32, width_words: usize, tcdm: &TcdmConfig) -> Result<Vec<(usize, usize)>> {
    if !addr.is_multiple_of(WORD_BYTES as u32) {
        return Err(fault(addr, "unaligned wide access"));
    }
    let (index, offset) = address_to_bank(addr, tcdm)?;
    let mut out = Vec::with_capacity(width_words);
    for i in 0..width_words {
        let raw = index + i;
        let (bank, off) = (raw % tcdm.n_banks, offset + raw / tcdm.n_banks);
        if off >= tcdm.words_per_bank() {
            return Err(fault(addr, "wide access runs past the end of L1"));
        }
        out.push((bank, off));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogRequest {
    pub bank: usize,
    pub offset: usize,
    pub write: Option<(u32, u8)>,
}

impl LogRequest {
    pub fn at(addr: u32, tcdm: &TcdmConfig, write: Option<(u32, u8)>) -> Result<Self> {
        let (bank, offset) = address_to_bank(addr & !3, tcdm)?;
        Ok(Self { bank, offset, write })
    }

    pub fn access(&self) -> BankAccess {
        BankAccess { bank: self.bank, offset: self.offset, write: self.write }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShallowRequest {
    pub targets: Vec<(usize, usize)>,
    /// Per-slot write data; `None` for a read. Slots with byte enable 0 are untouched.
    pub write: Option<Vec<(u32, u8)>>,
}

impl ShallowRequest {
    pub fn read(addr: u32, width: usize, tcdm: &TcdmConfig) -> Result<Self> {
        Ok(Self { targets: route_shallow(addr, width, tcdm)?, write: None })
    }

    pub fn write(addr: u32, data: Vec<(u32, u8)>, tcdm: &TcdmConfig) -> Result<Self> {
        Ok(Self { targets: route_shallow(addr, data.len(), tcdm)?, write: Some(data) })
    }

    pub fn accesses(&self) -> Vec<BankAccess> {
        self.targets
            .iter()
            .enumerate()
            .map(|(i, &(bank, offset))| BankAccess {
                bank,
                offset,
                write: self.write.as_ref().map(|w| w[i]),
            })
            .collect()
    }

    /// Bytes actually moved (slots with a zero byte-enable are skipped on writes).
    pub fn bytes(&self) -> usize {
        match &self.write {
            None => self.targets.len() * WORD_BYTES,
            Some(w) => w.iter().map(|&(_, be)| be.count_ones() as usize).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArbiterState {
    rr: Vec<usize>,
    stall_count: u32,
    last_override: bool,
}

impl ArbiterState {
    pub fn new(n_banks: usize) -> Self {
        Self { rr: vec![0; n_banks], stall_count: 0, last_override: false }
    }

    pub fn stall_count(&self) -> u32 {
        self.stall_count
    }

    /// Apply a new policy: counters are cleared, round-robin pointers kept.
    pub fn set_arbiter_config(&mut self, cfg: &mut HciConfig, priority: Branch, max_stall: u32) {
        cfg.priority = priority;
        cfg.max_stall = max_stall;
        self.stall_count = 0;
        self.last_override = false;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Grants {
    pub log: Vec<bool>,
    pub shallow: bool,
    /// Both branches wanted at least one common bank.
    pub contested: bool,
    /// Which branch took the contested banks, if any.
    pub winner: Option<Branch>,
}

/// Resolve one cycle of requests.
pub fn arbitrate(
    log: &[Option<LogRequest>],
    shallow: Option<&ShallowRequest>,
    state: &mut ArbiterState,
    cfg: &HciConfig,
) -> Grants {
    let n_banks = state.rr.len();
    let n_ports = log.len();
    let mut shallow_bank = vec![false; n_banks];
    if let Some(s) = shallow {
        for &(b, _) in &s.targets {
            shallow_bank[b] = true;
        }
    }
    let contested = shallow.is_some() && log.iter().flatten().any(|r| shallow_bank[r.bank]);

    let winner = if contested {
        let w = if state.stall_count >= cfg.max_stall && !state.last_override {
            state.stall_count = 0;
            state.last_override = true;
            cfg.priority.other()
        } else {
            state.stall_count += 1;
            state.last_override = false;
            cfg.priority
        };
        Some(w)
    } else {
        state.stall_count = 0;
        state.last_override = false;
        None
    };

    let shallow_granted = shallow.is_some() && winner != Some(Branch::Logarithmic);
    let mut grants = vec![false; n_ports];
    let mut wanted = vec![false; n_ports];
    for bank in 0..n_banks {
        if shallow_granted && shallow_bank[bank] {
            continue;
        }
        let start = state.rr[bank];
        let mut any = false;
        for (p, w) in wanted.iter_mut().enumerate() {
            *w = matches!(log[p], Some(r) if r.bank == bank);
            any |= *w;
        }
        if !any {
            continue;
        }
        for k in 0..n_ports {
            let p = (start + k) % n_ports;
            if wanted[p] {
                grants[p] = true;
                state.rr[bank] = (p + 1) % n_ports;
                break;
            }
        }
    }
    Grants { log: grants, shallow: shallow_granted, contested, winner }
}

/// Round-robin sharing of one log port between several initiators.
#[derive(Debug, Clone, Default)]
pub struct PortMux {
    next: usize,
}

impl PortMux {
    /// Pick which of `ready` initiators drives the port this cycle.
    pub fn pick(&mut self, ready: &[bool]) -> Option<usize> {
        let n = ready.len();
        for k in 0..n {
            let i = (self.next + k) % n;
            if ready[i] {
                self.next = (i + 1) % n;
                return Some(i);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tcdm() -> TcdmConfig {
        TcdmConfig::default()
    }

    #[test]
    fn shallow_no_rollover() {
        let r = route_shallow(0x80 * 3, 9, &tcdm()).unwrap();
        assert_eq!(r, (0..9).map(|b| (b, 3)).collect::<Vec<_>>());
    }

    #[test]
    fn shallow_rolls_over() {
        let r = route_shallow(30 * 4 + 0x80 * 5, 9, &tcdm()).unwrap();
        let mut want = vec![(30, 5), (31, 5)];
        want.extend((0..7).map(|b| (b, 6)));
        assert_eq!(r, want);
    }

    #[test]
    fn four_port_access_from_bank_one() {
        let r = route_shallow(4, 4, &tcdm()).unwrap();
        assert_eq!(r, vec![(1, 0), (2, 0), (3, 0), (4, 0)]);
    }

    #[test]
    fn shallow_faults() {
        assert!(route_shallow(2, 9, &tcdm()).is_err());
        assert!(route_shallow(131072 - 8, 9, &tcdm()).is_err());
        assert!(route_shallow(131072, 9, &tcdm()).is_err());
    }

    #[test]
    fn disjoint_branches_both_granted() {
        let t = tcdm();
        let cfg = HciConfig::default();
        let mut st = ArbiterState::new(32);
        let s = ShallowRequest::read(0, 9, &t).unwrap();
        let mut log = vec![None; 9];
        log[0] = Some(LogRequest::at(20 * 4, &t, None).unwrap());
        let g = arbitrate(&log, Some(&s), &mut st, &cfg);
        assert!(g.shallow && g.log[0] && !g.contested);
    }

    fn saturate(cfg: HciConfig, cycles: usize) -> (usize, usize) {
        let t = tcdm();
        let mut st = ArbiterState::new(32);
        let s = ShallowRequest::read(0, 9, &t).unwrap();
        let log = vec![Some(LogRequest::at(8, &t, None).unwrap())];
        let (mut sh, mut lg) = (0, 0);
        for _ in 0..cycles {
            let g = arbitrate(&log, Some(&s), &mut st, &cfg);
            sh += g.shallow as usize;
            lg += g.log[0] as usize;
            assert!(g.shallow ^ g.log[0]);
        }
        (sh, lg)
    }

    #[test]
    fn shallow_priority_max_stall_ten() {
        let cfg = HciConfig { priority: Branch::Shallow, max_stall: 10, ..Default::default() };
        assert_eq!(saturate(cfg, 1100), (1000, 100));
    }

    #[test]
    fn max_stall_zero_alternates() {
        let cfg = HciConfig { priority: Branch::Shallow, max_stall: 0, ..Default::default() };
        assert_eq!(saturate(cfg, 1000), (500, 500));
        let cfg = HciConfig { priority: Branch::Logarithmic, max_stall: 0, ..Default::default() };
        assert_eq!(saturate(cfg, 1000), (500, 500));
    }

    #[test]
    fn set_config_resets_counters() {
        let mut cfg = HciConfig::default();
        let mut st = ArbiterState::new(32);
        st.stall_count = 7;
        st.set_arbiter_config(&mut cfg, Branch::Logarithmic, 3);
        assert_eq!((cfg.priority, cfg.max_stall, st.stall_count()), (Branch::Logarithmic, 3, 0));
    }

    #[test]
    fn peak_bandwidth() {
        let cfg = HciConfig::default();
        assert_eq!(cfg.peak_bytes_per_cycle(), 72);
        let gbs = 72.0 * 290e6 / 1e9;
        assert!((gbs - 20.9f64).abs() < 0.05);
    }

    #[test]
    fn port_mux_round_robin() {
        let mut m = PortMux::default();
        let seq: Vec<_> = (0..4).map(|_| m.pick(&[true, true]).unwrap()).collect();
        assert_eq!(seq, vec![0, 1, 0, 1]);
        assert_eq!(m.pick(&[false, false]), None);
        assert_eq!(m.pick(&[false, true]), Some(1));
    }

    proptest! {
        #[test]
        fn route_matches_per_word_mapping(word in 0u32..(32768 - 40), width in 1usize..=9) {
            let t = tcdm();
            let addr = word * 4;
            let r = route_shallow(addr, width, &t).unwrap();
            for (i, &(b, o)) in r.iter().enumerate() {
                prop_assert_eq!(address_to_bank(addr + 4 * i as u32, &t).unwrap(), (b, o));
            }
        }

        #[test]
        fn grants_are_legal(
            reqs in proptest::collection::vec(proptest::option::of(0usize..32), 9),
            start in proptest::option::of(0usize..32),
            prio in any::<bool>(),
            max_stall in 0u32..4,
            warm in 0usize..8,
        ) {
            let t = tcdm();
            let cfg = HciConfig {
                priority: if prio { Branch::Shallow } else { Branch::Logarithmic },
                max_stall,
                ..Default::default()
            };
            let mut st = ArbiterState::new(32);
            let log: Vec<_> = reqs.iter().map(|b| b.map(|b| LogRequest::at(b as u32 * 4, &t, None).unwrap())).collect();
            let sh = start.map(|b| ShallowRequest::read(b as u32 * 4, 9, &t).unwrap());
            for _ in 0..=warm {
                let g = arbitrate(&log, sh.as_ref(), &mut st, &cfg);
                let mut used = [false; 32];
                if g.shallow {
                    for &(b, _) in &sh.as_ref().unwrap().targets {
                        prop_assert!(!used[b]);
                        used[b] = true;
                    }
                }
                for (p, &ok) in g.log.iter().enumerate() {
                    if ok {
                        let b = log[p].unwrap().bank;
                        prop_assert!(!used[b], "bank {} double granted", b);
                        used[b] = true;
                    }
                }
            }
        }

        #[test]
        fn starvation_free(
            traffic in proptest::collection::vec((proptest::collection::vec(proptest::option::of(0usize..32), 9), any::<bool>()), 1..200),
            prio in any::<bool>(),
            max_stall in 0u32..12,
            sh_start in 0usize..32,
        ) {
            let t = tcdm();
            let cfg = HciConfig {
                priority: if prio { Branch::Shallow } else { Branch::Logarithmic },
                max_stall,
                ..Default::default()
            };
            let mut st = ArbiterState::new(32);
            let sh = ShallowRequest::read(sh_start as u32 * 4, 9, &t).unwrap();
            // the shallow request stays pending until served; log traffic is adversarial
            let (mut sh_wait, mut log_wait) = (0u32, 0u32);
            for (reqs, sh_on) in &traffic {
                let log: Vec<_> = reqs.iter().map(|b| b.map(|b| LogRequest::at(b as u32 * 4, &t, None).unwrap())).collect();
                let g = arbitrate(&log, if *sh_on || sh_wait > 0 { Some(&sh) } else { None }, &mut st, &cfg);
                if *sh_on || sh_wait > 0 {
                    if g.shallow { sh_wait = 0 } else { sh_wait += 1 }
                }
                if g.winner == Some(Branch::Shallow) { log_wait += 1 } else { log_wait = 0 }
                prop_assert!(sh_wait <= max_stall + 1);
                prop_assert!(log_wait <= max_stall + 1);
            }
        }

        #[test]
        fn round_robin_fair(k in 2usize..=9, bank in 0usize..32, cycles in 1usize..300) {
            let t = tcdm();
            let cfg = HciConfig::default();
            let mut st = ArbiterState::new(32);
            let mut log = vec![None; 9];
            for slot in log.iter_mut().take(k) {
                *slot = Some(LogRequest::at(bank as u32 * 4, &t, None).unwrap());
            }
            let mut count = vec![0usize; k];
            for _ in 0..cycles {
                let g = arbitrate(&log, None, &mut st, &cfg);
                prop_assert_eq!(g.log.iter().filter(|&&x| x).count(), 1);
                for (p, c) in count.iter_mut().enumerate() {
                    *c += g.log[p] as usize;
                }
            }
            let (lo, hi) = (count.iter().min().unwrap(), count.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
    }
}
