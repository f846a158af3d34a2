//! Word-interleaved multi-banked L1 scratchpad.

use std::fs;
use std::path::Path;

use crate::error::{fault, Result};

pub const WORD_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcdmConfig {
    pub n_banks: usize,
    pub bank_bytes: usize,
}

impl Default for TcdmConfig {
    fn default() -> Self {
        Self { n_banks: 32, bank_bytes: 4096 }
    }
}

impl TcdmConfig {
    pub fn total_bytes(&self) -> usize {
        self.n_banks * self.bank_bytes
    }

    pub fn words_per_bank(&self) -> usize {
        self.bank_bytes / WORD_BYTES
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n_banks.is_power_of_two() || !self.bank_bytes.is_multiple_of(WORD_BYTES) || self.bank_bytes == 0 {
            return Err(crate::SimError::Config(format!("invalid TCDM geometry {self:?}")));
        }
        Ok(())
    }
}

/// Map a word-aligned byte address to `(bank, word offset inside the bank)`.
pub fn address_to_bank(addr: u32, cfg: &TcdmConfig) -> Result<(usize, usize)> {
    if !addr.is_multiple_of(WORD_BYTES as u32) {
        return Err(fault(addr, "unaligned word address"));
    }
    if addr as usize >= cfg.total_bytes() {
        return Err(fault(addr, "outside L1"));
    }
    let word = addr as usize / WORD_BYTES;
    Ok((word % cfg.n_banks, word / cfg.n_banks))
}

/// Inverse of [`address_to_bank`].
pub fn bank_to_address(bank: usize, offset: usize, cfg: &TcdmConfig) -> u32 {
    ((offset * cfg.n_banks + bank) * WORD_BYTES) as u32
}

/// One granted access to one bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankAccess {
    pub bank: usize,
    pub offset: usize,
    /// `Some((data, byte_enable))` for a write; byte_enable bit i covers byte i.
    pub write: Option<(u32, u8)>,
}

impl BankAccess {
    pub fn read(bank: usize, offset: usize) -> Self {
        Self { bank, offset, write: None }
    }

    pub fn write(bank: usize, offset: usize, data: u32, be: u8) -> Self {
        Self { bank, offset, write: Some((data, be)) }
    }
}

fn merge(old: u32, new: u32, be: u8) -> u32 {
    let mut mask = 0u32;
    for i in 0..4 {
        if be & (1 << i) != 0 {
            mask |= 0xFF << (8 * i);
        }
    }
    (old & !mask) | (new & mask)
}

#[derive(Debug, Clone)]
pub struct Tcdm {
    cfg: TcdmConfig,
    banks: Vec<Vec<u32>>,
    last_served: Vec<u64>,
    epoch: u64,
    accesses: Vec<u64>,
}

impl Tcdm {
    pub fn new(cfg: TcdmConfig) -> Self {
        Self {
            cfg,
            banks: vec![vec![0; cfg.words_per_bank()]; cfg.n_banks],
            last_served: vec![u64::MAX; cfg.n_banks],
            epoch: 0,
            accesses: vec![0; cfg.n_banks],
        }
    }

    pub fn config(&self) -> &TcdmConfig {
        &self.cfg
    }

    /// Serve one cycle's granted accesses. Read results are returned in order
    /// (`None` for writes). Two accesses to one bank in one cycle is a simulator bug.
    pub fn bank_cycle(&mut self, granted: &[BankAccess]) -> Vec<Option<u32>> {
        self.next_cycle();
        granted.iter().map(|a| self.serve(a)).collect()
    }

    /// Open a new cycle for [`Tcdm::serve`].
    pub fn next_cycle(&mut self) {
        self.epoch += 1;
    }

    pub fn serve(&mut self, a: &BankAccess) -> Option<u32> {
        assert!(
            self.last_served[a.bank] != self.epoch,
            "bank {} granted twice in one cycle",
            a.bank
        );
        self.last_served[a.bank] = self.epoch;
        self.accesses[a.bank] += 1;
        let slot = &mut self.banks[a.bank][a.offset];
        match a.write {
            Some((data, be)) => {
                *slot = merge(*slot, data, be);
                None
            }
            None => Some(*slot),
        }
    }

    pub fn bank_accesses(&self) -> &[u64] {
        &self.accesses
    }

    pub fn read_word(&self, addr: u32) -> Result<u32> {
        let (b, o) = address_to_bank(addr, &self.cfg)?;
        Ok(self.banks[b][o])
    }

    pub fn write_word(&mut self, addr: u32, value: u32) -> Result<()> {
        let (b, o) = address_to_bank(addr, &self.cfg)?;
        self.banks[b][o] = value;
        Ok(())
    }

    fn check_range(&self, addr: u32, len: usize) -> Result<()> {
        if addr as usize + len > self.cfg.total_bytes() {
            return Err(fault(addr, format!("{len}-byte range leaves L1")));
        }
        Ok(())
    }

    pub fn read_bytes(&self, addr: u32, len: usize) -> Result<Vec<u8>> {
        self.check_range(addr, len)?;
        let mut out = Vec::with_capacity(len);
        for a in addr as usize..addr as usize + len {
            let w = self.read_word((a & !3) as u32)?;
            out.push((w >> (8 * (a & 3))) as u8);
        }
        Ok(out)
    }

    pub fn write_bytes(&mut self, addr: u32, bytes: &[u8]) -> Result<()> {
        self.check_range(addr, bytes.len())?;
        for (i, &byte) in bytes.iter().enumerate() {
            let a = addr as usize + i;
            let wa = (a & !3) as u32;
            let w = self.read_word(wa)?;
            let sh = 8 * (a & 3);
            self.write_word(wa, (w & !(0xFF << sh)) | ((byte as u32) << sh))?;
        }
        Ok(())
    }

    pub fn read_u16(&self, addr: u32) -> Result<u16> {
        let b = self.read_bytes(addr, 2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn write_u16(&mut self, addr: u32, v: u16) -> Result<()> {
        self.write_bytes(addr, &v.to_le_bytes())
    }

    /// Whole memory as a flat little-endian image.
    pub fn image(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.cfg.total_bytes());
        for word in 0..self.cfg.total_bytes() / WORD_BYTES {
            let w = self.banks[word % self.cfg.n_banks][word / self.cfg.n_banks];
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn load_image(&mut self, base: u32, image: &[u8]) -> Result<()> {
        self.write_bytes(base, image)
    }

    pub fn save_image_file(&self, path: &Path) -> Result<()> {
        fs::write(path, self.image())?;
        Ok(())
    }

    pub fn load_image_file(&mut self, base: u32, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.load_image(base, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleaving() {
        let cfg = TcdmConfig::default();
        assert_eq!(cfg.total_bytes(), 131072);
        assert_eq!(address_to_bank(0x0, &cfg).unwrap(), (0, 0));
        assert_eq!(address_to_bank(0x4, &cfg).unwrap(), (1, 0));
        assert_eq!(address_to_bank(0x80, &cfg).unwrap(), (0, 1));
        assert!(address_to_bank(0x2, &cfg).is_err());
        assert!(address_to_bank(131072, &cfg).is_err());
    }

    #[test]
    fn mapping_is_bijective() {
        let cfg = TcdmConfig { n_banks: 8, bank_bytes: 64 };
        let mut seen = std::collections::HashSet::new();
        for addr in (0..cfg.total_bytes() as u32).step_by(4) {
            let (b, o) = address_to_bank(addr, &cfg).unwrap();
            assert!(seen.insert((b, o)));
            assert_eq!(bank_to_address(b, o, &cfg), addr);
        }
    }

    #[test]
    fn read_after_write_and_parallel_banks() {
        let mut m = Tcdm::new(TcdmConfig::default());
        m.bank_cycle(&[BankAccess::write(3, 7, 0xDEAD_BEEF, 0xF)]);
        let r = m.bank_cycle(&[BankAccess::read(3, 7), BankAccess::read(4, 7)]);
        assert_eq!(r, vec![Some(0xDEAD_BEEF), Some(0)]);
    }

    #[test]
    fn byte_enables_merge() {
        let mut m = Tcdm::new(TcdmConfig::default());
        m.write_word(0, 0x1122_3344).unwrap();
        m.bank_cycle(&[BankAccess::write(0, 0, 0xAABB_CCDD, 0b0101)]);
        assert_eq!(m.read_word(0).unwrap(), 0x11BB_33DD);
    }

    #[test]
    #[should_panic(expected = "granted twice")]
    fn double_grant_panics() {
        let mut m = Tcdm::new(TcdmConfig::default());
        m.bank_cycle(&[BankAccess::read(1, 0), BankAccess::read(1, 2)]);
    }

    #[test]
    fn fresh_memory_reads_zero() {
        let m = Tcdm::new(TcdmConfig::default());
        assert!(m.image().iter().all(|&b| b == 0));
    }

    #[test]
    fn byte_helpers_little_endian() {
        let mut m = Tcdm::new(TcdmConfig::default());
        m.write_bytes(5, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(m.read_word(4).unwrap(), 0x0302_0100);
        assert_eq!(m.read_bytes(5, 5).unwrap(), vec![1, 2, 3, 4, 5]);
        m.write_u16(10, 0xBEEF).unwrap();
        assert_eq!(m.read_u16(10).unwrap(), 0xBEEF);
    }
}
