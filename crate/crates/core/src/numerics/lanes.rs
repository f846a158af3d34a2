//! Packed low-bitwidth integer lanes inside a 32-bit word.
//!
//! Lane `e` of a word with precision `p` occupies bits `[e*p, (e+1)*p)`,
//! i.e. lane 0 sits in the least significant bits.

use std::fmt;

use crate::error::SimError;

/// Element precision of a SIMD lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Precision {
    B2,
    B4,
    B8,
    B16,
    B32,
}

impl Precision {
    pub const ALL: [Precision; 5] = [
        Precision::B2,
        Precision::B4,
        Precision::B8,
        Precision::B16,
        Precision::B32,
    ];

    pub fn bits(self) -> u32 {
        match self {
            Precision::B2 => 2,
            Precision::B4 => 4,
            Precision::B8 => 8,
            Precision::B16 => 16,
            Precision::B32 => 32,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self, SimError> {
        Ok(match bits {
            2 => Precision::B2,
            4 => Precision::B4,
            8 => Precision::B8,
            16 => Precision::B16,
            32 => Precision::B32,
            other => return Err(SimError::Config(format!("unsupported lane precision {other}"))),
        })
    }

    /// Number of lanes in a 32-bit word.
    pub fn lanes(self) -> usize {
        (32 / self.bits()) as usize
    }
}

/// Run-time lane format: precision plus signedness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LaneFormat {
    pub precision: Precision,
    pub signed: bool,
}

impl LaneFormat {
    pub const fn new(precision: Precision, signed: bool) -> Self {
        Self { precision, signed }
    }

    pub fn signed(precision: Precision) -> Self {
        Self::new(precision, true)
    }

    pub fn unsigned(precision: Precision) -> Self {
        Self::new(precision, false)
    }

    pub fn bits(&self) -> u32 {
        self.precision.bits()
    }

    pub fn lanes(&self) -> usize {
        self.precision.lanes()
    }

    /// Smallest and largest representable lane value.
    pub fn range(&self) -> (i64, i64) {
        let b = self.bits();
        if self.signed {
            (-(1i64 << (b - 1)), (1i64 << (b - 1)) - 1)
        } else {
            (0, (1i64 << b) - 1)
        }
    }

    /// Extend the low `bits` of `raw` to a 32-bit value.
    pub fn extend(&self, raw: u32) -> i32 {
        let b = self.bits();
        if b == 32 {
            return raw as i32;
        }
        let raw = raw & ((1u32 << b) - 1);
        if self.signed {
            let shift = 32 - b;
            ((raw << shift) as i32) >> shift
        } else {
            raw as i32
        }
    }
}

impl fmt::Display for LaneFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", if self.signed { 'i' } else { 'u' }, self.bits())
    }
}

impl std::str::FromStr for LaneFormat {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SimError::Parse(format!("bad lane format `{s}` (expected e.g. i8, u4)"));
        let (signed, rest) = match s.as_bytes().first() {
            Some(b'i') => (true, &s[1..]),
            Some(b'u') => (false, &s[1..]),
            _ => return Err(bad()),
        };
        let bits: u32 = rest.parse().map_err(|_| bad())?;
        Ok(LaneFormat::new(Precision::from_bits(bits).map_err(|_| bad())?, signed))
    }
}

/// A 32-bit register viewed as packed lanes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackedVector {
    pub word: u32,
    pub format: LaneFormat,
}

impl PackedVector {
    pub fn new(word: u32, format: LaneFormat) -> Self {
        Self { word, format }
    }

    /// Raw (unextended) bits of lane `e`.
    pub fn raw_lane(&self, e: usize) -> u32 {
        let b = self.format.bits();
        if b == 32 {
            return self.word;
        }
        (self.word >> (e as u32 * b)) & ((1u32 << b) - 1)
    }

    pub fn lane(&self, e: usize) -> i32 {
        self.format.extend(self.raw_lane(e))
    }

    pub fn unpack(&self) -> Vec<i32> {
        unpack_lanes(*self)
    }

    /// Pack lane values, truncating each to the lane width.
    pub fn pack(values: &[i32], format: LaneFormat) -> Self {
        assert_eq!(values.len(), format.lanes(), "lane count mismatch");
        let b = format.bits();
        let mut word = 0u32;
        for (e, &v) in values.iter().enumerate() {
            let mask = if b == 32 { u32::MAX } else { (1u32 << b) - 1 };
            word |= ((v as u32) & mask) << (e as u32 * b);
        }
        Self { word, format }
    }
}

pub fn unpack_lanes(v: PackedVector) -> Vec<i32> {
    (0..v.format.lanes()).map(|e| v.lane(e)).collect()
}

/// Reference sum-of-dot-products: `acc + Σ ext(a_i) * b_i` with 32-bit wraparound.
pub fn sdotp_scalar_oracle(a: PackedVector, b_lanes: &[i32], acc: i32) -> i32 {
    assert_eq!(b_lanes.len(), a.format.lanes(), "operand lane count mismatch");
    a.unpack()
        .iter()
        .zip(b_lanes)
        .fold(acc, |s, (&x, &y)| s.wrapping_add(x.wrapping_mul(y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_word_unpacks_to_zeros() {
        let v = PackedVector::new(0, LaneFormat::signed(Precision::B4));
        assert_eq!(v.unpack(), vec![0; 8]);
    }

    #[test]
    fn all_ones_two_bit_signed() {
        let v = PackedVector::new(u32::MAX, LaneFormat::signed(Precision::B2));
        assert_eq!(v.unpack(), vec![-1; 16]);
    }

    #[test]
    fn nibble_sign_extension() {
        let v = PackedVector::new(0xB7, LaneFormat::signed(Precision::B4));
        assert_eq!(v.unpack(), vec![7, -5, 0, 0, 0, 0, 0, 0]);
        let u = PackedVector::new(0xB7, LaneFormat::unsigned(Precision::B4));
        assert_eq!(u.unpack()[1], 11);
    }

    #[test]
    fn sdotp_examples() {
        let f8 = LaneFormat::signed(Precision::B8);
        assert_eq!(sdotp_scalar_oracle(PackedVector::new(0, f8), &[9, 9, 9, 9], 5), 5);
        let a = PackedVector::pack(&[1, 2, 3, 4], f8);
        assert_eq!(sdotp_scalar_oracle(a, &[1, 1, 1, 1], 0), 10);
    }

    #[test]
    fn format_parse_display() {
        let f: LaneFormat = "u4".parse().unwrap();
        assert_eq!(f, LaneFormat::unsigned(Precision::B4));
        assert_eq!(f.to_string(), "u4");
        assert!("i3".parse::<LaneFormat>().is_err());
    }

    fn any_format() -> impl Strategy<Value = LaneFormat> {
        (0usize..5, any::<bool>()).prop_map(|(p, s)| LaneFormat::new(Precision::ALL[p], s))
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(word in any::<u32>(), fmt in any_format()) {
            let v = PackedVector::new(word, fmt);
            prop_assert_eq!(PackedVector::pack(&v.unpack(), fmt), v);
        }

        #[test]
        fn sdotp_matches_wide_brute_force(
            word in any::<u32>(),
            b in proptest::collection::vec(any::<i32>(), 8),
            acc in any::<i32>(),
        ) {
            let a = PackedVector::new(word, LaneFormat::signed(Precision::B4));
            let mut wide = acc as i64;
            for e in 0..8 {
                // independent bit slicing
                let nib = ((word >> (4 * e)) & 0xF) as i64;
                let x = if nib >= 8 { nib - 16 } else { nib };
                wide += x * b[e] as i64;
            }
            let expected = (wide.rem_euclid(1i64 << 32)) as u32 as i32;
            prop_assert_eq!(sdotp_scalar_oracle(a, &b, acc), expected);
        }
    }
}
