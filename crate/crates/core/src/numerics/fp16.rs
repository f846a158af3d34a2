//! Software IEEE 754 binary16.
//!
//! All arithmetic goes through exact integer arithmetic followed by a single
//! round-to-nearest-even step, so results never depend on host floating point.

use std::fmt;

/// Raw binary16 bit pattern.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Fp16(pub u16);

const EXP_MASK: u16 = 0x7C00;
const FRAC_MASK: u16 = 0x03FF;
const SIGN_MASK: u16 = 0x8000;
/// Exponent of the least significant bit of a subnormal.
const MIN_QUANTUM: i32 = -24;

#[derive(Debug, Clone, Copy)]
enum Class {
    Nan,
    Inf(bool),
    /// value = (-1)^neg * mant * 2^exp
    Finite { neg: bool, mant: u32, exp: i32 },
}

impl Fp16 {
    pub const ZERO: Fp16 = Fp16(0);
    pub const NEG_ZERO: Fp16 = Fp16(0x8000);
    pub const ONE: Fp16 = Fp16(0x3C00);
    pub const INFINITY: Fp16 = Fp16(0x7C00);
    pub const NEG_INFINITY: Fp16 = Fp16(0xFC00);
    pub const NAN: Fp16 = Fp16(0x7E00);
    pub const MAX: Fp16 = Fp16(0x7BFF);

    pub fn from_bits(bits: u16) -> Self {
        Fp16(bits)
    }

    pub fn to_bits(self) -> u16 {
        self.0
    }

    pub fn is_nan(self) -> bool {
        self.0 & EXP_MASK == EXP_MASK && self.0 & FRAC_MASK != 0
    }

    pub fn is_infinite(self) -> bool {
        self.0 & 0x7FFF == EXP_MASK
    }

    pub fn is_sign_negative(self) -> bool {
        self.0 & SIGN_MASK != 0
    }

    fn classify(self) -> Class {
        let neg = self.is_sign_negative();
        let e = ((self.0 & EXP_MASK) >> 10) as i32;
        let f = (self.0 & FRAC_MASK) as u32;
        match e {
            31 if f != 0 => Class::Nan,
            31 => Class::Inf(neg),
            0 => Class::Finite { neg, mant: f, exp: MIN_QUANTUM },
            _ => Class::Finite { neg, mant: f | 0x400, exp: e - 25 },
        }
    }

    /// `self * b + c` with a single rounding.
    pub fn mul_add(self, b: Fp16, c: Fp16) -> Fp16 {
        fp16_fma(self, b, c)
    }

    pub fn add(self, other: Fp16) -> Fp16 {
        fp16_fma(self, Fp16::ONE, other)
    }

    pub fn mul(self, other: Fp16) -> Fp16 {
        // x*y + (-0) is exactly x*y rounded, sign of zero preserved
        fp16_fma(self, other, Fp16::NEG_ZERO)
    }

    pub fn neg(self) -> Fp16 {
        Fp16(self.0 ^ SIGN_MASK)
    }

    pub fn from_f64(x: f64) -> Fp16 {
        fp16_from_f64(x)
    }

    pub fn to_f64(self) -> f64 {
        fp16_to_f64(self)
    }
}

impl fmt::Debug for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp16({:#06x} = {})", self.0, self.to_f64())
    }
}

impl fmt::Display for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

/// Round `(-1)^neg * mag * 2^exp` (mag > 0) to binary16, nearest-even.
fn round_to_fp16(neg: bool, mag: u128, exp: i32) -> Fp16 {
    debug_assert!(mag != 0);
    let sign = if neg { SIGN_MASK } else { 0 };
    let msb = 127 - mag.leading_zeros() as i32;
    let top = msb + exp;
    if top > 15 {
        return Fp16(sign | EXP_MASK);
    }
    let mut quantum = (top - 10).max(MIN_QUANTUM);
    let shift = quantum - exp;
    let mut m: u128 = if shift <= 0 {
        mag << (-shift) as u32
    } else if shift > msb + 1 {
        // below half of the smallest subnormal
        0
    } else {
        let shift = shift as u32;
        let kept = if shift >= 128 { 0 } else { mag >> shift };
        let rem = mag & ((1u128 << shift) - 1);
        let half = 1u128 << (shift - 1);
        if rem > half || (rem == half && kept & 1 == 1) {
            kept + 1
        } else {
            kept
        }
    };
    if m == 0x800 {
        m = 0x400;
        quantum += 1;
    }
    if m >= 0x400 {
        let biased = quantum + 25;
        if biased >= 31 {
            return Fp16(sign | EXP_MASK);
        }
        Fp16(sign | ((biased as u16) << 10) | ((m - 0x400) as u16))
    } else {
        Fp16(sign | m as u16)
    }
}

/// Fused multiply-add `a*b + c`, one rounding, round-to-nearest-even.
pub fn fp16_fma(a: Fp16, b: Fp16, c: Fp16) -> Fp16 {
    use Class::*;
    let (ca, cb, cc) = (a.classify(), b.classify(), c.classify());
    if matches!(ca, Nan) || matches!(cb, Nan) || matches!(cc, Nan) {
        return Fp16::NAN;
    }
    let zero = |k: Class| matches!(k, Finite { mant: 0, .. });
    let sign_of = |k: Class| match k {
        Inf(n) => n,
        Finite { neg, .. } => neg,
        Nan => false,
    };
    let prod_neg = sign_of(ca) ^ sign_of(cb);
    let prod_inf = matches!(ca, Inf(_)) || matches!(cb, Inf(_));
    if prod_inf {
        if zero(ca) || zero(cb) {
            return Fp16::NAN;
        }
        if let Inf(cn) = cc {
            if cn != prod_neg {
                return Fp16::NAN;
            }
        }
        return if prod_neg { Fp16::NEG_INFINITY } else { Fp16::INFINITY };
    }
    if let Inf(_) = cc {
        return c;
    }
    let (Finite { mant: ma, exp: ea, .. }, Finite { mant: mb, exp: eb, .. }, Finite { neg: cn, mant: mc, exp: ec }) =
        (ca, cb, cc)
    else {
        unreachable!()
    };
    let pm = ma as u128 * mb as u128;
    let pe = ea + eb;
    if pm == 0 && mc == 0 {
        return if prod_neg && cn { Fp16::NEG_ZERO } else { Fp16::ZERO };
    }
    let base = pe.min(ec);
    let p = (pm << (pe - base) as u32) as i128;
    let q = ((mc as u128) << (ec - base) as u32) as i128;
    let sum = if prod_neg { -p } else { p } + if cn { -q } else { q };
    if sum == 0 {
        return Fp16::ZERO;
    }
    round_to_fp16(sum < 0, sum.unsigned_abs(), base)
}

pub fn fp16_from_f64(x: f64) -> Fp16 {
    if x.is_nan() {
        return Fp16::NAN;
    }
    let neg = x.is_sign_negative();
    if x.is_infinite() {
        return if neg { Fp16::NEG_INFINITY } else { Fp16::INFINITY };
    }
    if x == 0.0 {
        return if neg { Fp16::NEG_ZERO } else { Fp16::ZERO };
    }
    let bits = x.to_bits();
    let e = ((bits >> 52) & 0x7FF) as i32;
    let f = bits & ((1u64 << 52) - 1);
    let (mant, exp) = if e == 0 { (f, -1074) } else { (f | (1u64 << 52), e - 1075) };
    round_to_fp16(neg, mant as u128, exp)
}

pub fn fp16_to_f64(h: Fp16) -> f64 {
    match h.classify() {
        Class::Nan => f64::NAN,
        Class::Inf(n) => {
            if n {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            }
        }
        Class::Finite { neg, mant, exp } => {
            let v = mant as f64 * (2f64).powi(exp);
            if neg {
                -v
            } else {
                v
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(x: f64) -> Fp16 {
        Fp16::from_f64(x)
    }

    #[test]
    fn exact_small_integers() {
        assert_eq!(fp16_fma(h(1.0), h(1.0), h(1.0)), h(2.0));
        assert_eq!(h(2.0).to_f64(), 2.0);
        assert_eq!(h(3.0).mul(h(5.0)), h(15.0));
        assert_eq!(h(0.5).add(h(0.25)), h(0.75));
    }

    #[test]
    fn zero_annihilates_product() {
        for (x, c) in [(3.5, 7.0), (-100.0, 0.125), (65504.0, -2.0)] {
            assert_eq!(fp16_fma(h(x), Fp16::ZERO, h(c)), h(c));
        }
    }

    #[test]
    fn conversion_edges() {
        assert_eq!(h(0.0), Fp16::ZERO);
        assert_eq!(h(-0.0), Fp16::NEG_ZERO);
        assert_eq!(h(65536.0), Fp16::INFINITY);
        assert_eq!(h(65504.0), Fp16::MAX);
        // halfway between MAX and 2^16 rounds to even, i.e. up to infinity
        assert_eq!(h(65520.0), Fp16::INFINITY);
        assert_eq!(h(65519.0), Fp16::MAX);
        // smallest subnormal and its halfway point
        assert_eq!(h(2f64.powi(-24)), Fp16(1));
        assert_eq!(h(2f64.powi(-25)), Fp16::ZERO);
        assert_eq!(h(1.5 * 2f64.powi(-25)), Fp16(1));
        assert_eq!(h(1.0 / 3.0), Fp16(0x3555));
    }

    #[test]
    fn special_values() {
        assert!(fp16_fma(Fp16::INFINITY, Fp16::ZERO, Fp16::ONE).is_nan());
        assert!(fp16_fma(Fp16::INFINITY, Fp16::ONE, Fp16::NEG_INFINITY).is_nan());
        assert_eq!(fp16_fma(Fp16::INFINITY, Fp16::ONE, Fp16::INFINITY), Fp16::INFINITY);
        assert_eq!(fp16_fma(Fp16::ONE, Fp16::ONE, Fp16::NEG_INFINITY), Fp16::NEG_INFINITY);
        assert!(fp16_fma(Fp16::NAN, Fp16::ONE, Fp16::ONE).is_nan());
        assert_eq!(fp16_fma(Fp16::NEG_ZERO, Fp16::ONE, Fp16::NEG_ZERO), Fp16::NEG_ZERO);
        assert_eq!(fp16_fma(Fp16::NEG_ZERO, Fp16::ONE, Fp16::ZERO), Fp16::ZERO);
        assert_eq!(fp16_fma(Fp16::ONE, Fp16::ONE, h(-1.0)), Fp16::ZERO);
        assert_eq!(fp16_fma(Fp16::MAX, h(2.0), Fp16::ZERO), Fp16::INFINITY);
    }

    #[test]
    fn round_trip_all_finite_patterns() {
        for bits in 0u16..=u16::MAX {
            let x = Fp16(bits);
            if x.is_nan() {
                continue;
            }
            assert_eq!(Fp16::from_f64(x.to_f64()), x, "{bits:#x}");
        }
    }

    #[test]
    fn underflow_keeps_sign() {
        let tiny = Fp16(1);
        assert_eq!(fp16_fma(tiny.neg(), h(0.25), Fp16::ZERO), Fp16::NEG_ZERO);
    }
}
