//! binary16 FMA against exact rational arithmetic.

use std::sync::OnceLock;

use hetsim::numerics::{fp16_fma, Fp16};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use proptest::prelude::*;

fn pow2(e: i32) -> BigRational {
    let two = BigRational::from_integer(BigInt::from(2));
    if e >= 0 {
        num_traits::pow(two, e as usize)
    } else {
        BigRational::one() / num_traits::pow(two, (-e) as usize)
    }
}

/// Exact value of a finite pattern, decoded from the field layout.
fn exact(h: u16) -> BigRational {
    let e = ((h >> 10) & 0x1F) as i32;
    let f = (h & 0x3FF) as i64;
    let mag = if e == 0 { BigRational::from_integer(f.into()) * pow2(-24) } else { BigRational::from_integer((1024 + f).into()) * pow2(e - 25) };
    if h & 0x8000 != 0 {
        -mag
    } else {
        mag
    }
}

/// All non-negative finite values, ascending by bit pattern.
fn ladder() -> &'static [BigRational] {
    static L: OnceLock<Vec<BigRational>> = OnceLock::new();
    L.get_or_init(|| (0u16..=0x7BFF).map(exact).collect())
}

/// Round-to-nearest-even of a nonzero rational.
fn round(x: &BigRational) -> u16 {
    let sign = if x.is_negative() { 0x8000 } else { 0 };
    let a = x.abs();
    let l = ladder();
    let i = l.partition_point(|v| v <= &a) - 1;
    if i == l.len() - 1 {
        // halfway to 2^16 is the overflow threshold and ties to infinity
        let limit = BigRational::from_integer(65520.into());
        return sign | if a >= limit { 0x7C00 } else { 0x7BFF };
    }
    let (lo, hi) = (&l[i], &l[i + 1]);
    let (dl, dh) = (&a - lo, hi - &a);
    let pick = if dl < dh || (dl == dh && i % 2 == 0) { i } else { i + 1 };
    sign | pick as u16
}

fn reference(a: u16, b: u16, c: u16) -> u16 {
    let p = exact(a) * exact(b);
    let s = &p + exact(c);
    if s.is_zero() {
        let pneg = (a ^ b) & 0x8000 != 0;
        let cneg = c & 0x8000 != 0;
        return if p.is_zero() && pneg && cneg { 0x8000 } else { 0 };
    }
    round(&s)
}

fn finite() -> impl Strategy<Value = u16> {
    prop_oneof![
        any::<u16>().prop_filter("finite", |h| h & 0x7C00 != 0x7C00),
        // clustered exponents make cancellation and subnormal results common
        (any::<bool>(), 10u16..20, 0u16..0x400).prop_map(|(s, e, f)| (s as u16) << 15 | e << 10 | f),
        (any::<bool>(), 0u16..3, 0u16..0x400).prop_map(|(s, e, f)| (s as u16) << 15 | e << 10 | f),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn fma_matches_rational(a in finite(), b in finite(), c in finite()) {
        let got = fp16_fma(Fp16(a), Fp16(b), Fp16(c)).to_bits();
        prop_assert_eq!(got, reference(a, b, c), "{:#06x} * {:#06x} + {:#06x}", a, b, c);
    }

    #[test]
    fn conversion_matches_rational(x in any::<f64>().prop_filter("finite nonzero", |x| x.is_finite() && *x != 0.0)) {
        let r = BigRational::from_float(x).unwrap();
        prop_assert_eq!(Fp16::from_f64(x).to_bits(), round(&r));
    }
}

#[test]
fn fused_differs_from_mul_then_add() {
    // (1 + 2^-10)^2 - (1 + 2^-9) = 2^-20 exactly; the unfused product rounds it away
    let a = Fp16(0x3C01);
    let c = Fp16(0xBC02);
    assert_eq!(reference(a.0, a.0, c.0), 0x0010);
    assert_eq!(fp16_fma(a, a, c), Fp16(0x0010));
    assert_eq!(a.mul(a).add(c), Fp16::ZERO);
}

#[test]
fn ties_round_to_even() {
    // 1 + 2^-11 sits halfway between 1 and its successor
    let one = 0x3C00;
    let half_ulp = 0x1000;
    assert_eq!(reference(one, half_ulp, one), one);
    assert_eq!(fp16_fma(Fp16(one), Fp16(half_ulp), Fp16(one)).0, one);
    assert_eq!(fp16_fma(Fp16(0x3C01), Fp16(one), Fp16(half_ulp)).0, 0x3C02);
}
