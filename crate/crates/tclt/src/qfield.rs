//! Exact arithmetic in a real quadratic field ℚ(√d).
//!
//! A [`Surd`] is `(p + q√d)/r` with big-integer components. Rationals are the
//! `q = 0` case and always carry `d = 0`, so they mix freely with any field.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FieldError {
    #[error("radicand {0} is not squarefree")]
    NotSquarefree(u64),
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("incompatible radicands {0} and {1}")]
    MixedRadicand(u64, u64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("bad literal `{0}`: {1}")]
    Literal(String, String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Surd {
    p: BigInt,
    q: BigInt,
    r: BigInt,
    d: u64,
}

pub fn is_squarefree(d: u64) -> bool {
    if d < 4 {
        return true;
    }
    let mut i: u64 = 2;
    while i.saturating_mul(i) <= d {
        if d.is_multiple_of(i * i) {
            return false;
        }
        i += 1;
    }
    true
}

impl Surd {
    /// `(p + q√d)/r` in canonical form.
    pub fn new(
        p: impl Into<BigInt>,
        q: impl Into<BigInt>,
        r: impl Into<BigInt>,
        d: u64,
    ) -> Result<Surd, FieldError> {
        if !is_squarefree(d) {
            return Err(FieldError::NotSquarefree(d));
        }
        let r = r.into();
        if r.is_zero() {
            return Err(FieldError::ZeroDenominator);
        }
        Ok(Surd::canonical(p.into(), q.into(), r, d))
    }

    // caller guarantees r != 0 and d squarefree
    fn canonical(mut p: BigInt, mut q: BigInt, mut r: BigInt, mut d: u64) -> Surd {
        match d {
            0 => q.set_zero(),
            1 => {
                p += &q;
                q.set_zero();
            }
            _ => {}
        }
        if q.is_zero() {
            d = 0;
        }
        if r.is_negative() {
            p = -p;
            q = -q;
            r = -r;
        }
        let g = p.gcd(&q).gcd(&r);
        if !g.is_one() {
            p /= &g;
            q /= &g;
            r /= &g;
        }
        Surd { p, q, r, d }
    }

    pub fn rational(p: impl Into<BigInt>, r: impl Into<BigInt>) -> Result<Surd, FieldError> {
        Surd::new(p, 0, r, 0)
    }

    pub fn int(n: impl Into<BigInt>) -> Surd {
        Surd::canonical(n.into(), BigInt::zero(), BigInt::one(), 0)
    }

    pub fn zero() -> Surd {
        Surd::int(0)
    }

    pub fn one() -> Surd {
        Surd::int(1)
    }

    pub fn p(&self) -> &BigInt {
        &self.p
    }

    pub fn q(&self) -> &BigInt {
        &self.q
    }

    pub fn r(&self) -> &BigInt {
        &self.r
    }

    pub fn d(&self) -> u64 {
        self.d
    }

    pub fn is_rational(&self) -> bool {
        self.q.is_zero()
    }

    pub fn is_zero(&self) -> bool {
        self.p.is_zero() && self.q.is_zero()
    }

    fn radicand(&self, other: &Surd) -> Result<u64, FieldError> {
        match (self.d, other.d) {
            (a, b) if a == b => Ok(a),
            (0, b) => Ok(b),
            (a, 0) => Ok(a),
            (a, b) => Err(FieldError::MixedRadicand(a, b)),
        }
    }

    pub fn compatible(&self, other: &Surd) -> bool {
        self.radicand(other).is_ok()
    }

    pub fn arith(&self, other: &Surd, op: Op) -> Result<Surd, FieldError> {
        let d = self.radicand(other)?;
        let (a, b) = (self, other);
        let out = match op {
            Op::Add | Op::Sub => {
                let (p2, q2) = if op == Op::Add {
                    (b.p.clone(), b.q.clone())
                } else {
                    (-&b.p, -&b.q)
                };
                Surd::canonical(
                    &a.p * &b.r + p2 * &a.r,
                    &a.q * &b.r + q2 * &a.r,
                    &a.r * &b.r,
                    d,
                )
            }
            Op::Mul => Surd::canonical(
                &a.p * &b.p + &a.q * &b.q * d,
                &a.p * &b.q + &a.q * &b.p,
                &a.r * &b.r,
                d,
            ),
            Op::Div => return a.arith(&b.recip()?, Op::Mul),
        };
        Ok(out)
    }

    pub fn recip(&self) -> Result<Surd, FieldError> {
        if self.is_zero() {
            return Err(FieldError::DivisionByZero);
        }
        // r/(p+q√d) = r(p-q√d)/(p²-q²d); the norm vanishes only at zero
        let norm = &self.p * &self.p - &self.q * &self.q * self.d;
        Ok(Surd::canonical(
            &self.r * &self.p,
            -(&self.r * &self.q),
            norm,
            self.d,
        ))
    }

    pub fn signum(&self) -> i32 {
        let sp = sign_of(&self.p);
        let sq = sign_of(&self.q);
        if sq == 0 {
            return sp;
        }
        if sp == 0 || sp == sq {
            return sq;
        }
        let pp = &self.p * &self.p;
        let qq = &self.q * &self.q * self.d;
        match pp.cmp(&qq) {
            Ordering::Greater => sp,
            Ordering::Less => sq,
            Ordering::Equal => unreachable!("√d irrational"),
        }
    }

    pub fn try_cmp(&self, other: &Surd) -> Result<Ordering, FieldError> {
        let diff = self.arith(other, Op::Sub)?;
        Ok(diff.signum().cmp(&0))
    }

    pub fn abs(&self) -> Surd {
        if self.signum() < 0 {
            -self
        } else {
            self.clone()
        }
    }

    /// floor((p + q√d)/r), exact.
    pub fn floor(&self) -> BigInt {
        floor_parts(&self.p, &self.q, &self.r, self.d)
    }

    pub fn frac(&self) -> Surd {
        self - &Surd::int(self.floor())
    }

    /// `floor(value · 2^frac_bits)` and its error bound in units of `2^-frac_bits`.
    pub fn to_fixed(&self, frac_bits: u32) -> Fixed {
        let p = &self.p << frac_bits as usize;
        let q = &self.q << frac_bits as usize;
        let mantissa = floor_parts(&p, &q, &self.r, self.d);
        let exact = self.q.is_zero() && p.is_multiple_of(&self.r);
        Fixed {
            mantissa,
            frac_bits,
            error_ulps: if exact { 0 } else { 1 },
        }
    }

    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let scale = |v: &BigInt| v.bits() as i64;
        let top = scale(&self.p).max(scale(&self.q) + (64 - self.d.leading_zeros() as i64) / 2);
        let mut k = 64 - top + scale(&self.r);
        loop {
            let m = if k >= 0 {
                floor_parts(
                    &(&self.p << k as usize),
                    &(&self.q << k as usize),
                    &self.r,
                    self.d,
                )
            } else {
                floor_parts(&self.p, &self.q, &(&self.r << (-k) as usize), self.d)
            };
            let bits = m.bits() as i64;
            if bits >= 60 || (m.is_zero() && k > 4096) {
                let f = m.to_f64().unwrap_or(f64::NAN);
                return f * 2f64.powi(-(k as i32));
            }
            k += 62 - bits.max(0);
        }
    }

    /// Canonical text literal, `rat:p/r` or `surd:d:p:q:r`.
    pub fn literal(&self) -> String {
        if self.is_rational() {
            format!("rat:{}/{}", self.p, self.r)
        } else {
            format!("surd:{}:{}:{}:{}", self.d, self.p, self.q, self.r)
        }
    }
}

fn sign_of(v: &BigInt) -> i32 {
    if v.is_positive() {
        1
    } else if v.is_negative() {
        -1
    } else {
        0
    }
}

fn floor_parts(p: &BigInt, q: &BigInt, r: &BigInt, d: u64) -> BigInt {
    // with s = ⌊√(q²d)⌋ the numerator lies in (p+s, p+s+1) for q>0, (p-s-1, p-s) for q<0
    let num_floor = if q.is_zero() {
        p.clone()
    } else {
        let s = (q * q * d).sqrt();
        if q.is_positive() {
            p + s
        } else {
            p - s - 1
        }
    };
    num_floor.div_floor(r)
}

/// A fixed-point approximation `mantissa · 2^-frac_bits` of a real value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fixed {
    pub mantissa: BigInt,
    pub frac_bits: u32,
    /// `|approx − value| ≤ error_ulps · 2^-frac_bits`
    pub error_ulps: u32,
}

impl Fixed {
    pub fn to_f64(&self) -> f64 {
        self.mantissa.to_f64().unwrap_or(f64::NAN) * 2f64.powi(-(self.frac_bits as i32))
    }
}

impl Ord for Surd {
    fn cmp(&self, other: &Self) -> Ordering {
        self.try_cmp(other).expect("comparison across radicands")
    }
}

impl PartialOrd for Surd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Neg for &Surd {
    type Output = Surd;
    fn neg(self) -> Surd {
        Surd {
            p: -&self.p,
            q: -&self.q,
            r: self.r.clone(),
            d: self.d,
        }
    }
}

impl Neg for Surd {
    type Output = Surd;
    fn neg(self) -> Surd {
        -&self
    }
}

macro_rules! binop {
    ($tr:ident, $f:ident, $op:expr) => {
        impl $tr<&Surd> for &Surd {
            type Output = Surd;
            fn $f(self, rhs: &Surd) -> Surd {
                match self.arith(rhs, $op) {
                    Ok(v) => v,
                    Err(e) => panic!("{e}"),
                }
            }
        }
        impl $tr<Surd> for Surd {
            type Output = Surd;
            fn $f(self, rhs: Surd) -> Surd {
                (&self).$f(&rhs)
            }
        }
        impl $tr<&Surd> for Surd {
            type Output = Surd;
            fn $f(self, rhs: &Surd) -> Surd {
                (&self).$f(rhs)
            }
        }
        impl $tr<Surd> for &Surd {
            type Output = Surd;
            fn $f(self, rhs: Surd) -> Surd {
                self.$f(&rhs)
            }
        }
    };
}

binop!(Add, add, Op::Add);
binop!(Sub, sub, Op::Sub);
binop!(Mul, mul, Op::Mul);
binop!(Div, div, Op::Div);

impl From<i64> for Surd {
    fn from(n: i64) -> Surd {
        Surd::int(n)
    }
}

impl fmt::Display for Surd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.literal())
    }
}

impl std::iter::Sum for Surd {
    fn sum<I: Iterator<Item = Surd>>(iter: I) -> Surd {
        iter.fold(Surd::zero(), |acc, x| acc + x)
    }
}

impl<'a> std::iter::Sum<&'a Surd> for Surd {
    fn sum<I: Iterator<Item = &'a Surd>>(iter: I) -> Surd {
        iter.fold(Surd::zero(), |acc, x| acc + x)
    }
}

/// A parsed number literal; `inalpha` needs the experiment's α to resolve.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Literal {
    Value(Surd),
    InAlpha { u: Surd, v: Surd },
}

impl Literal {
    pub fn resolve(&self, alpha: &Surd) -> Result<Surd, FieldError> {
        match self {
            Literal::Value(s) => Ok(s.clone()),
            Literal::InAlpha { u, v } => u.arith(&v.arith(alpha, Op::Mul)?, Op::Add),
        }
    }

    pub fn value(&self) -> Option<&Surd> {
        match self {
            Literal::Value(s) => Some(s),
            Literal::InAlpha { .. } => None,
        }
    }
}

fn parse_int(s: &str, whole: &str) -> Result<BigInt, FieldError> {
    BigInt::from_str(s).map_err(|_| FieldError::Literal(whole.into(), format!("`{s}` is not an integer")))
}

fn parse_ratio(s: &str, whole: &str) -> Result<Surd, FieldError> {
    let (p, r) = s
        .split_once('/')
        .ok_or_else(|| FieldError::Literal(whole.into(), "expected p/r".into()))?;
    Surd::rational(parse_int(p, whole)?, parse_int(r, whole)?)
}

impl FromStr for Literal {
    type Err = FieldError;

    fn from_str(s: &str) -> Result<Literal, FieldError> {
        let bad = |why: &str| FieldError::Literal(s.into(), why.into());
        let (kind, rest) = s.split_once(':').ok_or_else(|| bad("missing kind prefix"))?;
        match kind {
            "rat" => Ok(Literal::Value(parse_ratio(rest, s)?)),
            "surd" => {
                let parts: Vec<&str> = rest.split(':').collect();
                if parts.len() != 4 {
                    return Err(bad("expected surd:d:p:q:r"));
                }
                let d: u64 = parts[0].parse().map_err(|_| bad("radicand must be a non-negative integer"))?;
                let p = parse_int(parts[1], s)?;
                let q = parse_int(parts[2], s)?;
                let r = parse_int(parts[3], s)?;
                Ok(Literal::Value(Surd::new(p, q, r, d)?))
            }
            "inalpha" => {
                let (u, v) = rest.split_once(':').ok_or_else(|| bad("expected inalpha:up/ur:vp/vr"))?;
                Ok(Literal::InAlpha {
                    u: parse_ratio(u, s)?,
                    v: parse_ratio(v, s)?,
                })
            }
            _ => Err(bad("unknown kind")),
        }
    }
}

impl FromStr for Surd {
    type Err = FieldError;

    fn from_str(s: &str) -> Result<Surd, FieldError> {
        match s.parse::<Literal>()? {
            Literal::Value(v) => Ok(v),
            Literal::InAlpha { .. } => Err(FieldError::Literal(s.into(), "needs α to resolve".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(p: i64, q: i64, r: i64, d: u64) -> Surd {
        Surd::new(p, q, r, d).unwrap()
    }

    #[test]
    fn construction() {
        let g = s(-1, 1, 2, 5);
        assert_eq!((g.p().clone(), g.q().clone(), g.r().clone(), g.d()), (BigInt::from(-1), BigInt::from(1), BigInt::from(2), 5));
        assert_eq!(s(2, 0, 4, 0), Surd::rational(1, 2).unwrap());
        assert_eq!(s(2, 0, 4, 0).d(), 0);
        assert_eq!(Surd::new(0, 1, 1, 8), Err(FieldError::NotSquarefree(8)));
        assert_eq!(Surd::new(1, 1, 0, 2), Err(FieldError::ZeroDenominator));
        assert_eq!(s(1, 1, -2, 2), s(-1, -1, 2, 2));
        assert_eq!(s(3, 2, 1, 1), Surd::int(5));
    }

    #[test]
    fn arithmetic_examples() {
        assert_eq!(s(-1, 1, 2, 5) * s(1, 1, 2, 5), Surd::one());
        assert_eq!(s(-1, 1, 1, 2) + Surd::one(), s(0, 1, 1, 2));
        let q = Surd::one() / s(0, 1, 2, 2);
        assert_eq!(q, s(0, 1, 1, 2));
        assert_eq!(&q * &q, Surd::int(2));
        assert_eq!(s(0, 1, 1, 2).arith(&s(0, 1, 1, 3), Op::Add), Err(FieldError::MixedRadicand(2, 3)));
        assert_eq!(Surd::one().arith(&Surd::zero(), Op::Div), Err(FieldError::DivisionByZero));
    }

    #[test]
    fn comparisons() {
        assert_eq!(s(-1, 1, 2, 5).cmp(&Surd::rational(1, 2).unwrap()), Ordering::Greater);
        assert_eq!(s(-1, 1, 1, 2).cmp(&Surd::rational(1, 2).unwrap()), Ordering::Less);
        let x = s(7, -3, 5, 13);
        assert_eq!(x.cmp(&x), Ordering::Equal);
    }

    #[test]
    fn floors() {
        assert_eq!(s(0, 1, 1, 2).floor(), BigInt::from(1));
        assert_eq!(Surd::rational(7, 2).unwrap().floor(), BigInt::from(3));
        assert_eq!(s(1, -1, 1, 2).floor(), BigInt::from(-1));
        assert_eq!(Surd::rational(-7, 2).unwrap().floor(), BigInt::from(-4));
    }

    #[test]
    fn fixed_point() {
        let h = Surd::rational(1, 2).unwrap().to_fixed(64);
        assert_eq!(h.mantissa, BigInt::one() << 63usize);
        assert_eq!(h.error_ulps, 0);
        // oracle: ⌊√(2·2^128)⌋ / 2 = ⌊√2 · 2^64⌋ / 2 within one unit
        let f = s(0, 1, 2, 2).to_fixed(64);
        let root = (BigInt::from(2) << 128usize).sqrt();
        assert!((&f.mantissa - (&root >> 1usize)).abs() <= BigInt::one());
        assert_eq!(f.error_ulps, 1);
        assert!((f.to_f64() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let g = s(-1, 1, 2, 5).to_fixed(128);
        let root5 = (BigInt::from(5) << 256usize).sqrt();
        let oracle = (root5 - (BigInt::one() << 128usize)) >> 1usize;
        assert!((&g.mantissa - oracle).abs() <= BigInt::one());
    }

    #[test]
    fn f64_without_cancellation() {
        // (1+√2)^40 − its nearest integer is tiny; naive evaluation loses it all
        let mut x = Surd::one();
        let unit = s(1, 1, 1, 2);
        for _ in 0..40 {
            x = &x * &unit;
        }
        let tiny = &x - &Surd::int(x.floor() + 1);
        let v = tiny.to_f64();
        let conj = (std::f64::consts::SQRT_2 - 1.0).powi(40);
        assert!(((v + conj) / conj).abs() < 1e-12, "{v} vs {conj}");
    }

    #[test]
    fn literals_round_trip() {
        for lit in ["rat:3/7", "surd:2:-1:1:1", "surd:5:-1:1:2", "rat:0/1"] {
            let v: Surd = lit.parse().unwrap();
            assert_eq!(v.literal().parse::<Surd>().unwrap(), v);
        }
        assert_eq!("rat:0/1".parse::<Surd>().unwrap().literal(), "rat:0/1");
        let alpha: Surd = "surd:2:-1:1:1".parse().unwrap();
        let lit: Literal = "inalpha:1/1:1/1".parse().unwrap();
        assert_eq!(lit.resolve(&alpha).unwrap(), s(0, 1, 1, 2));
        assert!("surd:8:0:1:1".parse::<Surd>().is_err());
        assert!("rat:1/0".parse::<Surd>().is_err());
        assert!("pi".parse::<Surd>().is_err());
    }

    fn arb(d: u64) -> impl Strategy<Value = Surd> {
        (-50i64..50, -50i64..50, 1i64..30).prop_map(move |(p, q, r)| Surd::new(p, q, r, d).unwrap())
    }

    proptest! {
        #[test]
        fn field_axioms(a in arb(7), b in arb(7), c in arb(7)) {
            prop_assert_eq!(&(&a + &b) + &c, &a + &(&b + &c));
            prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
            prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
            prop_assert_eq!(&a - &a, Surd::zero());
            if !a.is_zero() {
                prop_assert_eq!(&a * &a.recip().unwrap(), Surd::one());
            }
        }

        #[test]
        fn compare_agrees_with_decimal(a in arb(3), b in arb(3)) {
            let diff = &a - &b;
            let fx = diff.to_fixed(64);
            let bound = BigInt::from(fx.error_ulps);
            let sign = if fx.mantissa > bound { 1 } else if fx.mantissa < -bound - 1 { -1 } else { 0 };
            if sign != 0 {
                prop_assert_eq!(a.cmp(&b), sign.cmp(&0));
            }
        }

        #[test]
        fn floor_brackets(a in arb(11)) {
            let f = Surd::int(a.floor());
            prop_assert!(f <= a);
            prop_assert!(a < &f + &Surd::one());
        }

        #[test]
        fn fixed_error_bound(a in arb(13), bits in 32u32..160) {
            let fx = a.to_fixed(bits);
            let approx = Surd::new(fx.mantissa.clone(), 0, BigInt::one() << bits as usize, 0).unwrap();
            let err = (&approx - &a).abs();
            let ulp = Surd::new(1, 0, BigInt::one() << bits as usize, 0).unwrap();
            prop_assert!(err <= &ulp * &Surd::int(fx.error_ulps as i64));
        }

        #[test]
        fn f64_close(a in arb(6)) {
            let v = a.to_f64();
            let naive = a.p().to_f64().unwrap() / a.r().to_f64().unwrap()
                + a.q().to_f64().unwrap() * (a.d() as f64).sqrt() / a.r().to_f64().unwrap();
            prop_assert!((v - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
        }
    }
}
