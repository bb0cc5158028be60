//! Exact rationals, outward-rounded f64 intervals and probabilities that may be either.

use alloc::string::String;
use core::cmp::Ordering;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};
use core::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{One, Pow, Signed, ToPrimitive, Zero};

pub type Rational = num_rational::BigRational;

pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn big(n: u64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse `{0}` as a rational")]
pub struct ParseRationalError(pub String);

/// Accepts `a`, `a/b` and finite decimals such as `-0.125`.
pub fn parse_rational(text: &str) -> Result<Rational, ParseRationalError> {
    let t = text.trim();
    let err = || ParseRationalError(t.into());
    if let Some((n, d)) = t.split_once('/') {
        let n = BigInt::from_str(n.trim()).map_err(|_| err())?;
        let d = BigInt::from_str(d.trim()).map_err(|_| err())?;
        if d.is_zero() {
            return Err(err());
        }
        return Ok(Rational::new(n, d));
    }
    if let Some((whole, frac)) = t.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let negative = whole.starts_with('-');
        let whole_digits = whole.trim_start_matches(['-', '+']);
        let digits = alloc::format!("{}{}", if whole_digits.is_empty() { "0" } else { whole_digits }, frac);
        let n = BigInt::from_str(&digits).map_err(|_| err())?;
        let d = BigInt::from(10u32).pow(frac.len() as u32);
        let r = Rational::new(n, d);
        return Ok(if negative { -r } else { r });
    }
    BigInt::from_str(t).map(Rational::from_integer).map_err(|_| err())
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| if r.is_negative() { f64::NEG_INFINITY } else { f64::INFINITY })
}

/// Smallest integer m with m >= n^p for a non-negative rational exponent p.
pub fn ceil_pow(n: u64, p: &Ratio<i64>) -> u64 {
    assert!(*p.numer() >= 0 && *p.denom() > 0, "exponent must be non-negative");
    if p.is_zero() || n <= 1 {
        return 1;
    }
    let (a, b) = (*p.numer() as u32, *p.denom() as u32);
    let target = BigUint::from(n).pow(a);
    let guess = libm::pow(n as f64, a as f64 / b as f64);
    let mut m = if guess.is_finite() && guess < 1.8e19 { libm::ceil(guess) as u64 } else { u64::MAX / 2 };
    let reaches = |m: u64| BigUint::from(m).pow(b) >= target;
    while !reaches(m) {
        m += 1;
    }
    while m > 1 && reaches(m - 1) {
        m -= 1;
    }
    m
}

pub fn floor_log2(n: u64) -> u32 {
    63 - n.leading_zeros()
}

pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 { 0 } else { floor_log2(n - 1) + 1 }
}

/// Closed f64 interval; every operation rounds outward so the true value stays inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    /// Encloses a value known only to about one ulp, such as a libm result.
    pub fn around(x: f64) -> Self {
        Interval { lo: x.next_down().next_down(), hi: x.next_up().next_up() }
    }

    pub fn from_rational(r: &Rational) -> Self {
        let x = to_f64(r);
        let mut lo = x.next_down();
        let mut hi = x.next_up();
        if r.is_zero() {
            lo = 0.0;
            hi = 0.0;
        } else if r.is_integer() && x.abs() < 9.0e15 {
            lo = x;
            hi = x;
        }
        Interval { lo, hi }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn mid(&self) -> f64 {
        self.lo * 0.5 + self.hi * 0.5
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn clamp_unit(&self) -> Interval {
        Interval { lo: self.lo.clamp(0.0, 1.0), hi: self.hi.clamp(0.0, 1.0) }
    }

    fn outward(lo: f64, hi: f64) -> Self {
        Interval { lo: lo.next_down(), hi: hi.next_up() }
    }

    /// Natural log; the interval must lie in (0, inf).
    pub fn ln(&self) -> Interval {
        assert!(self.lo > 0.0, "ln of non-positive interval");
        let lo = libm::log(self.lo).next_down().next_down();
        let hi = libm::log(self.hi).next_up().next_up();
        Interval { lo, hi }
    }

    pub fn exp(&self) -> Interval {
        let lo = libm::exp(self.lo).next_down().next_down().max(0.0);
        let hi = libm::exp(self.hi).next_up().next_up();
        Interval { lo, hi }
    }

    /// ln(1 - x) for x in [0, 1).
    pub fn ln_one_minus(&self) -> Interval {
        assert!(self.hi < 1.0 && self.lo >= 0.0, "ln(1-x) needs x in [0,1)");
        let lo = libm::log1p(-self.hi).next_down().next_down();
        let hi = libm::log1p(-self.lo).next_up().next_up().min(0.0);
        Interval { lo, hi }
    }

    pub fn max(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.max(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn powi(&self, k: u32) -> Interval {
        let mut acc = Interval::point(1.0);
        for _ in 0..k {
            acc = acc * *self;
        }
        acc
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:e}, {:e}]", self.lo, self.hi)
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, o: Interval) -> Interval {
        Interval::outward(self.lo + o.lo, self.hi + o.hi)
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, o: Interval) -> Interval {
        Interval::outward(self.lo - o.hi, self.hi - o.lo)
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval { lo: -self.hi, hi: -self.lo }
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, o: Interval) -> Interval {
        let c = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::outward(lo, hi)
    }
}

impl Div for Interval {
    type Output = Interval;
    fn div(self, o: Interval) -> Interval {
        assert!(o.lo > 0.0 || o.hi < 0.0, "division by interval containing zero");
        let c = [self.lo / o.lo, self.lo / o.hi, self.hi / o.lo, self.hi / o.hi];
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::outward(lo, hi)
    }
}

/// Transition probability. Exact where the construction allows it, otherwise a certified enclosure.
#[derive(Debug, Clone, PartialEq)]
pub enum Prob {
    Exact(Rational),
    Approx(Interval),
}

impl Prob {
    pub fn one() -> Prob {
        Prob::Exact(Rational::one())
    }

    pub fn exact(&self) -> Option<&Rational> {
        match self {
            Prob::Exact(r) => Some(r),
            Prob::Approx(_) => None,
        }
    }

    pub fn interval(&self) -> Interval {
        match self {
            Prob::Exact(r) => Interval::from_rational(r),
            Prob::Approx(i) => *i,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Prob::Exact(r) => to_f64(r),
            Prob::Approx(i) => i.mid(),
        }
    }

    pub fn is_positive(&self) -> bool {
        match self {
            Prob::Exact(r) => r.is_positive(),
            Prob::Approx(i) => i.hi() > 0.0,
        }
    }

    pub fn mul(&self, other: &Prob) -> Prob {
        match (self, other) {
            (Prob::Exact(a), Prob::Exact(b)) => Prob::Exact(a * b),
            _ => Prob::Approx(self.interval() * other.interval()),
        }
    }

    pub fn one_minus(&self) -> Prob {
        match self {
            Prob::Exact(r) => Prob::Exact(Rational::one() - r),
            Prob::Approx(i) => Prob::Approx((Interval::point(1.0) - *i).clamp_unit()),
        }
    }
}

impl fmt::Display for Prob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prob::Exact(r) => write!(f, "{r}"),
            Prob::Approx(i) => write!(f, "{i}"),
        }
    }
}

/// Sum of probabilities; exact if every term is.
pub fn sum_probs<'a>(ps: impl IntoIterator<Item = &'a Prob>) -> Prob {
    let mut exact = Rational::zero();
    let mut approx: Option<Interval> = None;
    for p in ps {
        match p {
            Prob::Exact(r) => exact += r,
            Prob::Approx(i) => approx = Some(approx.map_or(*i, |a| a + *i)),
        }
    }
    match approx {
        None => Prob::Exact(exact),
        Some(a) => Prob::Approx(a + Interval::from_rational(&exact)),
    }
}

pub fn cmp_rational_f64(r: &Rational, x: f64) -> Ordering {
    let i = Interval::from_rational(r);
    if i.hi() < x {
        Ordering::Less
    } else if i.lo() > x {
        Ordering::Greater
    } else {
        to_f64(r).partial_cmp(&x).unwrap_or(Ordering::Equal)
    }
}

/// Rational with the same value as `x` (every finite f64 is dyadic).
pub fn from_f64_exact(x: f64) -> Rational {
    Rational::from_float(x).expect("finite float")
}

pub fn abs(r: &Rational) -> Rational {
    r.abs()
}

pub fn gcd_u64(a: u64, b: u64) -> u64 {
    a.gcd(&b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_forms() {
        assert_eq!(parse_rational("3/6").unwrap(), rat(1, 2));
        assert_eq!(parse_rational("-0.125").unwrap(), rat(-1, 8));
        assert_eq!(parse_rational("7").unwrap(), int(7));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
    }

    #[test]
    fn ceil_pow_matches_definition() {
        let half = Ratio::new(1, 2);
        assert_eq!(ceil_pow(16, &half), 4);
        assert_eq!(ceil_pow(17, &half), 5);
        assert_eq!(ceil_pow(10, &Ratio::new(0, 1)), 1);
        assert_eq!(ceil_pow(10, &Ratio::new(2, 1)), 100);
        assert_eq!(ceil_pow(1000, &Ratio::new(1, 3)), 10);
        assert_eq!(ceil_pow(1001, &Ratio::new(1, 3)), 11);
    }

    #[test]
    fn interval_encloses() {
        let third = Interval::from_rational(&rat(1, 3));
        assert!(third.contains(1.0 / 3.0));
        let s = third + third + third;
        assert!(s.contains(1.0));
        let l = Interval::point(2.0).ln();
        assert!(l.contains(core::f64::consts::LN_2));
        assert!(l.width() < 1e-15);
    }

    #[test]
    fn log2s() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(ceil_log2(9), 4);
    }
}
