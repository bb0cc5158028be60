//! Parameter schedules for the gadget chains and the series/product analysis behind them.
//!
//! Faithful schedules use iterated logarithms and are only ever reported as enclosures.
//! Accelerated schedules use rational power terms `c / ceil(n^p)` and are exact.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::numeric::{big, ceil_pow, from_f64_exact, to_f64, Interval, Prob, Rational};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("iterated log {i} of {x} leaves the positive reals")]
    DomainTooSmall { i: u32, x: f64 },
    #[error("index {i} is out of range at n = {n}")]
    OutOfRange { n: u64, i: u32 },
    #[error("n = {n} is below the first valid block {n_star}")]
    BeforeStart { n: u64, n_star: u64 },
    #[error("series is divergent, no tail bound exists")]
    DivergentTerm,
    #[error("per-block loss series diverges")]
    DivergentLoss,
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("invalid schedule: {0}")]
    Invalid(String),
    #[error("not representable: {0}")]
    Unrepresentable(String),
}

/// i-fold natural logarithm of an enclosure.
pub fn log_iter_interval(i: u32, x: Interval) -> Result<Interval, ScheduleError> {
    let mut v = x;
    for step in 0..i {
        if !(v.lo() > 0.0) {
            return Err(ScheduleError::DomainTooSmall { i: step, x: x.lo() });
        }
        v = v.ln();
    }
    Ok(v)
}

pub fn log_iter(i: u32, x: f64) -> Result<Interval, ScheduleError> {
    let r = log_iter_interval(i, Interval::point(x))?;
    if i > 0 && r.hi() <= 0.0 {
        return Err(ScheduleError::DomainTooSmall { i, x });
    }
    Ok(r)
}

/// `E_height(base)`: the base with `height` exponentials applied on top.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BigExpr {
    height: u32,
    base: Interval,
}

const EXP_LIMIT: f64 = 700.0;

impl BigExpr {
    pub fn lit(x: Interval) -> Self {
        BigExpr { height: 0, base: x }
    }

    pub fn int(n: u64) -> Self {
        BigExpr::lit(Interval::from_rational(&big(n)))
    }

    pub fn tower_of(height: u32, base: Interval) -> Self {
        BigExpr { height, base }.normalized()
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn base(&self) -> Interval {
        self.base
    }

    fn normalized(mut self) -> Self {
        while self.height > 0 && self.base.hi() < EXP_LIMIT {
            self.base = self.base.exp();
            self.height -= 1;
        }
        self
    }

    pub fn exp(&self) -> Self {
        BigExpr { height: self.height + 1, base: self.base }.normalized()
    }

    pub fn ln(&self) -> Result<Self, ScheduleError> {
        if self.height > 0 {
            return Ok(BigExpr { height: self.height - 1, base: self.base });
        }
        if self.base.lo() <= 0.0 {
            return Err(ScheduleError::DomainTooSmall { i: 1, x: self.base.lo() });
        }
        Ok(BigExpr::lit(self.base.ln()))
    }

    pub fn add_small(&self, x: f64) -> Self {
        if self.height == 0 {
            BigExpr::lit(self.base + Interval::point(x))
        } else {
            // E_h(b) + x <= E_h(b + x) for x >= 0 and b large
            let b = if x > 0.0 { self.base + Interval::point(x) } else { self.base };
            BigExpr { height: self.height, base: Interval::new(self.base.lo(), b.hi()) }
        }
    }

    /// Enclosure of the value, if it fits in an f64.
    pub fn value(&self) -> Option<Interval> {
        (self.height == 0 && self.base.hi().is_finite()).then_some(self.base)
    }

    /// Base of `self` re-expressed at the given (lower) height; `None` once it overflows.
    fn lowered(&self, height: u32) -> Option<Interval> {
        let mut b = self.base;
        for _ in height..self.height {
            b = b.exp();
            if !b.hi().is_finite() {
                return None;
            }
        }
        Some(b)
    }

    /// Certified comparison; `None` if the enclosures overlap.
    pub fn compare(&self, other: &BigExpr) -> Option<Ordering> {
        let h = self.height.min(other.height);
        match (self.lowered(h), other.lowered(h)) {
            (None, Some(_)) => Some(Ordering::Greater),
            (Some(_), None) => Some(Ordering::Less),
            (None, None) => None,
            (Some(a), Some(b)) => {
                if a.lo() > b.hi() {
                    Some(Ordering::Greater)
                } else if a.hi() < b.lo() {
                    Some(Ordering::Less)
                } else if a.lo() == a.hi() && a == b {
                    Some(Ordering::Equal)
                } else {
                    None
                }
            }
        }
    }

    /// Upper envelope of two expressions; exact when the comparison is decided.
    pub fn max(&self, other: &BigExpr) -> BigExpr {
        match self.compare(other) {
            Some(Ordering::Less) => *other,
            Some(_) => *self,
            None => {
                let h = self.height.min(other.height);
                match (self.lowered(h), other.lowered(h)) {
                    (Some(a), Some(b)) => BigExpr { height: h, base: a.max(&b) }.normalized(),
                    _ => *self,
                }
            }
        }
    }

    pub fn le_u64(&self, n: u64) -> Option<bool> {
        self.compare(&BigExpr::int(n)).map(|o| o != Ordering::Greater)
    }
}

impl fmt::Display for BigExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.height == 0 {
            write!(f, "{}", self.base)
        } else {
            write!(f, "exp^{}({})", self.height, self.base)
        }
    }
}

/// Tower(0) = 1, Tower(i+1) = e^Tower(i).
pub fn tower(i: u32) -> BigExpr {
    BigExpr::tower_of(i, Interval::point(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesClass {
    Convergent,
    Divergent,
}

/// term(n) = 1 / (n^a0 * prod_{i=1..d} (log_i n)^{a_i}).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogPowerTerm {
    exps: Vec<Ratio<i64>>,
}

impl LogPowerTerm {
    pub fn new(exps: Vec<Ratio<i64>>) -> Self {
        assert!(!exps.is_empty(), "need at least the power of n");
        LogPowerTerm { exps }
    }

    pub fn from_ints(exps: &[i64]) -> Self {
        LogPowerTerm::new(exps.iter().map(|&a| Ratio::from_integer(a)).collect())
    }

    pub fn exps(&self) -> &[Ratio<i64>] {
        &self.exps
    }

    pub fn depth(&self) -> u32 {
        (self.exps.len() - 1) as u32
    }

    /// Drops trailing zero exponents so equal functions compare equal.
    pub fn trimmed(mut self) -> Self {
        while self.exps.len() > 1 && self.exps.last().is_some_and(|a| a.is_zero()) {
            self.exps.pop();
        }
        self
    }

    pub fn mul(&self, other: &LogPowerTerm) -> LogPowerTerm {
        let len = self.exps.len().max(other.exps.len());
        let get = |v: &Vec<Ratio<i64>>, i: usize| v.get(i).copied().unwrap_or_else(Ratio::zero);
        LogPowerTerm::new((0..len).map(|i| get(&self.exps, i) + get(&other.exps, i)).collect()).trimmed()
    }

    /// Least integer above Tower(d), so every iterated log used is > 1.
    pub fn n_min(&self) -> Result<u64, ScheduleError> {
        let t = tower(self.depth());
        let v = t.value().ok_or_else(|| ScheduleError::Unrepresentable(alloc::format!("Tower({})", self.depth())))?;
        Ok(libm::floor(v.hi()) as u64 + 1)
    }

    /// Natural log of term(x) for real x.
    pub fn ln_eval(&self, x: Interval) -> Result<Interval, ScheduleError> {
        let mut acc = Interval::point(0.0);
        let mut l = x;
        for (i, a) in self.exps.iter().enumerate() {
            if i > 0 {
                l = log_iter_interval(1, l)?;
            }
            if a.is_zero() {
                continue;
            }
            if l.lo() <= 0.0 {
                return Err(ScheduleError::DomainTooSmall { i: i as u32, x: x.lo() });
            }
            acc = acc - ratio_interval(a) * l.ln();
        }
        Ok(acc)
    }

    pub fn eval(&self, n: u64) -> Result<Interval, ScheduleError> {
        Ok(self.ln_eval(Interval::from_rational(&big(n)))?.exp())
    }

    pub fn classify(&self) -> SeriesClass {
        classify(self)
    }
}

fn ratio_interval(a: &Ratio<i64>) -> Interval {
    Interval::from_rational(&Rational::new(BigInt::from(*a.numer()), BigInt::from(*a.denom())))
}

/// Bertrand rule: the first exponent different from 1 decides.
pub fn classify(t: &LogPowerTerm) -> SeriesClass {
    let one = Ratio::one();
    match t.exps.iter().find(|a| **a != one) {
        Some(a) if *a > one => SeriesClass::Convergent,
        _ => SeriesClass::Divergent,
    }
}

/// Certified upper bound on the sum of term(n) over n > N, from the antiderivative of the Bertrand form.
/// Exponents after the deciding one must be non-negative.
pub fn tail_upper_bound(t: &LogPowerTerm, n: u64) -> Result<f64, ScheduleError> {
    if classify(t) == SeriesClass::Divergent {
        return Err(ScheduleError::DivergentTerm);
    }
    if n < t.n_min()? {
        return Err(ScheduleError::OutOfRange { n, i: t.depth() });
    }
    let one = Ratio::one();
    let j = t.exps.iter().position(|a| *a != one).expect("convergent term has a deciding exponent");
    if t.exps[j + 1..].iter().any(|a| a.is_negative()) {
        return Err(ScheduleError::Invalid("negative exponent after the deciding one".into()));
    }
    let x = Interval::from_rational(&big(n));
    let aj = ratio_interval(&t.exps[j]);
    let lj = log_iter_interval(j as u32, x)?;
    // (log_j N)^{1 - a_j} / (a_j - 1)
    let head = ((Interval::point(1.0) - aj) * lj.ln()).exp() / (aj - Interval::point(1.0));
    let mut trailing = Interval::point(0.0);
    let mut l = lj;
    for a in &t.exps[j + 1..] {
        l = l.ln();
        if !a.is_zero() {
            trailing = trailing - ratio_interval(a) * l.ln();
        }
    }
    Ok((head * trailing.exp()).hi())
}

/// Rational enclosure of ln x with width below 2^-bits.
pub fn ln_rational(x: &Rational, bits: u32) -> (Rational, Rational) {
    assert!(x.is_positive(), "ln of non-positive rational");
    let (num, den) = (x.numer().magnitude().clone(), x.denom().magnitude().clone());
    let mut m = num.bits() as i64 - den.bits() as i64;
    // y = x / 2^m in [1, 2)
    let scaled = |m: i64| -> (BigUint, BigUint) {
        if m >= 0 {
            (num.clone(), &den << (m as usize))
        } else {
            (&num << ((-m) as usize), den.clone())
        }
    };
    let (mut yn, mut yd) = scaled(m);
    if yn < yd {
        m -= 1;
        (yn, yd) = scaled(m);
    }
    let za = BigInt::from(&yn - &yd);
    let zb = BigInt::from(&yn + &yd);
    let extra = 64 - (m.unsigned_abs() + 1).leading_zeros();
    let p = bits + extra + 24;
    let (a_lo, a_hi) = atanh_fixed(&za, &zb, p);
    let (l2_lo, l2_hi) = atanh_fixed(&BigInt::one(), &BigInt::from(3), p);
    let scale = Rational::from_integer(BigInt::one() << (p as usize));
    let two = Rational::from_integer(BigInt::from(2));
    let mr = Rational::from_integer(BigInt::from(m));
    let (l2_for_lo, l2_for_hi) = if m >= 0 { (l2_lo, l2_hi) } else { (l2_hi, l2_lo) };
    let lo = (&two * &mr * Rational::from_integer(l2_for_lo) + &two * Rational::from_integer(a_lo)) / &scale;
    let hi = (&two * &mr * Rational::from_integer(l2_for_hi) + &two * Rational::from_integer(a_hi)) / &scale;
    (lo, hi)
}

/// Fixed-point bounds (scaled by 2^p) on atanh(a/b) for 0 <= a/b <= 1/3.
fn atanh_fixed(a: &BigInt, b: &BigInt, p: u32) -> (BigInt, BigInt) {
    let terms = (p / 3 + 2) as u64;
    let mut t = (a << (p as usize)) / b;
    let (a2, b2) = (a * a, b * b);
    let mut sum = BigInt::zero();
    for k in 0..terms {
        sum += &t / BigInt::from(2 * k + 1);
        t = &t * &a2 / &b2;
    }
    // floor errors plus the truncated tail, which is below 9^-terms of the scale
    let slack = BigInt::from((terms + 1) * (terms + 1) + 2);
    (sum.clone(), sum + slack)
}

/// Enclosure of log_i(x) for rational x, each level computed to `bits` bits.
pub fn log_iter_rational(i: u32, x: &Rational, bits: u32) -> Result<(Rational, Rational), ScheduleError> {
    let (mut lo, mut hi) = (x.clone(), x.clone());
    for step in 0..i {
        if !lo.is_positive() {
            return Err(ScheduleError::DomainTooSmall { i: step, x: to_f64(x) });
        }
        lo = ln_rational(&lo, bits).0;
        hi = ln_rational(&hi, bits).1;
    }
    Ok((lo, hi))
}

/// `coeff / ceil(n^exponent)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PowerTerm {
    pub coeff: Rational,
    pub exponent: Ratio<i64>,
}

impl PowerTerm {
    pub fn new(coeff: Rational, exponent: Ratio<i64>) -> Self {
        PowerTerm { coeff, exponent }
    }

    pub fn eval(&self, n: u64) -> Rational {
        &self.coeff / big(ceil_pow(n, &self.exponent))
    }

    /// Cheap enclosure, used for the long partial sums.
    pub fn eval_interval(&self, n: u64) -> Interval {
        if self.exponent.is_integer() {
            let exact = (n as u128).checked_pow(*self.exponent.numer() as u32).filter(|v| *v < 1u128 << 53);
            if let Some(v) = exact {
                return Interval::from_rational(&self.coeff) / Interval::point(v as f64);
            }
        }
        let v = (ratio_interval(&self.exponent) * Interval::from_rational(&big(n)).ln()).exp();
        let d = Interval::new(libm::ceil(v.lo()).max(1.0), libm::ceil(v.hi()).max(1.0));
        Interval::from_rational(&self.coeff) / d
    }
}

impl fmt::Display for PowerTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/ceil(n^{})", self.coeff, self.exponent)
    }
}

/// Step function for the branching degree: `k(n)` is the `k` of the last entry with `from <= n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KGrowth(Vec<(u64, u32)>);

impl KGrowth {
    pub fn new(mut steps: Vec<(u64, u32)>) -> Result<Self, ScheduleError> {
        steps.sort_by_key(|s| s.0);
        if steps.is_empty() {
            return Err(ScheduleError::Invalid("empty k-growth table".into()));
        }
        if steps.windows(2).any(|w| w[0].0 == w[1].0 || w[1].1 < w[0].1) {
            return Err(ScheduleError::Invalid("k-growth table must be strictly ordered and non-decreasing".into()));
        }
        Ok(KGrowth(steps))
    }

    pub fn constant(k: u32) -> Self {
        KGrowth(vec![(1, k)])
    }

    /// k(n) = min(1 + floor(n / width), k_max).
    pub fn linear(width: u64, k_max: u32) -> Self {
        let mut steps = vec![(1, 1)];
        for k in 2..=k_max {
            steps.push((width * (k as u64 - 1), k));
        }
        KGrowth(steps)
    }

    pub fn steps(&self) -> &[(u64, u32)] {
        &self.0
    }

    pub fn k(&self, n: u64) -> u32 {
        self.0.iter().take_while(|s| s.0 <= n).last().map_or(0, |s| s.1)
    }

    pub fn k_max(&self) -> u32 {
        self.0.last().map_or(0, |s| s.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recurrence {
    /// m_n = 2 k(n) * sum of earlier m.
    A,
    /// m_n = sum of earlier m^{k(n)}.
    B,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Accelerated {
    pub name: String,
    pub k_growth: KGrowth,
    pub delta: Vec<PowerTerm>,
    pub epsilon: Vec<PowerTerm>,
    pub recurrence: Recurrence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Family {
    FaithfulA,
    FaithfulB,
    RationalizedA,
    RationalizedB,
    Accelerated(Accelerated),
}

impl Family {
    pub fn tag(&self) -> &str {
        match self {
            Family::FaithfulA => "faithful-a",
            Family::FaithfulB => "faithful-b",
            Family::RationalizedA => "rationalized-a",
            Family::RationalizedB => "rationalized-b",
            Family::Accelerated(a) => &a.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    family: Family,
    n_star: u64,
}

/// Above this the partial sums and products switch from exact to interval arithmetic.
const EXACT_PRODUCT_LIMIT: u64 = 4096;
/// Longest partial product or sum evaluated term by term.
const MAX_PROBE: u64 = 20_000_000;
/// Loss mass from blocks with k(n) >= 2 in the faithful family: the h(i) thresholds keep each
/// δ_{i-1}ε_{i-1} tail below 2^-i (up to a vanishing correction).
const FAITHFUL_HIGHER_TAIL: f64 = 0.5 + 1e-6;

impl Schedule {
    pub fn faithful_a() -> Self {
        Schedule { family: Family::FaithfulA, n_star: 3 }
    }

    pub fn faithful_b() -> Self {
        Schedule { family: Family::FaithfulB, n_star: 3 }
    }

    pub fn rationalized_a() -> Self {
        Schedule { family: Family::RationalizedA, n_star: 3 }
    }

    pub fn rationalized_b() -> Self {
        Schedule { family: Family::RationalizedB, n_star: 3 }
    }

    /// Validates the convergence/divergence hypotheses and locates the first valid block.
    pub fn accelerated(spec: Accelerated) -> Result<Self, ScheduleError> {
        check_hypotheses(&spec)?;
        let n_star = accelerated_start(&spec)?;
        Ok(Schedule { family: Family::Accelerated(spec), n_star })
    }

    /// One branch pair, losses 1/(2n^2) then 1/n^2 once the second branch appears.
    pub fn accel_mimic() -> Self {
        let pt = |c: Rational, p: i64| PowerTerm::new(c, Ratio::from_integer(p));
        Schedule::accelerated(Accelerated {
            name: "accel-mimic".into(),
            k_growth: KGrowth::new(vec![(1, 1), (4, 2)]).expect("static table"),
            delta: vec![pt(Rational::new(1.into(), 2.into()), 1), pt(Rational::new(1.into(), 4.into()), 0)],
            epsilon: vec![pt(Rational::one(), 1), pt(Rational::from_integer(2.into()), 2)],
            recurrence: Recurrence::A,
        })
        .expect("preset is valid")
    }

    /// Loss exactly 1/n^2 with a single choice per block.
    pub fn accel_telescoping() -> Self {
        let pt = PowerTerm::new(Rational::one(), Ratio::from_integer(1));
        Schedule::accelerated(Accelerated {
            name: "accel-telescoping".into(),
            k_growth: KGrowth::constant(1),
            delta: vec![pt.clone()],
            epsilon: vec![pt],
            recurrence: Recurrence::A,
        })
        .expect("preset is valid")
    }

    /// Branching grows to 7 choices by n = 25 while the per-pair confusion mass stays divergent.
    pub fn accel_confusion() -> Self {
        let p = [rat_i(1, 4), rat_i(1, 5), rat_i(3, 20), rat_i(1, 10), rat_i(1, 20), rat_i(0, 1)];
        let delta = p.iter().map(|e| PowerTerm::new(Rational::new(1.into(), 5.into()), *e)).collect();
        let epsilon = (0..6)
            .map(|i| {
                let q = if i + 1 < 6 { Ratio::one() - p[i + 1] } else { rat_i(21, 20) };
                PowerTerm::new(Rational::new(15.into(), 2.into()), q)
            })
            .collect();
        Schedule::accelerated(Accelerated {
            name: "accel-confusion".into(),
            k_growth: KGrowth::linear(5, 6),
            delta,
            epsilon,
            recurrence: Recurrence::A,
        })
        .expect("preset is valid")
    }

    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "faithful-a" => Schedule::faithful_a(),
            "faithful-b" => Schedule::faithful_b(),
            "rationalized-a" => Schedule::rationalized_a(),
            "rationalized-b" => Schedule::rationalized_b(),
            "accel-mimic" => Schedule::accel_mimic(),
            "accel-telescoping" => Schedule::accel_telescoping(),
            "accel-confusion" => Schedule::accel_confusion(),
            _ => return None,
        })
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["faithful-a", "faithful-b", "rationalized-a", "rationalized-b", "accel-mimic", "accel-telescoping", "accel-confusion"]
    }

    /// Same schedule with the other reward recurrence.
    pub fn with_recurrence(&self, r: Recurrence) -> Self {
        let family = match (&self.family, r) {
            (Family::FaithfulA | Family::FaithfulB, Recurrence::A) => Family::FaithfulA,
            (Family::FaithfulA | Family::FaithfulB, Recurrence::B) => Family::FaithfulB,
            (Family::RationalizedA | Family::RationalizedB, Recurrence::A) => Family::RationalizedA,
            (Family::RationalizedA | Family::RationalizedB, Recurrence::B) => Family::RationalizedB,
            (Family::Accelerated(a), r) => Family::Accelerated(Accelerated { recurrence: r, ..a.clone() }),
        };
        Schedule { family, n_star: self.n_star }
    }

    /// Rationalized counterpart of a faithful schedule; accelerated schedules are already rational.
    pub fn rationalized(&self) -> Self {
        let family = match &self.family {
            Family::FaithfulA => Family::RationalizedA,
            Family::FaithfulB => Family::RationalizedB,
            f => f.clone(),
        };
        Schedule { family, n_star: self.n_star }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn name(&self) -> &str {
        self.family.tag()
    }

    pub fn n_star(&self) -> u64 {
        self.n_star
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self.family, Family::FaithfulA | Family::FaithfulB)
    }

    pub fn is_faithful(&self) -> bool {
        !matches!(self.family, Family::Accelerated(_))
    }

    pub fn recurrence(&self) -> Recurrence {
        match &self.family {
            Family::FaithfulA | Family::RationalizedA => Recurrence::A,
            Family::FaithfulB | Family::RationalizedB => Recurrence::B,
            Family::Accelerated(a) => a.recurrence,
        }
    }

    pub fn k(&self, n: u64) -> u32 {
        match &self.family {
            Family::Accelerated(a) => a.k_growth.k(n),
            _ => k_of(n),
        }
    }

    /// Largest branching index ever used, if bounded.
    pub fn k_max(&self) -> Option<u32> {
        match &self.family {
            Family::Accelerated(a) => Some(a.k_growth.k_max()),
            _ => None,
        }
    }

    fn check_index(&self, i: u32, n: u64) -> Result<u32, ScheduleError> {
        if n < self.n_star {
            return Err(ScheduleError::BeforeStart { n, n_star: self.n_star });
        }
        let k = self.k(n);
        if i > k {
            return Err(ScheduleError::OutOfRange { n, i });
        }
        Ok(k)
    }

    /// Branch probabilities δ_0..δ_k(n); the top one takes the remaining mass.
    pub fn deltas(&self, n: u64) -> Result<Vec<Prob>, ScheduleError> {
        let k = self.check_index(0, n)?;
        let mut v: Vec<Prob> = (0..k).map(|i| self.delta_raw(i, n)).collect::<Result<_, _>>()?;
        let top = crate::numeric::sum_probs(v.iter()).one_minus();
        v.push(top);
        Ok(v)
    }

    /// Σ_{i<k} δ_i(n) for a chosen k, independent of k(n).
    pub fn delta_sum(&self, k: u32, n: u64) -> Result<Prob, ScheduleError> {
        let v: Vec<Prob> = (0..k).map(|i| self.delta_raw(i, n)).collect::<Result<_, _>>()?;
        Ok(crate::numeric::sum_probs(v.iter()))
    }

    /// δ_i(n) for any i, whether or not i <= k(n).
    pub fn delta_unchecked(&self, i: u32, n: u64) -> Result<Prob, ScheduleError> {
        self.delta_raw(i, n)
    }

    /// ε_i(n) for any i, whether or not i <= k(n).
    pub fn epsilon_unchecked(&self, i: u32, n: u64) -> Result<Prob, ScheduleError> {
        self.epsilon_raw(i, n)
    }

    /// ⊥-escape probabilities ε_0..ε_k(n); the top one is 0.
    pub fn epsilons(&self, n: u64) -> Result<Vec<Prob>, ScheduleError> {
        let k = self.check_index(0, n)?;
        let mut v: Vec<Prob> = (0..k).map(|i| self.epsilon_raw(i, n)).collect::<Result<_, _>>()?;
        v.push(Prob::Exact(Rational::zero()));
        Ok(v)
    }

    pub fn delta(&self, i: u32, n: u64) -> Result<Prob, ScheduleError> {
        let k = self.check_index(i, n)?;
        if i == k {
            return Ok(self.deltas(n)?.pop().expect("top entry"));
        }
        self.delta_raw(i, n)
    }

    pub fn epsilon(&self, i: u32, n: u64) -> Result<Prob, ScheduleError> {
        let k = self.check_index(i, n)?;
        if i == k {
            return Ok(Prob::Exact(Rational::zero()));
        }
        self.epsilon_raw(i, n)
    }

    fn delta_raw(&self, i: u32, n: u64) -> Result<Prob, ScheduleError> {
        Ok(match &self.family {
            Family::FaithfulA | Family::FaithfulB => {
                Prob::Approx(Interval::point(1.0) / log_iter(i + 1, n as f64)?)
            }
            Family::RationalizedA | Family::RationalizedB => {
                Prob::Exact(grid_above(n, |bits| {
                    let (lo, hi) = log_iter_rational(i + 1, &big(n), bits)?;
                    Ok((hi.recip(), lo.recip()))
                })?)
            }
            Family::Accelerated(a) => Prob::Exact(a.delta[i as usize].eval(n)),
        })
    }

    fn epsilon_raw(&self, i: u32, n: u64) -> Result<Prob, ScheduleError> {
        Ok(match &self.family {
            Family::FaithfulA | Family::FaithfulB => {
                let mut d = Interval::from_rational(&big(n));
                for l in 1..=i + 1 {
                    d = d * log_iter(l, n as f64)?;
                }
                Prob::Approx(Interval::point(1.0) / d)
            }
            Family::RationalizedA | Family::RationalizedB => Prob::Exact(grid_above(n, |bits| {
                let (mut lo, mut hi) = (big(n), big(n));
                for l in 1..=i + 1 {
                    let (a, b) = log_iter_rational(l, &big(n), bits)?;
                    lo *= a;
                    hi *= b;
                }
                Ok((hi.recip(), lo.recip()))
            })?),
            Family::Accelerated(a) => Prob::Exact(a.epsilon[i as usize].eval(n)),
        })
    }

    /// Symbolic forms of δ_i and ε_i for the faithful families.
    pub fn delta_term(&self, i: u32) -> Option<LogPowerTerm> {
        self.is_faithful().then(|| faithful_delta_term(i))
    }

    pub fn epsilon_term(&self, i: u32) -> Option<LogPowerTerm> {
        self.is_faithful().then(|| faithful_epsilon_term(i))
    }

    /// Reward scale m_n for n in [N*, up_to], as a table indexed by n - N*.
    pub fn m_table(&self, up_to: u64) -> Vec<BigInt> {
        let mut ms: Vec<BigInt> = Vec::new();
        for n in self.n_star..=up_to {
            if ms.is_empty() {
                ms.push(BigInt::one());
                continue;
            }
            let k = self.k(n);
            let next = match self.recurrence() {
                Recurrence::A => BigInt::from(2 * k) * ms.iter().sum::<BigInt>(),
                Recurrence::B => ms.iter().map(|m| num_traits::pow(m.clone(), k as usize)).sum(),
            };
            ms.push(next);
        }
        ms
    }

    pub fn m(&self, n: u64) -> Result<BigInt, ScheduleError> {
        if n < self.n_star {
            return Err(ScheduleError::BeforeStart { n, n_star: self.n_star });
        }
        Ok(self.m_table(n).pop().expect("non-empty"))
    }

    /// Probability that mimicking block n drops into ⊥: sum of δ_i ε_i over non-top branches.
    pub fn mimic_loss(&self, n: u64) -> Result<Prob, ScheduleError> {
        let k = self.check_index(0, n)?;
        let terms: Vec<Prob> =
            (0..k).map(|i| Ok(self.delta_raw(i, n)?.mul(&self.epsilon_raw(i, n)?))).collect::<Result<_, _>>()?;
        Ok(crate::numeric::sum_probs(terms.iter()))
    }

    /// Fast enclosure of the mimic loss, for long scans.
    pub fn mimic_loss_interval(&self, n: u64) -> Result<Interval, ScheduleError> {
        match &self.family {
            Family::Accelerated(a) => {
                let k = self.check_index(0, n)? as usize;
                Ok((0..k).fold(Interval::point(0.0), |acc, i| {
                    acc + a.delta[i].eval_interval(n) * a.epsilon[i].eval_interval(n)
                }))
            }
            Family::RationalizedA | Family::RationalizedB if n > 64 => {
                // γθ exceeds δε by at most 2^-n (γ + θ + 1)
                let f = Schedule { family: Family::FaithfulA, n_star: self.n_star }.mimic_loss_interval(n)?;
                let slack = libm::ldexp(3.0 * self.k(n) as f64, -(n as i32));
                Ok(Interval::new(f.lo(), (f + Interval::point(slack)).hi()))
            }
            _ => Ok(self.mimic_loss(n)?.interval()),
        }
    }

    /// Upper bound on the loss mass of all blocks n >= from.
    pub fn loss_tail(&self, from: u64) -> Result<f64, ScheduleError> {
        match &self.family {
            Family::Accelerated(a) => {
                let mut total = Interval::point(0.0);
                for i in 0..a.k_growth.k_max() as usize {
                    let s = a.delta[i].exponent + a.epsilon[i].exponent;
                    if s <= Ratio::one() {
                        return Err(ScheduleError::DivergentLoss);
                    }
                    // sum_{n >= M} n^-s <= M^-s + M^{1-s}/(s-1)
                    let m = Interval::from_rational(&big(from.max(1)));
                    let si = ratio_interval(&s);
                    let head = (-(si * m.ln())).exp();
                    let integral = ((Interval::point(1.0) - si) * m.ln()).exp() / (si - Interval::point(1.0));
                    let c = Interval::from_rational(&(&a.delta[i].coeff * &a.epsilon[i].coeff));
                    total = total + c * (head + integral);
                }
                Ok(total.hi())
            }
            _ => {
                let t = faithful_delta_term(0).mul(&faithful_epsilon_term(0));
                let from = from.max(t.n_min()?);
                let extra = if self.family == Family::FaithfulA || self.family == Family::FaithfulB {
                    0.0
                } else {
                    // rationalized terms exceed δε by at most 2^-n(δ + ε + 2^-n)
                    libm::ldexp(4.0, -(from as i32 - 1))
                };
                Ok(t.eval(from)?.hi() + tail_upper_bound(&t, from)? + FAITHFUL_HIGHER_TAIL + extra)
            }
        }
    }

    /// Certified enclosure of the product of (1 - mimic_loss(n)) over the horizon.
    pub fn survival_product(&self, from: u64, horizon: Horizon) -> Result<Enclosure, ScheduleError> {
        let from = from.max(self.n_star);
        match horizon {
            Horizon::Blocks(count) => {
                if self.is_exact() && count <= EXACT_PRODUCT_LIMIT {
                    let mut p = Rational::one();
                    for n in from..from + count {
                        let loss = self.mimic_loss(n)?;
                        p *= Rational::one() - loss.exact().expect("exact schedule");
                    }
                    return Ok(Enclosure::exact(p));
                }
                let mut p = Interval::point(1.0);
                for n in from..from + count {
                    p = p * (Interval::point(1.0) - self.mimic_loss_interval(n)?).clamp_unit();
                }
                Ok(Enclosure::interval(p))
            }
            Horizon::Infinite { tol } => {
                let m = self.probe_length(from, tol / 2.0)?;
                let tail = self.loss_tail(m)?;
                let mut p = Interval::point(1.0);
                for n in from..m {
                    p = p * (Interval::point(1.0) - self.mimic_loss_interval(n)?).clamp_unit();
                }
                let lo = (p * Interval::point((1.0 - tail).max(0.0))).lo().max(0.0);
                Ok(Enclosure::interval(Interval::new(lo, p.hi())))
            }
        }
    }

    /// Smallest probe M >= from with loss_tail(M) <= target, capped.
    fn probe_length(&self, from: u64, target: f64) -> Result<u64, ScheduleError> {
        let mut m = from.max(16);
        loop {
            if self.loss_tail(m)? <= target || m >= MAX_PROBE {
                return Ok(m.min(MAX_PROBE));
            }
            m = (m * 2).min(MAX_PROBE);
        }
    }

    /// Least N >= N* whose certified tail product from N is at least 1 - eps.
    pub fn skip_index(&self, eps: f64) -> Result<u64, ScheduleError> {
        if eps >= 1.0 {
            return Ok(self.n_star);
        }
        if eps <= 0.0 {
            return Err(ScheduleError::Invalid("ε must be positive".into()));
        }
        let m = self.probe_length(self.n_star, eps / 8.0)?;
        let tail = self.loss_tail(m)?;
        if tail >= eps {
            return Err(ScheduleError::Unrepresentable(alloc::format!(
                "loss tail {tail:.3} beyond n = {m} already exceeds ε = {eps}"
            )));
        }
        let target = 1.0 - eps;
        let mut log_sum = Interval::point(0.0);
        let mut n = m;
        while n > self.n_star {
            let candidate = n - 1;
            let next = log_sum + self.mimic_loss_interval(candidate)?.ln_one_minus();
            let lower = (next.exp() * Interval::point(1.0 - tail)).lo();
            if lower < target {
                break;
            }
            log_sum = next;
            n = candidate;
        }
        if n == m && (log_sum.exp() * Interval::point(1.0 - tail)).lo() < target {
            return Err(ScheduleError::Unrepresentable("no probed index reaches the target".into()));
        }
        Ok(n)
    }

    /// e = δ_j(αε_j + (1-α)ε_i) + δ_i(α + (1-α)ε_i).
    pub fn confusion_bound(&self, n: u64, i: u32, j: u32, alpha: &Rational) -> Result<Prob, ScheduleError> {
        let k = self.check_pair(n, i, j)?;
        let _ = k;
        if alpha.is_negative() || *alpha > Rational::one() {
            return Err(ScheduleError::Invalid("α must lie in [0, 1]".into()));
        }
        let (di, dj, ei, ej) = self.pair_params(n, i, j)?;
        let a = Prob::Exact(alpha.clone());
        let na = a.one_minus();
        let left = dj.mul(&crate::numeric::sum_probs([a.mul(&ej), na.mul(&ei)].iter()));
        let right = di.mul(&crate::numeric::sum_probs([a.clone(), na.mul(&ei)].iter()));
        Ok(crate::numeric::sum_probs([left, right].iter()))
    }

    /// Minimum of the confusion formula over α (it is linear in α, so an endpoint).
    pub fn confusion_alpha_free(&self, n: u64, i: u32, j: u32) -> Result<Prob, ScheduleError> {
        let a1 = self.confusion_bound(n, i, j, &Rational::one())?;
        let a0 = self.confusion_bound(n, i, j, &Rational::zero())?;
        Ok(prob_min(a0, a1))
    }

    /// The coarser case-split bound min(δ_i/2, δ_j ε_i / 2).
    pub fn confusion_case_split(&self, n: u64, i: u32, j: u32) -> Result<Prob, ScheduleError> {
        self.check_pair(n, i, j)?;
        let (di, dj, ei, _) = self.pair_params(n, i, j)?;
        let half = Prob::Exact(Rational::new(1.into(), 2.into()));
        Ok(prob_min(half.mul(&di), half.mul(&dj).mul(&ei)))
    }

    /// Per-block loss forced on a machine with `modes` memory modes: the least α-free confusion
    /// bound over non-top pairs, once k(n) >= modes + 2; zero before.
    pub fn confusion_floor(&self, n: u64, modes: u32) -> Result<Prob, ScheduleError> {
        let k = self.check_index(0, n)?;
        if k < modes + 2 {
            return Ok(Prob::Exact(Rational::zero()));
        }
        let mut best: Option<Prob> = None;
        for i in 0..k {
            for j in i + 1..k {
                let e = self.confusion_alpha_free(n, i, j)?;
                best = Some(match best {
                    None => e,
                    Some(b) => prob_min(b, e),
                });
            }
        }
        Ok(best.expect("k >= 2 gives a pair"))
    }

    /// Exact ∏_{n=from}^{to} (1 - confusion_floor(n, modes)).
    pub fn confusion_product(&self, from: u64, to: u64, modes: u32) -> Result<Vec<Prob>, ScheduleError> {
        let mut out = Vec::new();
        let mut acc = Prob::one();
        for n in from.max(self.n_star)..=to {
            acc = acc.mul(&self.confusion_floor(n, modes)?.one_minus());
            out.push(acc.clone());
        }
        Ok(out)
    }

    fn check_pair(&self, n: u64, i: u32, j: u32) -> Result<u32, ScheduleError> {
        let k = self.check_index(0, n)?;
        if !(i < j && j < k) {
            return Err(ScheduleError::OutOfRange { n, i: j });
        }
        Ok(k)
    }

    fn pair_params(&self, n: u64, i: u32, j: u32) -> Result<(Prob, Prob, Prob, Prob), ScheduleError> {
        Ok((self.delta_raw(i, n)?, self.delta_raw(j, n)?, self.epsilon_raw(i, n)?, self.epsilon_raw(j, n)?))
    }

    /// Checks Σ_{i<k(n)} δ_i(n) <= 1 (strictly, for rational schedules) and ε_i(n) < 1.
    pub fn well_defined_at(&self, n: u64) -> Result<bool, ScheduleError> {
        let k = self.check_index(0, n)?;
        let ds: Vec<Prob> = (0..k).map(|i| self.delta_raw(i, n)).collect::<Result<_, _>>()?;
        let sum = crate::numeric::sum_probs(ds.iter());
        let ok_sum = match &sum {
            Prob::Exact(r) => *r < Rational::one(),
            Prob::Approx(iv) => iv.hi() <= 1.0,
        };
        let ok_eps = (0..k).all(|i| match self.epsilon_raw(i, n) {
            Ok(Prob::Exact(r)) => r < Rational::one(),
            Ok(Prob::Approx(iv)) => iv.hi() < 1.0,
            Err(_) => false,
        });
        Ok(ok_sum && ok_eps)
    }
}

fn rat_i(a: i64, b: i64) -> Ratio<i64> {
    Ratio::new(a, b)
}

fn prob_min(a: Prob, b: Prob) -> Prob {
    match (&a, &b) {
        (Prob::Exact(x), Prob::Exact(y)) => {
            if x <= y {
                a
            } else {
                b
            }
        }
        _ => {
            let (x, y) = (a.interval(), b.interval());
            Prob::Approx(Interval::new(x.lo().min(y.lo()), x.hi().min(y.hi())))
        }
    }
}

/// Least point of the grid 2^-(n+2) strictly above an enclosure of the target, refined until the
/// enclosure is narrower than a grid step, so the result lies in (x, x + 2^-n).
fn grid_above(
    n: u64,
    enclose: impl Fn(u32) -> Result<(Rational, Rational), ScheduleError>,
) -> Result<Rational, ScheduleError> {
    let shift = n as usize + 2;
    let step = Rational::new(BigInt::one(), BigInt::one() << shift);
    let mut bits = n as u32 + 16;
    loop {
        let (lo, hi) = enclose(bits)?;
        if &hi - &lo < step {
            let scaled = &hi * Rational::from_integer(BigInt::one() << shift);
            let idx = scaled.floor().to_integer() + BigInt::one();
            return Ok(Rational::new(idx, BigInt::one() << shift));
        }
        if bits > 4096 {
            return Err(ScheduleError::Unrepresentable(alloc::format!("rational enclosure at n = {n}")));
        }
        bits *= 2;
    }
}

fn faithful_delta_term(i: u32) -> LogPowerTerm {
    let mut e = vec![0i64; i as usize + 2];
    e[i as usize + 1] = 1;
    LogPowerTerm::from_ints(&e)
}

fn faithful_epsilon_term(i: u32) -> LogPowerTerm {
    LogPowerTerm::from_ints(&vec![1i64; i as usize + 2])
}

fn check_hypotheses(a: &Accelerated) -> Result<(), ScheduleError> {
    let k = a.k_growth.k_max() as usize;
    if a.delta.len() < k || a.epsilon.len() < k {
        return Err(ScheduleError::Invalid(alloc::format!(
            "k reaches {k} but only {} δ and {} ε terms are given",
            a.delta.len(),
            a.epsilon.len()
        )));
    }
    for t in a.delta.iter().chain(&a.epsilon) {
        if !t.coeff.is_positive() || t.exponent.is_negative() {
            return Err(ScheduleError::Invalid(alloc::format!("term {t} needs a positive coefficient and exponent >= 0")));
        }
    }
    let series = |p: Ratio<i64>| classify(&LogPowerTerm::new(vec![p]));
    for i in 0..k {
        if series(a.delta[i].exponent) != SeriesClass::Divergent {
            return Err(ScheduleError::HypothesisViolated(alloc::format!("Σ δ_{i} converges")));
        }
        if series(a.delta[i].exponent + a.epsilon[i].exponent) != SeriesClass::Convergent {
            return Err(ScheduleError::HypothesisViolated(alloc::format!("Σ δ_{i} ε_{i} diverges")));
        }
        for j in i + 1..k {
            if series(a.delta[j].exponent + a.epsilon[i].exponent) != SeriesClass::Divergent {
                return Err(ScheduleError::HypothesisViolated(alloc::format!("Σ δ_{j} ε_{i} converges")));
            }
        }
    }
    Ok(())
}

fn accelerated_valid_at(a: &Accelerated, n: u64) -> bool {
    let k = a.k_growth.k(n) as usize;
    if k == 0 {
        return false;
    }
    let sum: Rational = (0..k).map(|i| a.delta[i].eval(n)).sum();
    sum < Rational::one() && (0..k).all(|i| a.epsilon[i].eval(n) < Rational::one())
}

/// First n with k(n) >= 1, Σδ < 1 and every ε < 1; validity is re-checked at each later jump of k,
/// since between jumps all terms decrease.
fn accelerated_start(a: &Accelerated) -> Result<u64, ScheduleError> {
    let start = (1..100_000u64)
        .find(|&n| accelerated_valid_at(a, n))
        .ok_or_else(|| ScheduleError::Invalid("no valid block below 100000".into()))?;
    for &(from, _) in a.k_growth.steps() {
        if from > start && !accelerated_valid_at(a, from) {
            return Err(ScheduleError::Invalid(alloc::format!("branch probabilities exceed 1 at n = {from}")));
        }
    }
    Ok(start)
}

/// Finite block count or the whole tail, evaluated to the given tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Blocks(u64),
    Infinite { tol: f64 },
}

/// An enclosure, with the exact value when one is available.
#[derive(Debug, Clone, PartialEq)]
pub struct Enclosure {
    pub interval: Interval,
    pub exact: Option<Rational>,
}

impl Enclosure {
    pub fn exact(r: Rational) -> Self {
        Enclosure { interval: Interval::from_rational(&r), exact: Some(r) }
    }

    pub fn interval(i: Interval) -> Self {
        Enclosure { interval: i, exact: None }
    }

    pub fn lo(&self) -> f64 {
        self.interval.lo()
    }

    pub fn hi(&self) -> f64 {
        self.interval.hi()
    }

    pub fn width(&self) -> f64 {
        self.interval.width()
    }
}

/// Certified over-approximation of g(i): the least N with Σ_{n>N} δ_{i-1}ε_{i-1} <= 2^-i.
pub fn g(i: u32) -> Result<BigExpr, ScheduleError> {
    if i == 0 {
        return Err(ScheduleError::Invalid("g starts at 1".into()));
    }
    let t = faithful_delta_term(i - 1).mul(&faithful_epsilon_term(i - 1));
    let target = libm::ldexp(1.0, -(i as i32));
    if let Some(first) = t.n_min().ok().filter(|_| i == 1) {
        // scan while the numbers stay small
        let mut n = first;
        while n < 1_000_000 {
            if tail_upper_bound(&t, n)? <= target {
                return Ok(BigExpr::int(n));
            }
            n += 1;
        }
    }
    // 1/log_i(N) plus a vanishing first term stays below 2^-i once log_i N exceeds 2^i (1 + 1e-9)
    let base = Interval::point(libm::ldexp(1.0, i as i32)) * Interval::new(1.0, 1.0 + 1e-9);
    Ok(BigExpr::tower_of(i, base).add_small(1.0))
}

/// h(1) = 2, h(i+1) = ceil(max(g(i+1), Tower(i+2), least m with Σ_{n=h(i)}^{m} ε_{i-1}(n) >= 1)).
pub fn h(i: u32) -> Result<BigExpr, ScheduleError> {
    if i == 0 {
        return Err(ScheduleError::Invalid("h starts at 1".into()));
    }
    if i == 1 {
        return Ok(BigExpr::int(2));
    }
    let prev = h(i - 1)?;
    let m = eps_mass_reach(i - 1, &prev)?;
    Ok(g(i)?.max(&tower(i + 1)).max(&m).add_small(1.0))
}

/// Least m (or a certified upper bound on it) with Σ_{n=start}^{m} ε_{j-1}(n) >= 1.
pub fn eps_mass_reach(j: u32, start: &BigExpr) -> Result<BigExpr, ScheduleError> {
    if let Some(v) = start.value().filter(|v| v.hi() < 1e7) {
        let mut n = libm::ceil(v.lo()) as u64;
        let first = n;
        let mut sum = Interval::point(0.0);
        while n < first + 10_000_000 {
            let mut d = Interval::from_rational(&big(n));
            for l in 1..=j {
                d = d * log_iter(l, n as f64)?;
            }
            sum = sum + Interval::point(1.0) / d;
            if sum.lo() >= 1.0 {
                return Ok(BigExpr::int(n));
            }
            n += 1;
        }
    }
    // Σ_{n=a}^{m} ε_{j-1}(n) >= log_{j+1}(m+1) - log_{j+1}(a), so m = E_{j+1}(log_{j+1} a + 1) suffices
    let mut x = *start;
    for _ in 0..=j {
        x = x.ln()?;
    }
    let mut y = BigExpr::lit(x.value().unwrap_or(x.base()) + Interval::point(1.0));
    if x.height() > 0 {
        y = BigExpr::tower_of(x.height(), x.base().max(&Interval::point(0.0)) + Interval::point(1.0));
    }
    for _ in 0..=j {
        y = y.exp();
    }
    Ok(y)
}

/// Largest i with h(i) <= n.
pub fn k_of(n: u64) -> u32 {
    if n < 2 {
        return 0;
    }
    let mut i = 1;
    while let Ok(next) = h(i + 1) {
        match next.le_u64(n) {
            Some(true) => i += 1,
            _ => break,
        }
        if i > 8 {
            break;
        }
    }
    i
}

/// Exact value of a rational as an f64 interval, and back.
pub fn interval_to_rational_bounds(i: &Interval) -> (Rational, Rational) {
    (from_f64_exact(i.lo()), from_f64_exact(i.hi()))
}

/// Integer part, saturating, for display of big m values.
pub fn bigint_to_f64(x: &BigInt) -> f64 {
    x.to_f64().unwrap_or(f64::INFINITY)
}

pub fn describe(s: &Schedule) -> String {
    let mut out = String::new();
    out.push_str(s.name());
    out.push_str(&alloc::format!(" N*={}", s.n_star()));
    if let Some(k) = s.k_max() {
        out.push_str(&alloc::format!(" k_max={k}"));
    }
    if let Family::Accelerated(a) = s.family() {
        let ds: Vec<String> = a.delta.iter().map(|t| t.to_string()).collect();
        let es: Vec<String> = a.epsilon.iter().map(|t| t.to_string()).collect();
        out.push_str(&alloc::format!(" δ=[{}] ε=[{}]", ds.join(", "), es.join(", ")));
    }
    out
}

#[allow(dead_code)]
fn lcm_all(xs: &[BigInt]) -> BigInt {
    xs.iter().fold(BigInt::one(), |a, b| a.lcm(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rat;

    #[test]
    fn towers() {
        assert_eq!(tower(0).value().unwrap(), Interval::point(1.0));
        assert!(tower(2).value().unwrap().contains(15.154262241479262));
        let t5 = tower(5);
        assert!(t5.value().is_none());
        assert_eq!(t5.compare(&tower(4)), Some(Ordering::Greater));
        assert_eq!(tower(4).compare(&tower(5)), Some(Ordering::Less));
    }

    #[test]
    fn iterated_logs() {
        assert!(log_iter(1, libm::exp(2.0)).unwrap().contains(2.0));
        assert!(log_iter(2, tower(2).value().unwrap().mid()).unwrap().contains(1.0));
        assert!(log_iter(2, tower(3).value().unwrap().mid()).unwrap().contains(core::f64::consts::E));
        assert!(log_iter(2, 0.5).is_err());
    }

    #[test]
    fn bertrand() {
        assert_eq!(classify(&LogPowerTerm::from_ints(&[2])), SeriesClass::Convergent);
        assert_eq!(classify(&LogPowerTerm::from_ints(&[1, 1])), SeriesClass::Divergent);
        assert_eq!(classify(&LogPowerTerm::from_ints(&[1, 2])), SeriesClass::Convergent);
        assert_eq!(classify(&LogPowerTerm::from_ints(&[1, 1, 1])), SeriesClass::Divergent);
        assert_eq!(classify(&LogPowerTerm::from_ints(&[0])), SeriesClass::Divergent);
    }

    #[test]
    fn p_series_tail() {
        let t = LogPowerTerm::from_ints(&[2]);
        let b = tail_upper_bound(&t, 10).unwrap();
        assert!(b >= 0.1 && b < 0.1 + 1e-12);
        assert!(tail_upper_bound(&t, 100).unwrap() < b);
        assert_eq!(tail_upper_bound(&LogPowerTerm::from_ints(&[1]), 10), Err(ScheduleError::DivergentTerm));
    }

    #[test]
    fn ln_rational_encloses() {
        for (x, bits) in [(rat(7, 1), 40), (rat(1, 3), 60), (rat(1000001, 1000), 80)] {
            let (lo, hi) = ln_rational(&x, bits);
            let f = libm::log(to_f64(&x));
            assert!(to_f64(&lo) <= f + 1e-15 && to_f64(&hi) >= f - 1e-15);
            assert!(&hi - &lo < Rational::new(BigInt::one(), BigInt::one() << bits as usize));
        }
    }

    #[test]
    fn h_values() {
        assert_eq!(h(1).unwrap().value().unwrap(), Interval::point(2.0));
        let h2 = h(2).unwrap();
        assert!(h2.le_u64(u64::MAX) == Some(false));
        assert_eq!(k_of(3), 1);
        assert_eq!(k_of(u64::MAX), 1);
        assert_eq!(eps_mass_reach(1, &BigExpr::int(2)).unwrap().value().unwrap().mid(), 3.0);
    }

    #[test]
    fn rewards() {
        let a = Schedule::faithful_a();
        let ms = a.m_table(6);
        assert_eq!(ms[0], BigInt::one());
        assert_eq!(ms[1], BigInt::from(2));
        assert_eq!(ms[2], BigInt::from(6));
        let b = Schedule::faithful_b().m_table(6);
        assert_eq!(b[1], BigInt::one());
        assert_eq!(b[2], BigInt::from(2));
    }

    #[test]
    fn telescoping_product() {
        let s = Schedule::accel_telescoping();
        assert_eq!(s.n_star(), 2);
        let p = s.survival_product(2, Horizon::Infinite { tol: 1e-6 }).unwrap();
        assert!(p.lo() <= 0.5 && p.hi() >= 0.5 && p.width() <= 1e-6, "{p:?}");
        let fin = s.survival_product(2, Horizon::Blocks(9)).unwrap();
        assert_eq!(fin.exact.unwrap(), rat(11, 20));
    }

    #[test]
    fn skip_index_monotone() {
        let s = Schedule::accel_telescoping();
        assert_eq!(s.skip_index(1.0).unwrap(), 2);
        let a = s.skip_index(0.5).unwrap();
        let b = s.skip_index(0.1).unwrap();
        let c = s.skip_index(0.01).unwrap();
        assert!(a <= b && b <= c);
        // ∏_{n>=N} (1 - 1/n^2) = (N-1)/N
        assert!((b - 1) as f64 / b as f64 >= 0.9);
    }

    #[test]
    fn confusion_endpoints() {
        let s = Schedule::accel_confusion();
        let n = 30;
        let (i, j) = (1, 3);
        let di = s.delta(i, n).unwrap().exact().unwrap().clone();
        let dj = s.delta(j, n).unwrap().exact().unwrap().clone();
        let ei = s.epsilon(i, n).unwrap().exact().unwrap().clone();
        let ej = s.epsilon(j, n).unwrap().exact().unwrap().clone();
        let at1 = s.confusion_bound(n, i, j, &Rational::one()).unwrap();
        assert_eq!(at1.exact().unwrap(), &(&dj * &ej + &di));
        let at0 = s.confusion_bound(n, i, j, &Rational::zero()).unwrap();
        assert_eq!(at0.exact().unwrap(), &((&di + &dj) * &ei));
    }

    #[test]
    fn starts() {
        assert_eq!(Schedule::accel_mimic().n_star(), 2);
        assert_eq!(Schedule::accel_confusion().n_star(), 12);
        assert_eq!(Schedule::faithful_a().n_star(), 3);
        assert!(Schedule::faithful_a().well_defined_at(3).unwrap());
    }

    #[test]
    fn rationalized_gamma_close() {
        let s = Schedule::rationalized_a();
        for n in [3u64, 10, 40, 90] {
            let g = s.delta(0, n).unwrap().exact().unwrap().clone();
            let d = 1.0 / libm::log(n as f64);
            let gap = to_f64(&g) - d;
            assert!(gap > -1e-15 && gap < libm::ldexp(1.0, -(n as i32)) + 1e-15, "n={n} gap={gap}");
        }
    }
}
