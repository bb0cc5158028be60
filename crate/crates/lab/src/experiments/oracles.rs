//! Reference computations kept independent of the core routines they check.

use cmdp_core::numeric::Rational;
use cmdp_core::schedule::SeriesClass;
use num_bigint::BigInt;
use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};

/// ln of 1/t(e^x) for t(n) = 1/(n^a0 (ln n)^a1 (ln ln n)^a2 ...), evaluated from x = ln n.
fn neg_ln_term(exps: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    let mut l = x;
    for (i, a) in exps.iter().enumerate() {
        if i > 0 {
            l = l.ln();
        }
        acc += a * l;
    }
    acc
}

/// Cauchy condensation, numerically: sum t(n) and sum 2^k t(2^k) converge together. The slope of
/// ln(2^k t(2^k)) in k decides when it is clearly nonzero; when it vanishes the condensed terms
/// behave like a log-power term in k with the remaining exponents, so recurse on those.
pub fn condensation_class(exps: &[f64]) -> SeriesClass {
    if exps.is_empty() {
        return SeriesClass::Divergent;
    }
    let ln2 = std::f64::consts::LN_2;
    let g = |k: f64| k * ln2 - neg_ln_term(exps, k * ln2);
    let (k1, k2) = (1.0e6, 2.0e6);
    let slope = (g(k2) - g(k1)) / (k2 - k1);
    if slope > 1e-3 {
        SeriesClass::Divergent
    } else if slope < -1e-3 {
        SeriesClass::Convergent
    } else {
        condensation_class(&exps[1..])
    }
}

/// Fixed-point enclosure of atanh(p/q) for 0 <= p/q <= 1/3, scaled by 2^bits: [lo, hi] integers.
fn atanh_scaled(p: &BigInt, q: &BigInt, bits: usize) -> (BigInt, BigInt) {
    let scale = BigInt::one() << bits;
    let (p2, q2) = (p * p, q * q);
    let (mut num, mut den) = (p.clone(), q.clone());
    let mut sum = BigInt::zero();
    let mut terms = 0u64;
    let mut j = 0u64;
    loop {
        if num.is_zero() {
            break;
        }
        sum += (&scale * &num) / (&den * BigInt::from(2 * j + 1));
        terms += 1;
        num *= &p2;
        den *= &q2;
        j += 1;
        // remaining tail <= x^{2j+1} / (1 - x^2) <= (9/8) x^{2j+1}; stop once that is below one unit
        if &num * &scale * 2 < den {
            break;
        }
    }
    // each floor loses less than one unit, the tail at most two
    (sum.clone(), sum + BigInt::from(terms + 2))
}

/// Enclosure of ln n as rationals, width below 2^(20-bits) for bits <= 2^12, from ln n = e ln 2 + 2 atanh((n-2^e)/(n+2^e)).
pub fn ln_enclosure(n: u64, bits: usize) -> (Rational, Rational) {
    assert!(n >= 1);
    let e = 63 - n.leading_zeros() as u64;
    let scale = BigInt::one() << bits;
    let (l2lo, l2hi) = atanh_scaled(&BigInt::one(), &BigInt::from(3), bits);
    let p = BigInt::from(n) - (BigInt::one() << e as usize);
    let q = BigInt::from(n) + (BigInt::one() << e as usize);
    let (alo, ahi) = atanh_scaled(&p, &q, bits);
    let two_e = BigInt::from(2 * e);
    let lo = Rational::new(&two_e * l2lo + 2 * alo, scale.clone());
    let hi = Rational::new(&two_e * l2hi + 2 * ahi, scale);
    (lo, hi)
}

/// ∏_{k=1}^{K} (1 - 2^-k) exactly.
pub fn halving_partial(k_max: u64) -> Rational {
    (1..=k_max).fold(Rational::one(), |acc, k| acc * (Rational::one() - Rational::new(BigInt::one(), BigInt::one() << k as usize)))
}

/// Enclosure of the infinite product from the partial product and 1 - Σ_{k>K} 2^-k.
pub fn halving_enclosure(k_max: u64) -> (f64, f64) {
    let p = halving_partial(k_max);
    let tail = Rational::one() - Rational::new(BigInt::one(), BigInt::one() << k_max as usize);
    let lo = &p * tail;
    // round outwards by a relative 1e-15
    (lo.to_f64().unwrap() * (1.0 - 1e-15), p.to_f64().unwrap() * (1.0 + 1e-15))
}

pub fn ratio_f64(a: &Ratio<i64>) -> f64 {
    *a.numer() as f64 / *a.denom() as f64
}

/// Running mean on reaching the controlled exit of block n after random branch i and choice j, on the
/// longest history: unary fans, paths of n·m^i steps, m by recurrence B over `ks`, starting at n0.
pub fn ri_error_means(n0: u64, ks: &[u32]) -> Vec<(u64, u32, u32, Rational)> {
    let mut ms: Vec<BigInt> = Vec::new();
    let mut depth = BigInt::one();
    let mut out = Vec::new();
    for (idx, &k) in ks.iter().enumerate() {
        let n = n0 + idx as u64;
        let m = if ms.is_empty() { BigInt::one() } else { ms.iter().map(|x| num_traits::pow(x.clone(), k as usize)).sum() };
        let pow = |e: u32| num_traits::pow(m.clone(), e as usize);
        for i in 0..=k {
            let steps: BigInt = &depth + BigInt::from(n) * pow(i) + 1;
            for j in i..=k {
                out.push((n, i, j, Rational::new(-pow(j), steps.clone())));
            }
        }
        depth += BigInt::from(n) * pow(k) + 2;
        ms.push(m);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use cmdp_core::numeric::to_f64;

    #[test]
    fn condensation_on_textbook_series() {
        assert_eq!(condensation_class(&[1.0]), SeriesClass::Divergent);
        assert_eq!(condensation_class(&[2.0]), SeriesClass::Convergent);
        assert_eq!(condensation_class(&[1.0, 2.0]), SeriesClass::Convergent);
        assert_eq!(condensation_class(&[1.0, 1.0]), SeriesClass::Divergent);
        assert_eq!(condensation_class(&[1.0, 1.0, 1.5]), SeriesClass::Convergent);
        assert_eq!(condensation_class(&[0.5, 5.0]), SeriesClass::Divergent);
    }

    #[test]
    fn ln_enclosure_is_tight() {
        for n in [1u64, 2, 3, 10, 1000, 1 << 40] {
            let (lo, hi) = ln_enclosure(n, 200);
            assert!(lo <= hi);
            let x = (n as f64).ln();
            assert!((to_f64(&lo) - x).abs() < 1e-12 && (to_f64(&hi) - x).abs() < 1e-12, "{n}");
            assert!(&hi - &lo < Rational::new(BigInt::one(), BigInt::one() << 180));
        }
    }

    #[test]
    fn halving_partial_small() {
        assert_eq!(halving_partial(2), Rational::new(3.into(), 8.into()));
        let (lo, hi) = halving_enclosure(50);
        assert!(lo < 0.28879 && hi > 0.28878);
    }

    #[test]
    fn ri_means_small_chain() {
        // m = 1, 1, 2 with k = 1, 1, 2; depths 1, 5, 10
        let v = ri_error_means(2, &[1, 1, 2]);
        let at = |n, i, j| v.iter().find(|e| (e.0, e.1, e.2) == (n, i, j)).unwrap().3.clone();
        assert_eq!(at(2, 0, 1), Rational::new((-1).into(), 4.into()));
        assert_eq!(at(3, 1, 1), Rational::new((-1).into(), 9.into()));
        assert_eq!(at(4, 1, 2), Rational::new((-4).into(), 19.into()));
    }
}
