use cmdp_core::numeric::{ceil_log2, floor_log2, from_f64_exact, rat, sum_probs, to_f64, Interval, Prob};
use proptest::prelude::*;

proptest! {
    #[test]
    fn interval_encloses_rational(num in -1_000_000i64..1_000_000, den in 1i64..1_000_000_007) {
        let r = rat(num, den);
        let i = Interval::from_rational(&r);
        prop_assert!(i.lo() <= i.hi());
        prop_assert!(from_f64_exact(i.lo()) <= r && r <= from_f64_exact(i.hi()));
    }

    #[test]
    fn exact_probs_stay_exact(a in 0i64..100, b in 0i64..100) {
        let (p, q) = (Prob::Exact(rat(a, 100)), Prob::Exact(rat(b, 100)));
        prop_assert_eq!(p.mul(&q).exact().cloned(), Some(rat(a * b, 10_000)));
        prop_assert_eq!(p.one_minus().exact().cloned(), Some(rat(100 - a, 100)));
        prop_assert_eq!(sum_probs([&p, &q]).exact().cloned(), Some(rat(a + b, 100)));
    }

    #[test]
    fn mixed_sums_enclose(a in 0i64..100, x in 0.0f64..0.5) {
        let s = sum_probs([&Prob::Exact(rat(a, 200)), &Prob::Approx(Interval::around(x))]).interval();
        prop_assert!(s.contains(a as f64 / 200.0 + x));
    }

    #[test]
    fn logs_bracket(n in 1u64..u64::MAX) {
        let (f, c) = (floor_log2(n), ceil_log2(n));
        prop_assert!(1u128 << f <= n as u128 && (n as u128) <= 1u128 << c);
        prop_assert!(c - f <= 1);
    }
}

#[test]
fn transcendental_enclosures() {
    let e = Interval::point(1.0).exp();
    assert!(e.contains(std::f64::consts::E));
    assert!(Interval::point(2.0).ln().contains(std::f64::consts::LN_2));
    assert!(Interval::point(0.5).ln_one_minus().contains(-std::f64::consts::LN_2));
    assert_eq!(to_f64(&rat(3, 8)), 0.375);
}
