use cmdp_core::schedule::{classify, KGrowth, LogPowerTerm, Schedule, SeriesClass};
use proptest::prelude::*;

#[test]
fn faithful_series_split() {
    let s = Schedule::faithful_a();
    for i in 0..=4u32 {
        let d = s.delta_term(i).unwrap();
        assert_eq!(classify(&d), SeriesClass::Divergent, "delta_{i}");
        assert_eq!(classify(&d.mul(&s.epsilon_term(i).unwrap())), SeriesClass::Convergent, "delta_{i} eps_{i}");
        for j in i + 1..=5 {
            assert_eq!(classify(&s.delta_term(j).unwrap().mul(&s.epsilon_term(i).unwrap())), SeriesClass::Divergent, "delta_{j} eps_{i}");
        }
    }
}

#[test]
fn bertrand_boundary() {
    assert_eq!(classify(&LogPowerTerm::from_ints(&[1])), SeriesClass::Divergent);
    assert_eq!(classify(&LogPowerTerm::from_ints(&[2])), SeriesClass::Convergent);
    assert_eq!(classify(&LogPowerTerm::from_ints(&[1, 1, 1])), SeriesClass::Divergent);
    assert_eq!(classify(&LogPowerTerm::from_ints(&[1, 1, 2])), SeriesClass::Convergent);
    assert_eq!(classify(&LogPowerTerm::from_ints(&[1, 2, -5])), SeriesClass::Convergent);
}

#[test]
fn skip_index_shrinks_with_eps() {
    let s = Schedule::accel_mimic();
    let mut last = s.n_star();
    for eps in [0.5, 0.2, 0.05, 0.01] {
        let n = s.skip_index(eps).unwrap();
        assert!(n >= last);
        last = n;
    }
    assert_eq!(s.skip_index(1.0).unwrap(), s.n_star());
}

#[test]
fn presets_resolve() {
    for name in Schedule::preset_names() {
        let s = Schedule::preset(name).unwrap();
        assert_eq!(s.name(), *name);
        assert!(s.well_defined_at(s.n_star()).unwrap(), "{name}");
    }
    assert!(Schedule::preset("nope").is_none());
}

proptest! {
    #[test]
    fn linear_growth_is_monotone(width in 1u64..50, k_max in 1u32..8, n in 0u64..1000) {
        let g = KGrowth::linear(width, k_max);
        prop_assert!(g.k(n) <= g.k(n + 1));
        prop_assert!(g.k(n) <= k_max);
        prop_assert_eq!(g.k(width * k_max as u64 + 1), k_max);
    }

    #[test]
    fn accelerated_probabilities_sum_to_one(n in 2u64..400) {
        let s = Schedule::accel_confusion();
        prop_assume!(n >= s.n_star());
        let sum: f64 = s.deltas(n).unwrap().iter().map(|p| p.to_f64()).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(s.epsilons(n).unwrap().iter().all(|e| e.to_f64() >= 0.0 && e.to_f64() <= 1.0));
    }
}
