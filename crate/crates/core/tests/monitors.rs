use cmdp_core::monitor::{safety_level_holds, safety_threshold, MonitorState, PayoffKind, SafetyLevelSpec, SafetyStatus};
use cmdp_core::numeric::{int, rat, Rational};
use proptest::prelude::*;

proptest! {
    #[test]
    fn monitor_matches_definitions(rs in prop::collection::vec(-20i64..20, 1..40)) {
        let mut m = MonitorState::new();
        let mut total = Rational::from_integer(0.into());
        for (t, r) in rs.iter().enumerate() {
            m.observe(&int(*r));
            total += int(*r);
            prop_assert_eq!(m.steps(), t as u64 + 1);
            prop_assert_eq!(m.value(PayoffKind::Point), Some(int(*r)));
            prop_assert_eq!(m.value(PayoffKind::Total), Some(total.clone()));
            prop_assert_eq!(m.value(PayoffKind::Mean), Some(&total / int(t as i64 + 1)));
        }
    }
}

#[test]
fn empty_monitor_has_no_point_payoff() {
    let m = MonitorState::new();
    assert_eq!(m.value(PayoffKind::Point), None);
    assert_eq!(m.observed(&rat(1, 2)).last(), Some(&rat(1, 2)));
}

#[test]
fn safety_levels() {
    assert_eq!(safety_threshold(3), rat(-1, 8));
    let rs = [int(-5), rat(-1, 16), rat(-1, 8), int(0)];
    let spec = |level, k| SafetyLevelSpec { level, k };
    assert_eq!(safety_level_holds(&rs, spec(3, 1)), SafetyStatus::HoldsSoFar);
    assert_eq!(safety_level_holds(&rs, spec(3, 0)), SafetyStatus::Violated);
    assert_eq!(safety_level_holds(&rs, spec(4, 1)), SafetyStatus::Violated);
    assert_eq!(safety_level_holds(&rs, spec(4, 9)), SafetyStatus::Undetermined);
}
