use cmdp_core::mdp::{Role, StateId};
use cmdp_core::monitor::{Reason, Verdict};
use cmdp_core::numeric::{parse_rational, rat};
use proptest::prelude::*;

fn role() -> impl Strategy<Value = Role> {
    (0..Role::ALL.len()).prop_map(|i| Role::ALL[i])
}

proptest! {
    #[test]
    fn gadget_ids_round_trip(n in 0u64..1_000_000, r in role(), branch in 0u64..64, offset in 0u64..1 << 40, row in 0u32..5) {
        let mut s = StateId::gadget(n, r, branch, offset);
        if let StateId::Gadget(c) = s {
            s = StateId::Gadget(c.in_row(row));
        }
        let text = s.to_string();
        prop_assert_eq!(text.contains('~'), row > 0);
        prop_assert_eq!(text.parse::<StateId>().unwrap(), s);
    }

    #[test]
    fn encoded_ids_round_trip(p in 0u64..100, step in 0u64..1000, num in -50i64..50, den in 1i64..20) {
        let base = StateId::Plain(p);
        let total = rat(num, den);
        for s in [
            StateId::Step(Box::new(base.clone()), step),
            StateId::Reward(Box::new(base.clone()), total.clone()),
            StateId::Mean(Box::new(base.clone()), step, total.clone()),
            StateId::Reward(Box::new(StateId::Step(Box::new(base.clone()), step)), total.clone()),
        ] {
            prop_assert_eq!(s.to_string().parse::<StateId>().unwrap(), s);
        }
    }

    #[test]
    fn rationals_round_trip(num in any::<i64>(), den in 1i64..i64::MAX) {
        let r = rat(num, den);
        prop_assert_eq!(parse_rational(&r.to_string()).unwrap(), r);
    }
}

#[test]
fn state_id_examples() {
    let s: StateId = "g12/b/3/7~2".parse().unwrap();
    let c = s.coord().unwrap();
    assert_eq!((c.n, c.role, c.branch, c.offset, c.row), (12, Role::B, 3, 7, 2));
    for bad in ["g1/b/2", "g1/zz/0/0", "q4", "g1/b/0/0~x", ""] {
        assert!(bad.parse::<StateId>().is_err(), "{bad}");
    }
}

#[test]
fn verdict_text() {
    let all = [
        Verdict::Unknown,
        Verdict::CertWin(Reason::SafeRegion),
        Verdict::CertWin(Reason::Horizon),
        Verdict::CertLose(Reason::Sink),
        Verdict::CertLose(Reason::BadEvent),
    ];
    for v in all {
        assert_eq!(v.to_string().parse::<Verdict>().unwrap(), v);
    }
    assert_eq!(Verdict::CertLose(Reason::Sink).to_string(), "lose:sink");
    assert_eq!(Verdict::Unknown.to_string(), "unknown");
    assert!("win".parse::<Verdict>().is_err());
    assert!("lose:nowhere".parse::<Verdict>().is_err());
}
