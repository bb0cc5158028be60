use cmdp_core::gadgets::{audit_depths, block_total, mimic_fr, skip_then_mimic, BranchMachine, ChainSpec, GadgetChain, Variant};
use cmdp_core::mdp::{validate_local, CountableMdp};
use cmdp_core::monitor::bfs_depths;
use cmdp_core::numeric::{big, int, to_f64, Rational};
use cmdp_core::schedule::{Horizon, Schedule};
use cmdp_core::sim::{exact_block_dp, BadSet, DpOptions};

fn chain(schedule: &Schedule, variant: Variant, blocks: u64) -> GadgetChain {
    GadgetChain::build(schedule, ChainSpec::new(variant, blocks)).unwrap()
}

#[test]
fn mimic_survival_is_the_product() {
    let s = Schedule::accel_mimic();
    let ch = chain(&s, Variant::StepImplicit, 30);
    let dp = exact_block_dp(&ch, &mimic_fr(&ch).unwrap(), &DpOptions::blocks(25, BadSet::ALL)).unwrap();
    let enc = s.survival_product(s.n_star(), Horizon::Blocks(25)).unwrap();
    let v = to_f64(&dp.survived);
    assert!(enc.lo() <= v && v <= enc.hi(), "{v} outside [{}, {}]", enc.lo(), enc.hi());
    assert_eq!(to_f64(&dp.dip), 0.0);
}

#[test]
fn skipping_buys_survival() {
    let s = Schedule::accel_mimic();
    let ch = chain(&s, Variant::StepImplicit, 60);
    let (plain, _) = skip_then_mimic(&ch, 1.0).unwrap();
    let (skip, n) = skip_then_mimic(&ch, 0.1).unwrap();
    assert!(n > s.n_star());
    let opts = DpOptions::blocks(50, BadSet::SINK);
    let a = exact_block_dp(&ch, &plain, &opts).unwrap().survived;
    let b = exact_block_dp(&ch, &skip, &opts).unwrap().survived;
    assert!(b > a);
}

#[test]
fn chains_are_locally_valid() {
    for variant in [Variant::StepImplicit, Variant::Restart, Variant::RewardImplicit] {
        let ch = chain(&Schedule::accel_telescoping(), variant, 16);
        let depths = bfs_depths(&ch, &ch.initial(), 12).unwrap();
        assert!(depths.len() > 10);
        for s in depths.keys() {
            let r = validate_local(&ch, s, 1e-12, 16).unwrap();
            assert!(r.passed, "{variant:?} {s}: {:?}", r.detail);
        }
    }
}

#[test]
fn block_totals_and_depths() {
    let s = Schedule::accel_mimic();
    let ch = chain(&s, Variant::StepImplicit, 6);
    for n in s.n_star()..ch.last_block() {
        let m = Rational::from_integer(ch.m(n).unwrap());
        let k = ch.k(n).unwrap() as u64;
        for i in 0..=k {
            for j in 0..=k {
                assert_eq!(block_total(&ch, n, i, j).unwrap(), (big(i) - big(j)) * &m);
            }
        }
    }
    assert!(audit_depths(&ch, ch.last_block() - 1).is_ok());
}

#[test]
fn one_mode_machine_cannot_track_the_branch() {
    let s = Schedule::accel_confusion();
    let ch = chain(&s, Variant::StepImplicit, 40);
    let machine = BranchMachine { modes: 1, initial: 0, enter_from: 0, observe: vec![vec![(0, int(1))]], act: vec![vec![(1, int(1))]] };
    let dp = exact_block_dp(&ch, &machine.strategy(&ch).unwrap(), &DpOptions::blocks(30, BadSet::ALL)).unwrap();
    let bound = s.confusion_product(s.n_star(), s.n_star() + 29, 1).unwrap();
    assert!(to_f64(&dp.survived) <= bound.last().unwrap().interval().hi() + 1e-12);
}
