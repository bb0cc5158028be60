use cmdp_core::gadgets::{
    audit_depths, audit_totals, block_total, leaf_probabilities, mimic, mimic_fr, padded_dip_check, ChainSpec, Flags, GadgetChain,
    Variant,
};
use cmdp_core::mdp::Role;
use cmdp_core::numeric::{big, sum_probs, to_f64, Prob, Rational};
use cmdp_core::schedule::{Horizon as Span, Schedule};
use cmdp_core::sim::{exact_block_dp, sample_run, BadSet, DpOptions};
use num_traits::Zero;
use serde_json::json;

use super::oracles;
use crate::formats::ScheduleSpec;
use crate::{ExperimentConfig, LabError, Outcome, Row};

pub fn reward_implicit(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let id = cfg.experiment.as_str();
    let mut out = Outcome::new(id, 8);
    let chain = cfg.chain()?.build()?;
    if chain.variant() != Variant::RewardImplicit {
        return Err(LabError::ConfigInvalid("reward-implicit needs a reward-implicit chain".into()));
    }
    let (first, last) = (chain.n_star(), chain.last_block() - 1);
    let half = Rational::new(1.into(), 2.into());

    // independent path-length model, agreeing with the chain where it is materialised and running past it
    let dip_blocks = cfg.u64("dip_blocks")?;
    let ks = (first..first + dip_blocks).map(|n| chain.schedule().k(n)).collect::<Vec<_>>();
    let model = oracles::ri_error_means(first, &ks);
    let mut disagreements = 0usize;

    // per block: the mimic's own dip against -1/n
    let mut mimic_worst: Option<Rational> = None;
    let mut mimic_bad = Vec::new();
    for n in first..=last {
        let k = chain.k(n)?;
        let floor = -big(n).recip();
        for i in 0..=k {
            let (short, long) = chain.ri_dip(n, i, i)?;
            let low = short.clone().min(long.clone());
            if low < floor {
                mimic_bad.push((n, i));
            }
            let scaled = &low * big(n);
            mimic_worst = Some(mimic_worst.map_or(scaled.clone(), |w| w.min(scaled)));
            for j in i..=k {
                let (short, long) = chain.ri_dip(n, i, j)?;
                let want = model.iter().find(|e| (e.0, e.1, e.2) == (n, i, j)).map(|e| &e.3);
                disagreements += usize::from(want.is_some_and(|w| *w != long.clone().max(short)));
            }
        }
    }
    let mw = mimic_worst.unwrap_or_else(Rational::zero);
    out.push(Row::new(id, format!("mimic dip, n in [{first},{last}]"), mimic_bad.is_empty()).exact(format!("min n*mean = {mw}")));
    if !mimic_bad.is_empty() {
        out.fail(format!("mimic dips below -1/n at {:?}", &mimic_bad[..mimic_bad.len().min(4)]));
    }

    // sampled runs of the step-counter mimic, exact rewards, stopping at the sink
    let strat = mimic(&chain)?;
    let runs = cfg.u64("runs")?;
    let steps = chain.max_depth(last + 1)?;
    let mut violations = 0u64;
    let mut checked = 0u64;
    for r in 0..runs {
        let run = sample_run(&chain, &strat, cfg.plan.seed, r, steps)?;
        let mut total = Rational::zero();
        for (t, st) in run.steps().iter().enumerate() {
            let src = run.state(t);
            let tgt = run.state(t + 1);
            if tgt.role() == Some(Role::Bot) || tgt.coord().is_some_and(|c| c.n > last) {
                break;
            }
            total += &st.reward;
            let n = src.coord().map_or(first, |c| c.n);
            checked += 1;
            if &total / big(t as u64 + 1) < -big(n).recip() {
                violations += 1;
            }
        }
    }
    out.push(Row::new(id, format!("{runs} sampled runs"), violations == 0).exact(format!("{violations} of {checked} prefixes below -1/n")));
    if violations > 0 {
        out.fail(format!("{violations} sampled prefixes dip below -1/n"));
    }

    // the dip an upward error forces, kept apart for i = 0 and i >= 1
    out.push(Row::new(id, format!("path model vs chain, n in [{first},{last}]"), disagreements == 0).exact(format!("{disagreements} disagreements")));
    if disagreements > 0 {
        out.fail(format!("path-length model disagrees with the chain {disagreements} times"));
    }
    let error_bad: Vec<_> = model.iter().filter(|e| e.2 > e.1 && e.3 > -half.clone()).map(|e| (e.0, e.1, e.2)).collect();
    let upto = first + dip_blocks - 1;
    for (slot, label) in [(false, "i = 0"), (true, "i >= 1")] {
        let Some(ew) = model.iter().filter(|e| e.2 > e.1 && (e.1 > 0) == slot).map(|e| e.3.clone()).max() else {
            continue;
        };
        let bad = error_bad.iter().filter(|e| (e.1 > 0) == slot).count();
        let late = model.iter().filter(|e| e.2 > e.1 && (e.1 > 0) == slot && e.0 == upto).map(|e| e.3.clone()).max();
        let late = late.map_or_else(|| "-".into(), |x| show(&x));
        out.push(
            Row::new(id, format!("error dip from {label}, n in [{first},{upto}]"), bad == 0)
                .exact(format!("max mean {}, at n={upto} {late}, {bad} above -1/2", show(&ew))),
        );
    }
    if !error_bad.is_empty() {
        out.fail(format!("an upward error leaves the mean above -1/2 at {:?}", &error_bad[..error_bad.len().min(4)]));
    }

    // the padding bound on the faithful recurrence, as exact integers
    let faithful = ScheduleSpec::preset(&cfg.string("padding_schedule")?).to_schedule()?;
    let upto = cfg.u64("padding_blocks")?;
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for n in faithful.n_star()..faithful.n_star() + upto {
        for (i, beta, bound, ok) in padded_dip_check(&faithful, n)? {
            if !ok {
                failures.push(format!("n={n} i={i}: β={beta} > 2m^{}={bound}", i + 1));
            }
            rows.push(json!({"n": n, "i": i, "beta": beta.to_string(), "bound": bound.to_string(), "ok": ok}));
        }
    }
    out.push(Row::new(id, format!("padding, {} blocks of {}", upto, faithful.name()), failures.is_empty()).exact(format!("{} of {} fail", failures.len(), rows.len())));
    out.record(json!({"kind": "padding", "experiment": id, "schedule": faithful.name(), "checks": rows}));
    if !failures.is_empty() {
        out.fail(format!("padding bound fails: {}", failures[0]));
    }
    if out.pass {
        out.note("mimic dips stay above -1/n; errors force means below -1/2");
    }
    Ok(out)
}

fn show(x: &Rational) -> String {
    let v = to_f64(x);
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "below -1e308".into()
    }
}

fn build(schedule: &Schedule, variant: Variant, flags: Flags, blocks: u64) -> Result<GadgetChain, LabError> {
    Ok(GadgetChain::build(schedule, ChainSpec { variant, flags, blocks })?)
}

pub fn strengthening(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let id = cfg.experiment.as_str();
    let mut out = Outcome::new(id, 10);
    let blocks = cfg.u64("blocks")?;
    let plain_f = Flags::default();
    let binary = Flags { binary: true, ..plain_f };
    let bounded = Flags { bounded: true, ..plain_f };
    let both = Flags { binary: true, bounded: true, ..plain_f };

    for name in ["schedule", "bounded_schedule"] {
        let sched = ScheduleSpec::preset(&cfg.string(name)?).to_schedule()?;
        let plain = build(&sched, Variant::StepImplicit, plain_f, blocks)?;
        let variants = if name == "schedule" { vec![("binary", binary)] } else { vec![("bounded", bounded), ("binary+bounded", both)] };
        for (label, flags) in variants {
            let other = build(&sched, Variant::StepImplicit, flags, blocks)?;
            let (mut leaves_ok, mut totals_ok, mut blocks_seen) = (true, true, 0);
            for n in plain.n_star()..plain.last_block() {
                if sched.k(n) + 1 > 8 {
                    continue;
                }
                blocks_seen += 1;
                leaves_ok &= leaf_probabilities(&plain, n)? == leaf_probabilities(&other, n)?;
                let k = sched.k(n) as u64;
                let m = Rational::from_integer(plain.m(n)?);
                for i in 0..=k {
                    for j in 0..=k {
                        let want = (big(i) - big(j)) * &m;
                        totals_ok &= block_total(&plain, n, i, j)? == want && block_total(&other, n, i, j)? == want;
                    }
                }
            }
            let audit = audit_depths(&other, other.last_block() - 1);
            let dp_plain = exact_block_dp(&plain, &mimic_fr(&plain)?, &DpOptions::blocks(blocks - 1, BadSet::ALL))?;
            let dp_other = exact_block_dp(&other, &mimic_fr(&other)?, &DpOptions::blocks(blocks - 1, BadSet::ALL))?;
            let dp_ok = dp_plain.survived == dp_other.survived && dp_plain.sink == dp_other.sink;
            let ok = leaves_ok && totals_ok && audit.is_ok() && dp_ok;
            let edges = audit.as_ref().map_or_else(|e| e.clone(), |n| format!("{n} edges"));
            out.push(
                Row::new(id, format!("{} {label}, {blocks_seen} blocks", sched.name()), ok)
                    .exact(format!("leaves {leaves_ok}, totals {totals_ok}, depths {edges}, dp {}", to_f64(&dp_other.survived))),
            );
            if !ok {
                out.fail(format!("{} {label}: leaves {leaves_ok}, totals {totals_ok}, depths {edges}, dp equal {dp_ok}", sched.name()));
            }
        }
    }

    // reward-implicit binary chains keep the totals their states declare
    let ri = ScheduleSpec { recurrence: Some("B".into()), ..ScheduleSpec::preset(&cfg.string("ri_schedule")?) }.to_schedule()?;
    for flags in [plain_f, binary] {
        let ch = build(&ri, Variant::RewardImplicit, flags, cfg.u64("ri_blocks")?)?;
        let res = audit_totals(&ch, ch.last_block() - 1);
        let ok = res.is_ok();
        out.push(Row::new(id, format!("{} reward-implicit {flags}", ri.name()), ok).exact(res.as_ref().map_or_else(|e| e.clone(), |n| format!("{n} totals"))));
        if let Err(e) = res {
            out.fail(e);
        }
    }

    // rationalized chain against the real-valued survival product
    let faithful = ScheduleSpec::preset(&cfg.string("faithful_schedule")?).to_schedule()?;
    let rb = cfg.u64("rational_blocks")?;
    let rat_chain = build(&faithful, Variant::StepImplicit, Flags { rationalized: true, ..plain_f }, rb + 2)?;
    let dp = exact_block_dp(&rat_chain, &mimic_fr(&rat_chain)?, &DpOptions::blocks(rb, BadSet::SINK))?;
    let enc = faithful.survival_product(faithful.n_star(), Span::Blocks(rb))?;
    // each block's loss Σγθ moves from Σδε by a measured amount, capped a priori by 4(k+1)2^-n
    let first = faithful.n_star();
    let rational = rat_chain.schedule();
    let (mut slack, mut over_cap) = (0.0f64, Vec::new());
    for n in first..first + rb {
        let loss = |s: &Schedule| -> Result<Prob, LabError> {
            let (d, e) = (s.deltas(n)?, s.epsilons(n)?);
            Ok(sum_probs(d.iter().zip(&e).map(|(d, e)| d.mul(e)).collect::<Vec<_>>().iter()))
        };
        let (real, rat) = (loss(&faithful)?.interval(), loss(rational)?.interval());
        let moved = (rat.hi() - real.lo()).max(real.hi() - rat.lo()).max(0.0);
        if moved > 4.0 * (faithful.k(n) as f64 + 1.0) * 2f64.powi(-(n as i32)) {
            over_cap.push(n);
        }
        slack += moved;
    }
    let v = to_f64(&dp.survived);
    let (lo, hi) = (enc.lo() - slack, enc.hi() + slack);
    let ok = v >= lo && v <= hi && over_cap.is_empty();
    out.push(
        Row::new(id, format!("rationalized {} N={rb}", faithful.name()), ok)
            .analytic(lo, hi)
            .exact(format!("{v:.15}; perturbation {slack:.3e}, {} blocks over 4(k+1)2^-n", over_cap.len())),
    );
    if !ok {
        out.fail(format!("rationalized DP {v} outside [{lo}, {hi}] or blocks {over_cap:?} over the cap"));
    }
    if out.pass {
        out.note("branch probabilities, block totals, depths and DP values agree across strengthenings");
    }
    Ok(out)
}
