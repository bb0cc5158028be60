use cmdp_core::mdp::{CountableMdp, Degree, FiniteMdp, RngStream};
use cmdp_core::numeric::{big, Rational};
use cmdp_core::sim::sample_run;
use cmdp_core::strategy::{make_md, Strategy};
use cmdp_core::transforms::{encode_mean, encode_reward, encode_step, pull_back, Encoded, Encoding};
use num_traits::Zero;
use serde_json::json;

use crate::{ExperimentConfig, LabError, Outcome, Row};

/// FNV-1a, so choices depend on the whole encoded state but not on the platform.
fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// A memoryless choice on the encoding that reads the step and total annotations too.
fn hashed_md(base: &FiniteMdp, salt: u64) -> Strategy {
    let base = base.clone();
    make_md(move |s| match base.degree(s.base()) {
        Ok(Degree::Finite(d)) if d > 0 => (fnv(&s.to_string()) ^ salt) as usize % d,
        _ => 0,
    })
}

/// Mismatches between the payoff sequence of `strategy` on the encoding and the one its pull-back
/// produces on the base MDP, for one shared seed.
fn compare(
    base: &FiniteMdp,
    enc: &Encoded<&FiniteMdp>,
    strategy: &Strategy,
    seed: u64,
    stream: u64,
    horizon: u64,
) -> Result<u64, LabError> {
    let pulled = pull_back(strategy, enc.encoding())?;
    let on_enc = sample_run(enc, strategy, seed, stream, horizon)?;
    let on_base = sample_run(base, &pulled, seed, stream, horizon)?;
    let mut total = Rational::zero();
    let mut bad = 0;
    for (t, (e, b)) in on_enc.steps().iter().zip(on_base.steps()).enumerate() {
        total += &b.reward;
        let expected = match enc.encoding() {
            Encoding::Step => b.reward.clone(),
            Encoding::Reward => total.clone(),
            Encoding::Mean => &total / big(t as u64 + 1),
        };
        bad += u64::from(e.reward != expected || on_enc.state(t + 1).base() != on_base.state(t + 1));
    }
    bad += on_enc.len().abs_diff(on_base.len()) as u64;
    Ok(bad)
}

pub fn transform_equivalence(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let id = cfg.experiment.as_str();
    let mut out = Outcome::new(id, 3);
    let instances = cfg.u64("instances")?;
    let max_states = cfg.u64("max_states")?;
    let horizon = cfg.u64("horizon")?;
    let runs = cfg.u64("runs_per_instance")?;
    let seed = cfg.plan.seed;
    let mut by_encoding = [(Encoding::Step, 0u64, 0u64), (Encoding::Reward, 0, 0), (Encoding::Mean, 0, 0)];
    for inst in 0..instances {
        let mut rng = RngStream::new(seed, inst);
        let n = 1 + rng.below(max_states) as usize;
        let mut base = FiniteMdp::random(&mut rng, n, 3, 3);
        base.set_initial(rng.below(n as u64));
        for (encoding, entries, bad) in by_encoding.iter_mut() {
            let enc = match encoding {
                Encoding::Step => encode_step(&base),
                Encoding::Reward => encode_reward(&base),
                Encoding::Mean => encode_mean(&base),
            };
            let md = hashed_md(&base, inst);
            for r in 0..runs {
                *bad += compare(&base, &enc, &md, seed, inst * runs + r, horizon)?;
                *entries += horizon;
            }
        }
    }
    for (encoding, entries, bad) in by_encoding {
        let class = pull_back(&make_md(|_| 0), encoding)?.class();
        out.push(Row::new(id, format!("{encoding} -> {class}"), bad == 0).exact(format!("{bad} of {entries} entries differ")));
        out.record(json!({"kind": "comparison", "experiment": id, "encoding": encoding.to_string(), "pulled_back": class.to_string(), "entries": entries, "mismatches": bad}));
        if bad > 0 {
            out.fail(format!("{encoding}: {bad} mismatched entries"));
        }
    }
    out.note(format!("{instances} random MDPs x {runs} runs x {horizon} steps on each encoding"));
    Ok(out)
}
