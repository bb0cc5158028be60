use cmdp_core::gadgets::{halving_product, InfiniteBranching, Puterman};
use cmdp_core::mdp::{Role, RngStream};
use cmdp_core::monitor::Region;
use cmdp_core::numeric::{big, from_f64_exact, to_f64, Interval, Rational};
use cmdp_core::schedule::{classify, tower, LogPowerTerm, Schedule, SeriesClass};
use cmdp_core::sim::{run_trials, sample_run, Horizon, Objective, TrialPlan};
use cmdp_core::strategy::{make_countable, make_md, point};
use num_bigint::BigInt;
use num_rational::Ratio;
use num_traits::One;
use serde_json::json;

use super::common_digits;
use super::oracles::{condensation_class, halving_enclosure, halving_partial, ln_enclosure, ratio_f64};
use crate::{ExperimentConfig, LabError, Outcome, Row};

pub fn series_classification(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let id = cfg.experiment.as_str();
    let mut out = Outcome::new(id, 1);
    let max = cfg.u64("convdiv_max")? as u32;
    let f = Schedule::faithful_a();
    let term = |t: Option<LogPowerTerm>| t.expect("faithful schedules have symbolic terms");
    let (mut pairs, mut bad) = (0u32, Vec::new());
    for i in 0..=max {
        let (di, ei) = (term(f.delta_term(i)), term(f.epsilon_term(i)));
        let checks = [
            (format!("δ_{i}"), di.clone(), SeriesClass::Divergent),
            (format!("δ_{i}ε_{i}"), di.mul(&ei), SeriesClass::Convergent),
        ];
        let cross = (i + 1..=max).map(|j| (format!("δ_{j}ε_{i}"), term(f.delta_term(j)).mul(&ei), SeriesClass::Divergent));
        for (name, t, want) in checks.into_iter().chain(cross) {
            pairs += 1;
            if classify(&t) != want {
                bad.push(name);
            }
        }
    }
    out.push(Row::new(id, format!("i,j<={max}"), bad.is_empty()).exact(format!("{} of {pairs} series misclassified", bad.len())));
    if !bad.is_empty() {
        out.fail(format!("misclassified {}", bad.join(", ")));
    }

    let count = cfg.u64("random_terms")?;
    let depth = cfg.u64("max_depth")?;
    let mut rng = RngStream::new(cfg.plan.seed, 0);
    let mut mismatches = Vec::new();
    let mut convergent = 0;
    for _ in 0..count {
        let d = rng.below(depth + 1) as usize;
        let exps: Vec<Ratio<i64>> = (0..=d)
            .map(|i| {
                if rng.below(2) == 0 {
                    Ratio::one()
                } else {
                    let q = 1 + rng.below(4) as i64;
                    let lo = if i == 0 { 0 } else { -q };
                    Ratio::new(lo + rng.below((3 * q - lo + 1) as u64) as i64, q)
                }
            })
            .collect();
        let t = LogPowerTerm::new(exps.clone());
        let got = classify(&t);
        let want = condensation_class(&exps.iter().map(ratio_f64).collect::<Vec<_>>());
        convergent += u32::from(want == SeriesClass::Convergent);
        if got != want {
            mismatches.push(format!("{:?}", exps.iter().map(|a| a.to_string()).collect::<Vec<_>>()));
        }
    }
    out.push(Row::new(id, count, mismatches.is_empty()).exact(format!("{} mismatches", mismatches.len())));
    out.record(json!({"kind": "oracle", "experiment": id, "terms": count, "convergent": convergent, "mismatches": mismatches}));
    if !mismatches.is_empty() {
        out.fail(format!("{} oracle mismatches, first {}", mismatches.len(), mismatches[0]));
    }
    out.note(format!("{pairs} symbolic series, {count} random terms ({convergent} convergent), 0 disagreements"));
    Ok(out)
}

pub fn well_definedness(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let id = cfg.experiment.as_str();
    let mut out = Outcome::new(id, 2);
    let f = Schedule::faithful_a();
    let samples = cfg.u64("samples_per_k")?;
    let k_max = cfg.u64("k_max")? as u32;
    for k in 1..=k_max {
        // δ_i(n) = 1/log_{i+1} n decreases in n, and log_{i+1} Tower(k+1) = Tower(k-i)
        let mut sum = Interval::point(0.0);
        for j in 1..=k {
            let t = tower(j).value().ok_or_else(|| LabError::ConfigInvalid(format!("Tower({j}) is not representable")))?;
            sum = sum + Interval::point(1.0) / t;
        }
        let ok = sum.hi() <= 1.0;
        out.push(Row::new(id, format!("k={k} at n=Tower({})", k + 1), ok).analytic(sum.lo(), sum.hi()));
        if !ok {
            out.fail(format!("Σδ at Tower({}) reaches {}", k + 1, sum.hi()));
        }
        let Some(start) = tower(k + 1).value() else {
            out.note(format!("k={k}: Tower({}) exceeds u64, symbolic bound only", k + 1));
            continue;
        };
        let n0 = start.hi().ceil();
        let top = 1.0e18_f64;
        let (mut worst, mut bad) = (0.0f64, 0u32);
        for s in 0..samples {
            let n = (n0 * (top / n0).powf(s as f64 / (samples - 1).max(1) as f64)).round() as u64;
            let n = n.max(n0 as u64);
            let hi = f.delta_sum(k, n)?.interval().hi();
            // the rationalized variant may add up to 2^-n per branch
            let padded = hi + k as f64 * 2f64.powi(-(n.min(1000) as i32));
            worst = worst.max(padded);
            bad += u32::from(padded >= 1.0);
        }
        out.push(Row::new(id, format!("k={k}, {samples} n in [{n0}, 1e18]"), bad == 0).analytic(0.0, worst));
        if bad > 0 {
            out.fail(format!("k={k}: {bad} sampled n exceed the bound"));
        }
    }

    let r = Schedule::rationalized_a();
    let max_n = cfg.u64("rational_max_n")?;
    let (mut bad, mut checked) = (Vec::new(), 0);
    for n in r.n_star()..=max_n {
        let step = Rational::new(BigInt::one(), BigInt::one() << n as usize);
        let (lo, hi) = ln_enclosure(n, n as usize + 64);
        let nn = big(n);
        let gamma = r.delta(0, n)?.exact().cloned().expect("rational schedule");
        let theta = r.epsilon(0, n)?.exact().cloned().expect("rational schedule");
        let g_ok = gamma > lo.recip() && &gamma - hi.recip() < step && gamma < Rational::one();
        let t_ok = theta > (&nn * &lo).recip() && &theta - (&nn * &hi).recip() < step;
        let wd = r.well_defined_at(n)?;
        checked += 1;
        if !(g_ok && t_ok && wd) {
            bad.push(n);
        }
    }
    out.push(Row::new(id, format!("rationalized n<={max_n}"), bad.is_empty()).exact(format!("{} of {checked} off-grid", bad.len())));
    if !bad.is_empty() {
        out.fail(format!("rationalized probabilities off at n = {:?}", &bad[..bad.len().min(5)]));
    }
    out.note(format!("Σδ <= 1 from Tower(k+1) for k <= {k_max}; rationalized γ, θ within 2^-n above δ, ε for {checked} blocks"));
    Ok(out)
}

pub fn infinite_branching(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let id = cfg.experiment.as_str();
    let mut out = Outcome::new(id, 9);
    let threshold = cfg.f64("product_floor")?;
    let terms = cfg.u64("product_terms")?;
    let oracle_terms = cfg.u64("oracle_terms")?;
    let enc = halving_product(1, terms);
    let (olo, ohi) = halving_enclosure(oracle_terms);
    let consistent = enc.lo() <= ohi && olo <= enc.hi();
    let ok = enc.lo() >= threshold && consistent;
    out.push(Row::new(id, format!("prod k>=1, {terms} terms"), ok).analytic(enc.lo(), enc.hi()).exact(format!("oracle [{olo:.12}, {ohi:.12}]")));
    if !ok {
        out.fail(format!("product enclosure [{}, {}] vs floor {threshold}, oracle [{olo}, {ohi}]", enc.lo(), enc.hi()));
    }
    let digits = common_digits(enc.lo(), enc.hi());

    let mdp = InfiniteBranching;
    let trials = cfg.plan.trials;
    let plan = |steps: u64, seed: u64| {
        let mut p = TrialPlan::new(Horizon::Steps(steps), trials, seed, Objective::Avoid(Region::State(InfiniteBranching::t())));
        p.confidence = cfg.plan.confidence;
        p
    };

    // visit count as memory: choose branch k on the k-th visit of the hub
    let cycles = cfg.u64("hd_cycles")?;
    let hd = make_countable(
        0,
        |mode, s| point(if s.role() == Some(Role::S) { InfiniteBranching::index_of(mode + 1) } else { 0 }),
        |mode, src, _, _| point(if src.role() == Some(Role::S) { mode + 1 } else { mode }),
    )
    .with_label("increasing-index");
    let exact = halving_partial(cycles);
    let rep = run_trials(&mdp, &hd, &plan(2 * cycles, cfg.plan.seed))?;
    let ok = rep.brackets(to_f64(&exact));
    out.push(Row::new(id, format!("increasing, {cycles} cycles"), ok).mc(&rep).exact(format!("{:.12}", to_f64(&exact))));
    out.estimate("increasing-index", &rep);
    if !ok {
        out.fail(format!("MC bracket [{}, {}] misses {}", rep.lo, rep.hi, to_f64(&exact)));
    }

    let target = cfg.f64("hit_target")?;
    let miss = Rational::one() - from_f64_exact(target);
    for (idx, i) in cfg.u64_list("fixed_branches")?.into_iter().enumerate() {
        let q = Rational::one() - Rational::new(BigInt::one(), BigInt::one() << i as usize);
        let h = ((1.0 - target).ln() / (1.0 - 2f64.powi(-(i as i32))).ln()).ceil() as u64;
        let pow = |e: u64| num_traits::pow(q.clone(), e as usize);
        let minimal = pow(h) <= miss && pow(h - 1) > miss;
        let md = make_md(move |_| InfiniteBranching::index_of(i)).with_label(format!("fixed-{i}"));
        let rep = run_trials(&mdp, &md, &plan(2 * h, cfg.plan.seed.wrapping_add(idx as u64 + 1)))?;
        let avoid = to_f64(&pow(h));
        let ok = minimal && rep.brackets(avoid);
        out.push(
            Row::new(id, format!("fixed i={i}, H={h}"), ok)
                .analytic(1.0 - to_f64(&pow(h - 1)), 1.0 - avoid)
                .mc(&rep)
                .exact(format!("{avoid:.6e}")),
        );
        out.estimate(&format!("fixed-{i}"), &rep);
        if !ok {
            out.fail(format!("fixed branch {i}: H={h} minimal={minimal}, MC [{}, {}] vs {avoid}", rep.lo, rep.hi));
        }
        out.note(format!("i={i}: hit within H={h} cycles"));
    }
    out.summary = format!("prod(1-2^-k) = {digits}.. >= {threshold}; {}", out.summary);
    Ok(out)
}

pub fn puterman_trajectory(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let id = cfg.experiment.as_str();
    let mut out = Outcome::new(id, 11);
    let exact_k = cfg.u64("exact_k")?;
    let trend_k = cfg.u64("trend_k")?;
    let strategy = Puterman::strategy(exact_k)?;
    let mut exit = 0u64;
    for k in 1..=exact_k {
        let loops = Puterman::loops(k).and_then(|l| num_traits::ToPrimitive::to_u64(&l)).expect("certified for small k");
        exit += loops + 1;
        let run = sample_run(&Puterman, &strategy, cfg.plan.seed, 0, exit)?;
        let simulated = run.total() / big(exit);
        let closed = Puterman::exit_mean_exact(k).expect("certified for small k");
        let enclosed = Puterman::exit_mean(k).contains(to_f64(&closed));
        let ok = simulated == closed && enclosed && run.last_state() == &Puterman::s(k + 1);
        let e = Puterman::exit_mean(k);
        out.push(Row::new(id, format!("k={k}, step {exit}"), ok).analytic(e.lo(), e.hi()).exact(&closed));
        if !ok {
            out.fail(format!("k={k}: simulated {simulated} vs closed form {closed}"));
        }
    }
    let tol = cfg.f64("dominance_tol")?;
    let mut prev: Option<Interval> = None;
    for k in 1..=trend_k {
        let e = Puterman::exit_mean(k);
        let rising = prev.is_none_or(|p| p.hi() < e.lo());
        // the last loop dominates, so the mean sits just above -1/k
        let near = e.hi() < 0.0 && (k < 3 || (e.mid() * k as f64 + 1.0).abs() < tol);
        let ok = rising && near;
        out.push(Row::new(id, format!("k={k}"), ok).analytic(e.lo(), e.hi()));
        if !ok {
            out.fail(format!("k={k}: enclosure [{}, {}] breaks the trend", e.lo(), e.hi()));
        }
        prev = Some(e);
    }
    let last = prev.expect("trend_k >= 1");
    out.note(format!("exit means rise monotonically to {:.6} at k={trend_k}", last.mid()));
    out.note(format!("closed form equals simulation for k <= {exact_k}"));
    Ok(out)
}
