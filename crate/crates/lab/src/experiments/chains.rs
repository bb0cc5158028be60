use std::time::Instant;

use cmdp_core::gadgets::{concat_half, mimic, mimic_fr, skip_then_mimic, GadgetChain};
use cmdp_core::monitor::PayoffKind;
use cmdp_core::numeric::{to_f64, Rational};
use cmdp_core::schedule::Horizon as Span;
use cmdp_core::sim::{exact_block_dp, run_trials, BadSet, DpOptions, DpReport, EstimateReport, Horizon, Objective, TrialPlan};
use cmdp_core::strategy::Strategy;
use num_traits::One;
use serde_json::json;

use crate::formats::{ChainManifest, FrMachineSpec, ScheduleSpec};
use crate::{ExperimentConfig, LabError, Outcome, Row};

fn dec(r: &Rational) -> String {
    let v = to_f64(r);
    if v != 0.0 && v < 1e-6 {
        format!("{v:.6e}")
    } else {
        format!("{v:.15}")
    }
}

/// The configured chain, lengthened so that `horizon` blocks (plus restart jumps) fit.
fn chain_for(m: &ChainManifest, horizon: u64) -> Result<GadgetChain, LabError> {
    let mut m = m.clone();
    m.blocks = m.blocks.max(horizon + 4);
    m.build()
}

fn plan(cfg: &ExperimentConfig, horizon: Horizon, trials: u64, seed: u64, objective: Objective, confidence: f64) -> TrialPlan {
    let mut p = TrialPlan::new(horizon, trials, seed, objective);
    p.confidence = confidence;
    p.max_unknown = cfg.plan.max_unknown;
    p
}

fn timed(chain: &GadgetChain, s: &Strategy, p: &TrialPlan) -> Result<EstimateReport, LabError> {
    let t = Instant::now();
    let mut r = run_trials(chain, s, p)?;
    r.wall_clock_s = Some(t.elapsed().as_secs_f64());
    Ok(r)
}

pub fn mimic_attainment(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let id = cfg.experiment.as_str();
    let mut out = Outcome::new(id, 4);
    let h = cfg.plan.horizon_blocks;
    let chain = chain_for(cfg.chain()?, h)?;
    let enc = chain.schedule().survival_product(chain.n_star(), Span::Blocks(h))?;
    let max_width = cfg.f64("max_width")?;
    let (lo, hi) = (enc.lo(), enc.hi());
    let mid = enc.interval.mid();

    let rc = mimic(&chain)?;
    let fr = mimic_fr(&chain)?;
    let dp_rc = exact_block_dp(&chain, &rc, &DpOptions::blocks(h, BadSet::SINK))?;
    let dp_fr = exact_block_dp(&chain, &fr, &DpOptions::blocks(h, BadSet::SINK))?;
    let exact_ok = match &enc.exact {
        Some(p) => *p == dp_rc.survived,
        None => enc.interval.contains(to_f64(&dp_rc.survived)),
    };
    let same = dp_rc == dp_fr;

    let p = plan(cfg, Horizon::Blocks(h), cfg.plan.trials, cfg.plan.seed, Objective::Liminf(PayoffKind::Mean), cfg.plan.confidence);
    let rep = timed(&chain, &fr, &p)?;
    let loss = 1.0 - mid;
    let mc_ok = rep.lose_lo <= loss && loss <= rep.lose_hi;
    let width_ok = enc.width() <= max_width;
    let ok = mc_ok && width_ok && exact_ok && same;
    out.push(
        Row::new(id, h, ok)
            .analytic(1.0 - hi, 1.0 - lo)
            .mc_bracket(rep.lose_lo, rep.lose_hi)
            .exact(dec(&(Rational::one() - &dp_rc.survived))),
    );
    out.estimate("mimic-fr", &rep);
    out.record(json!({
        "kind": "dp", "experiment": id, "strategy": "mimic-rc", "blocks": h,
        "survived": to_f64(&dp_rc.survived), "sink": to_f64(&dp_rc.sink), "fr_agrees": same,
    }));
    if !width_ok {
        out.fail(format!("enclosure width {} above {max_width}", enc.width()));
    }
    if !exact_ok {
        out.fail("exact DP of the mimic differs from the survival product");
    }
    if !same {
        out.fail("counter and finite-memory mimic give different DP values");
    }
    if !mc_ok {
        out.fail(format!("certLose interval [{}, {}] misses {loss}", rep.lose_lo, rep.lose_hi));
    }
    out.note(format!(
        "loss {:.6} in [{:.6}, {:.6}] at {:.0}% over {} trials, {} blocks",
        loss,
        rep.lose_lo,
        rep.lose_hi,
        100.0 * rep.confidence,
        rep.counts.trials,
        h
    ));
    Ok(out)
}

pub fn skip_index(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let id = cfg.experiment.as_str();
    let mut out = Outcome::new(id, 5);
    let manifest = cfg.chain()?;
    let sched = manifest.schedule.to_schedule()?;
    let extra = cfg.u64("tail_blocks")?;
    for eps in cfg.f64_list("eps")? {
        let n_eps = sched.skip_index(eps)?;
        let h = n_eps - sched.n_star() + extra;
        let chain = chain_for(manifest, h)?;
        let (s, n2) = skip_then_mimic(&chain, eps)?;
        debug_assert_eq!(n2, n_eps);
        let dp = exact_block_dp(&chain, &s, &DpOptions::blocks(h, BadSet::SINK))?;
        let tail = sched.loss_tail(sched.n_star() + h)?;
        let lower = to_f64(&dp.survived) - tail;
        let ok = lower >= 1.0 - eps;
        out.push(Row::new(id, format!("eps={eps}, N_eps={n_eps}"), ok).analytic(lower, to_f64(&dp.survived)).exact(dec(&dp.survived)));
        out.record(json!({"kind": "dp", "experiment": id, "eps": eps, "n_eps": n_eps, "blocks": h, "survived": to_f64(&dp.survived), "tail": tail}));
        if !ok {
            out.fail(format!("eps={eps}: win probability >= {lower} only"));
        }
        out.note(format!("eps={eps}: N={n_eps}, P(win) >= {lower:.5}"));
    }
    Ok(out)
}

/// Exact and sampled survival of each machine against the confusion product, at the probed horizons.
fn machine_sweep(
    cfg: &ExperimentConfig,
    out: &mut Outcome,
    chain: &GadgetChain,
    machines: &[FrMachineSpec],
    horizon: u64,
    probes: &[u64],
    trials: u64,
    seed: u64,
    tag: &str,
) -> Result<(), LabError> {
    let id = out.experiment.clone();
    let sched = chain.schedule();
    let floor = cfg.f64("final_max")?;
    let slack = cfg.f64("slack")?;
    // one confidence level shared by all brackets of the sweep
    let confidence = 1.0 - (1.0 - cfg.plan.confidence) / (2 * machines.len().max(1)) as f64;
    let first = chain.n_star();
    let mut worst = 0.0f64;
    for (idx, spec) in machines.iter().enumerate() {
        let machine = spec.machine()?;
        let strat = machine.strategy(chain)?;
        let label = if spec.label.is_empty() { format!("machine-{idx}") } else { spec.label.clone() };
        let dp: DpReport = exact_block_dp(chain, &strat, &DpOptions::blocks(horizon, BadSet::ALL))?;
        // blocks skipped before enter_from carry no risk for the machine
        let start = first.max(machine.enter_from);
        let product = sched.confusion_product(start, first + horizon - 1, machine.modes)?;
        let bound_at = |n: u64| -> f64 {
            let last = first + n - 1;
            if last < start {
                1.0
            } else {
                product[(last - start) as usize].interval().hi()
            }
        };
        for &n in probes.iter().filter(|&&n| n <= horizon) {
            let surv = dp.survival(n);
            let bound = bound_at(n);
            let ok = to_f64(&surv) <= bound + slack;
            out.push(Row::new(&id, format!("{tag}{label} N={n}"), ok).analytic(0.0, bound).exact(dec(&surv)));
            if !ok {
                out.fail(format!("{label}: survival {} above the bound {bound} at N={n}", to_f64(&surv)));
            }
        }
        let fin = dp.survival(horizon);
        worst = worst.max(to_f64(&fin));
        if to_f64(&fin) >= floor {
            out.fail(format!("{label}: survival {} after {horizon} blocks is not below {floor}", to_f64(&fin)));
        }
        // brackets at the first probe, where survival is still sizeable, and at the horizon
        let mut checkpoints: Vec<u64> = probes.iter().copied().filter(|&n| n < horizon).min().into_iter().collect();
        checkpoints.push(horizon);
        for (c, &at) in checkpoints.iter().enumerate() {
            if trials == 0 {
                break;
            }
            let want = dp.survival(at);
            let stream = seed.wrapping_add((idx * checkpoints.len() + c) as u64);
            let p = plan(cfg, Horizon::Blocks(at), trials, stream, Objective::Survive(BadSet::ALL), confidence);
            let rep = timed(chain, &strat, &p)?;
            let ok = rep.brackets(to_f64(&want));
            out.push(Row::new(&id, format!("{tag}{label} N={at} mc"), ok).mc(&rep).exact(dec(&want)));
            out.estimate(&format!("{tag}{label} N={at}"), &rep);
            if !ok {
                out.fail(format!("{label}: MC bracket [{}, {}] misses {} at N={at}", rep.lo, rep.hi, to_f64(&want)));
            }
        }
        out.record(json!({
            "kind": "dp", "experiment": id, "machine": label, "modes": machine.modes,
            "randomized": spec.is_randomized(), "blocks": horizon, "survived": to_f64(&fin),
            "sink": to_f64(&dp.sink), "dip": to_f64(&dp.dip), "restart": to_f64(&dp.restart),
            "bound": bound_at(horizon),
        }));
    }
    out.note(format!("{tag}{} machines, worst survival {worst:.3e} after {horizon} blocks", machines.len()));
    Ok(())
}

pub fn fr_defeat(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let id = cfg.experiment.as_str();
    let mut out = Outcome::new(id, 6);
    let h = cfg.plan.horizon_blocks;
    let chain = chain_for(cfg.chain()?, h)?;
    if cfg.machines.is_empty() {
        return Err(LabError::ConfigInvalid("fr-defeat needs [[machines]]".into()));
    }
    let k_max = chain.schedule().k_max().unwrap_or(u32::MAX);
    if let Some(m) = cfg.machines.iter().find(|m| m.modes + 2 > k_max) {
        return Err(LabError::ConfigInvalid(format!("machine `{}` has {} modes but k(n) only reaches {k_max}", m.label, m.modes)));
    }
    let probes = cfg.u64_list("probes")?;
    machine_sweep(cfg, &mut out, &chain, &cfg.machines, h, &probes, cfg.plan.trials, cfg.plan.seed, "")?;
    Ok(out)
}

pub fn restart_almost_sure(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let id = cfg.experiment.as_str();
    let mut out = Outcome::new(id, 7);
    let h = cfg.plan.horizon_blocks;
    let chain = chain_for(cfg.chain()?, h)?;
    let (s, n_half) = concat_half(&chain)?;
    let max_i = cfg.u64("max_restarts")? as u32;
    let opts = DpOptions {
        horizon: Horizon::Blocks(h),
        stop_on: BadSet { sink: true, dip: false, restart: false },
        row_cap: Some(max_i + 2),
        max_steps: 50_000_000,
    };
    let dp = exact_block_dp(&chain, &s, &opts)?;
    // restarts after the horizon: each needs another escape, of mass at most `tail`
    let tail = chain.schedule().loss_tail(chain.n_star() + h)?;
    for i in 1..=max_i {
        let later: f64 = (0..i).map(|j| to_f64(dp.by_row.get(&j).unwrap_or(&Rational::default())) * tail.powi((i - j) as i32)).sum();
        let seen = dp.rows_at_least(i);
        let bound = to_f64(&seen) + later;
        let limit = 0.5f64.powi(i as i32);
        let ok = bound <= limit;
        out.push(Row::new(id, format!("restarts>={i}"), ok).analytic(0.0, limit).exact(format!("{:.6e}", bound)));
        if !ok {
            out.fail(format!("P(>= {i} restarts) up to {bound} exceeds 2^-{i}"));
        }
    }
    out.record(json!({
        "kind": "dp", "experiment": id, "strategy": "concat-half", "n_half": n_half, "blocks": h,
        "rows": dp.by_row.iter().map(|(r, p)| (r.to_string(), json!(to_f64(p)))).collect::<serde_json::Map<_, _>>(),
        "sink": to_f64(&dp.sink),
    }));
    if dp.sink > Rational::default() {
        out.fail("the restart chain reached the losing sink");
    }
    out.note(format!("concat-half (N_1/2 = {n_half}): P(>= i restarts) <= 2^-i for i <= {max_i}"));

    let fr_schedule = ScheduleSpec::preset(&cfg.string("fr_schedule")?);
    let fr_h = cfg.u64("fr_horizon_blocks")?;
    let manifest = ChainManifest { schedule: fr_schedule, ..cfg.chain()?.clone() };
    let fr_chain = chain_for(&manifest, fr_h)?;
    let probes = cfg.u64_list("probes")?;
    machine_sweep(cfg, &mut out, &fr_chain, &cfg.machines, fr_h, &probes, cfg.u64("fr_trials")?, cfg.plan.seed, "restart/")?;
    Ok(out)
}
