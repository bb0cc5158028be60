//! Seeded Monte Carlo estimation and exact dynamic programming over strategies on countable MDPs.
//!
//! Per-trial randomness: trial `t` of a plan with master seed `s` draws from ChaCha8 seeded with `s`
//! on stream `t` (see [`RngStream`]), so any range of trials can be replayed independently.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::gadgets::{GadgetChain, GrowingMemory, InfiniteBranching, Puterman};
use crate::mdp::{extend_run, Choice, CountableMdp, Degree, FiniteMdp, MdpError, OutEdge, RngStream, Role, Run, StateId, StateKind};
use crate::monitor::{PayoffKind, Region, StructuralFacts};
use crate::numeric::Rational;
use crate::strategy::{clamp_index, sample_dist, Memory, Strategy, StrategyClass, StrategyError};

pub use crate::gadgets::ChainEvent;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("exact dynamic programming needs finite memory, got {0}")]
    NotFiniteMemory(String),
    #[error("probability at {0} is not exact")]
    Inexact(String),
    #[error("invalid plan: {0}")]
    Invalid(String),
    #[error("unknown fraction {got:.4} exceeds the tolerated {max:.4}")]
    TooManyUnknown { got: f64, max: f64 },
}

/// What entering a state means for the bad-event bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    None,
    /// Entering the leaf of random branch i.
    SetTag(u64),
    /// Controlled branch j: a dip when j exceeds the remembered random branch.
    Guard(u64),
    Sink,
    Restart,
}

/// Structure a simulator needs beyond the transition relation.
pub trait Simulated: CountableMdp {
    fn facts(&self) -> StructuralFacts {
        StructuralFacts::default()
    }

    fn mark(&self, _s: &StateId) -> Mark {
        Mark::None
    }

    /// Block index when `s` is a block boundary.
    fn boundary(&self, _s: &StateId) -> Option<u64> {
        None
    }

    fn first_block(&self) -> u64 {
        0
    }
}

impl<M: Simulated + ?Sized> Simulated for &M {
    fn facts(&self) -> StructuralFacts {
        (**self).facts()
    }
    fn mark(&self, s: &StateId) -> Mark {
        (**self).mark(s)
    }
    fn boundary(&self, s: &StateId) -> Option<u64> {
        (**self).boundary(s)
    }
    fn first_block(&self) -> u64 {
        (**self).first_block()
    }
}

impl Simulated for GadgetChain {
    fn facts(&self) -> StructuralFacts {
        GadgetChain::facts(self)
    }

    fn mark(&self, s: &StateId) -> Mark {
        let Some(c) = s.coord() else { return Mark::None };
        match c.role {
            Role::A if c.offset == 0 => Mark::SetTag(c.branch),
            Role::B | Role::Q => Mark::Guard(c.branch),
            Role::Bot => Mark::Sink,
            Role::Rst if c.offset == 0 => Mark::Restart,
            _ => Mark::None,
        }
    }

    fn boundary(&self, s: &StateId) -> Option<u64> {
        GadgetChain::boundary(self, s)
    }

    fn first_block(&self) -> u64 {
        self.n_star()
    }
}

impl Simulated for InfiniteBranching {}
impl Simulated for Puterman {}
impl Simulated for FiniteMdp {}

impl Simulated for GrowingMemory {
    fn facts(&self) -> StructuralFacts {
        GrowingMemory::facts()
    }

    fn mark(&self, s: &StateId) -> Mark {
        if s.role() == Some(Role::Bot) {
            Mark::Sink
        } else {
            Mark::None
        }
    }
}

/// Any MDP with declared structural facts.
#[derive(Debug, Clone)]
pub struct WithFacts<M> {
    pub mdp: M,
    pub facts: StructuralFacts,
}

impl<M: CountableMdp> CountableMdp for WithFacts<M> {
    fn initial(&self) -> StateId {
        self.mdp.initial()
    }
    fn kind(&self, s: &StateId) -> Result<StateKind, MdpError> {
        self.mdp.kind(s)
    }
    fn degree(&self, s: &StateId) -> Result<Degree, MdpError> {
        self.mdp.degree(s)
    }
    fn successors(&self, s: &StateId, limit: usize) -> Result<Vec<OutEdge>, MdpError> {
        self.mdp.successors(s, limit)
    }
}

impl<M: CountableMdp> Simulated for WithFacts<M> {
    fn facts(&self) -> StructuralFacts {
        self.facts.clone()
    }
    fn mark(&self, s: &StateId) -> Mark {
        if self.facts.is_losing(s) {
            Mark::Sink
        } else {
            Mark::None
        }
    }
}

/// Which bad events end a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BadSet {
    pub sink: bool,
    pub dip: bool,
    pub restart: bool,
}

impl BadSet {
    pub const SINK: BadSet = BadSet { sink: true, dip: false, restart: false };
    pub const ALL: BadSet = BadSet { sink: true, dip: true, restart: true };

    pub fn contains(self, e: ChainEvent) -> bool {
        match e {
            ChainEvent::Sink => self.sink,
            ChainEvent::Dip => self.dip,
            ChainEvent::Restart => self.restart,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Steps(u64),
    /// Stop at the boundary of block first_block + count.
    Blocks(u64),
}

#[derive(Debug, Clone)]
pub enum Objective {
    /// Liminf of a payoff: certified losses from losing regions, wins from safe regions.
    Liminf(PayoffKind),
    /// No bad event before the horizon.
    Survive(BadSet),
    /// Never enter the region before the horizon.
    Avoid(Region),
}

#[derive(Debug, Clone)]
pub struct TrialPlan {
    pub horizon: Horizon,
    pub trials: u64,
    pub seed: u64,
    pub objective: Objective,
    pub confidence: f64,
    pub max_unknown: Option<f64>,
}

impl TrialPlan {
    pub fn new(horizon: Horizon, trials: u64, seed: u64, objective: Objective) -> Self {
        TrialPlan { horizon, trials, seed, objective, confidence: 0.99, max_unknown: None }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let h = match self.horizon {
            Horizon::Steps(h) | Horizon::Blocks(h) => h,
        };
        if h == 0 || self.trials == 0 {
            return Err(SimError::Invalid("horizon and trials must be at least 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(SimError::Invalid(format!("confidence {} outside (0,1)", self.confidence)));
        }
        Ok(())
    }
}

/// Verdict counts of a batch of trials; merging is order independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub trials: u64,
    pub cert_win: u64,
    pub cert_lose: u64,
    pub unknown: u64,
    pub sinks: u64,
    pub dips: u64,
    pub restarts: u64,
    pub steps: u64,
}

impl Counts {
    pub fn merge(mut self, o: Counts) -> Counts {
        self.trials += o.trials;
        self.cert_win += o.cert_win;
        self.cert_lose += o.cert_lose;
        self.unknown += o.unknown;
        self.sinks += o.sinks;
        self.dips += o.dips;
        self.restarts += o.restarts;
        self.steps += o.steps;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub counts: Counts,
    /// Win probability bracket: lower Wilson bound of certWin, upper Wilson bound of 1 - certLose.
    pub lo: f64,
    pub hi: f64,
    /// Wilson interval around the certLose fraction.
    pub lose_lo: f64,
    pub lose_hi: f64,
    pub confidence: f64,
    pub seed: u64,
    pub rng: &'static str,
    pub wall_clock_s: Option<f64>,
}

impl EstimateReport {
    pub fn from_counts(counts: Counts, confidence: f64, seed: u64) -> Self {
        let z = z_score(confidence);
        let n = counts.trials;
        let (lo, _) = wilson(counts.cert_win, n, z);
        let (_, hi) = wilson(n - counts.cert_lose, n, z);
        let (lose_lo, lose_hi) = wilson(counts.cert_lose, n, z);
        EstimateReport {
            counts,
            lo,
            hi: hi.max(lo),
            lose_lo,
            lose_hi,
            confidence,
            seed,
            rng: crate::mdp::RNG_ALGORITHM,
            wall_clock_s: None,
        }
    }

    pub fn lose_fraction(&self) -> f64 {
        self.counts.cert_lose as f64 / self.counts.trials as f64
    }

    pub fn unknown_fraction(&self) -> f64 {
        self.counts.unknown as f64 / self.counts.trials as f64
    }

    pub fn brackets(&self, p: f64) -> bool {
        self.lo <= p && p <= self.hi
    }
}

/// Two-sided normal quantile for a confidence level.
pub fn z_score(confidence: f64) -> f64 {
    // erf(z / sqrt 2) = confidence, by Newton from a rough start
    let target = confidence;
    let mut z = 2.0;
    for _ in 0..50 {
        let f = libm::erf(z / core::f64::consts::SQRT_2) - target;
        let df = libm::exp(-z * z / 2.0) * libm::sqrt(2.0 / core::f64::consts::PI);
        let step = f / df;
        z -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    z
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (nf, p) = (n as f64, k as f64 / n as f64);
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
    let half = z * libm::sqrt(p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)) / (1.0 + z2 / nf);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone)]
struct CEdge {
    target: u32,
    reward: Rational,
    prob: Option<Rational>,
    cum: f64,
}

#[derive(Debug, Clone)]
struct Node {
    id: StateId,
    kind: StateKind,
    infinite: bool,
    expanded: bool,
    edges: Vec<CEdge>,
    mark: Mark,
    boundary: Option<u64>,
    losing: bool,
    safe: bool,
    avoid: bool,
    row: u32,
    block: Option<u64>,
}

/// Interned state space with compiled edge tables, grown on demand.
pub struct Compiled<'a, M: Simulated + ?Sized> {
    mdp: &'a M,
    facts: StructuralFacts,
    avoid: Option<Region>,
    index: BTreeMap<StateId, u32>,
    nodes: Vec<Node>,
}

impl<'a, M: Simulated + ?Sized> Compiled<'a, M> {
    pub fn new(mdp: &'a M, avoid: Option<Region>) -> Self {
        Compiled { mdp, facts: mdp.facts(), avoid, index: BTreeMap::new(), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn intern(&mut self, s: &StateId) -> Result<u32, MdpError> {
        if let Some(&i) = self.index.get(s) {
            return Ok(i);
        }
        let kind = self.mdp.kind(s)?;
        let infinite = self.mdp.degree(s)? == Degree::Infinite;
        let i = self.nodes.len() as u32;
        self.nodes.push(Node {
            id: s.clone(),
            kind,
            infinite,
            expanded: false,
            edges: Vec::new(),
            mark: self.mdp.mark(s),
            boundary: self.mdp.boundary(s),
            losing: self.facts.is_losing(s),
            safe: self.facts.is_safe(s),
            avoid: self.avoid.as_ref().is_some_and(|r| r.contains(s)),
            row: s.coord().map_or(0, |c| c.row),
            block: s.coord().map(|c| c.n),
        });
        self.index.insert(s.clone(), i);
        Ok(i)
    }

    fn compile(&mut self, edges: Vec<OutEdge>) -> Result<Vec<CEdge>, MdpError> {
        let mut cum = 0.0;
        let mut out = Vec::with_capacity(edges.len());
        for e in edges {
            let target = self.intern(&e.target)?;
            let prob = e.prob.as_ref().and_then(|p| p.exact().cloned());
            cum += e.prob.as_ref().map_or(0.0, |p| p.to_f64());
            out.push(CEdge { target, reward: e.reward, prob, cum });
        }
        Ok(out)
    }

    /// Makes edge `need` of node `i` available (all edges for finite fans).
    fn expand(&mut self, i: u32, need: usize) -> Result<(), MdpError> {
        let node = &self.nodes[i as usize];
        if node.expanded && (!node.infinite || node.edges.len() > need) {
            return Ok(());
        }
        let id = node.id.clone();
        let edges = if node.infinite {
            let want = (need + 1).max(node.edges.len() * 2).max(8);
            self.mdp.successors(&id, want)?
        } else {
            self.mdp.all_successors(&id)?
        };
        let compiled = self.compile(edges)?;
        let node = &mut self.nodes[i as usize];
        node.edges = compiled;
        node.expanded = true;
        if let Some(last) = node.edges.last_mut() {
            if node.kind == StateKind::Random && !node.infinite {
                // absorb rounding so a draw below 1 always lands on an edge
                last.cum = f64::INFINITY;
            }
        }
        Ok(())
    }
}

struct Walker {
    tag: u64,
}

impl Walker {
    /// Applies the mark of the entered node; returns the bad event, if any.
    fn enter(&mut self, mark: Mark, from_sink: bool) -> Option<ChainEvent> {
        match mark {
            Mark::None => None,
            Mark::SetTag(i) => {
                self.tag = i;
                None
            }
            Mark::Guard(j) => {
                let bad = j > self.tag;
                self.tag = 0;
                bad.then_some(ChainEvent::Dip)
            }
            Mark::Sink if !from_sink => Some(ChainEvent::Sink),
            Mark::Sink => None,
            Mark::Restart => Some(ChainEvent::Restart),
        }
    }
}

fn pick(d: &[(usize, Rational)], u: f64) -> usize {
    if d.len() == 1 {
        return d[0].0;
    }
    sample_dist(&d.to_vec(), u)
}

enum Outcome {
    Win,
    Lose,
    Unknown,
}

fn at_horizon(h: Horizon, first: u64, steps: u64, boundary: Option<u64>) -> bool {
    match h {
        Horizon::Steps(t) => steps >= t,
        Horizon::Blocks(b) => boundary.is_some_and(|n| n >= first + b),
    }
}

const STEP_GUARD: u64 = 1 << 40;

/// Runs trials `range` of the plan, reusing the compiled cache.
pub fn run_trial_range<M: Simulated + ?Sized>(
    cache: &mut Compiled<'_, M>,
    strategy: &Strategy,
    plan: &TrialPlan,
    range: Range<u64>,
) -> Result<Counts, SimError> {
    plan.validate()?;
    let first = cache.mdp.first_block();
    let init = cache.intern(&cache.mdp.initial())?;
    let needs_total = strategy.reads_total()
        || matches!(plan.objective, Objective::Liminf(PayoffKind::Total)) && !cache.facts.safe.is_empty();
    let mut counts = Counts::default();
    for t in range {
        let mut rng = RngStream::new(plan.seed, t);
        let mut mem = strategy.initial_memory();
        let mut total = Rational::zero();
        let mut walker = Walker { tag: 0 };
        let mut cur = init;
        let mut steps = 0u64;
        let mut event = None;
        let outcome = loop {
            let node = &cache.nodes[cur as usize];
            match &plan.objective {
                Objective::Liminf(kind) => {
                    if node.losing {
                        break Outcome::Lose;
                    }
                    if node.safe {
                        let win = !matches!(kind, PayoffKind::Total) || !total.is_negative();
                        break if win { Outcome::Win } else { Outcome::Lose };
                    }
                }
                Objective::Avoid(_) if node.avoid => break Outcome::Lose,
                _ => {}
            }
            if at_horizon(plan.horizon, first, steps, node.boundary) || steps >= STEP_GUARD {
                break match plan.objective {
                    Objective::Liminf(_) => Outcome::Unknown,
                    _ => Outcome::Win,
                };
            }
            let (kind, infinite) = (node.kind, node.infinite);
            let idx = if kind == StateKind::Controlled {
                let d = strategy.act_raw(&mem, &node.id);
                if d.is_empty() {
                    return Err(StrategyError::BadDistribution("actions").into());
                }
                let i = if d.len() == 1 { d[0].0 } else { pick(&d, rng.uniform()) };
                if infinite {
                    cache.expand(cur, i)?;
                    i
                } else {
                    cache.expand(cur, 0)?;
                    clamp_index(i, Degree::Finite(cache.nodes[cur as usize].edges.len()))
                }
            } else {
                cache.expand(cur, 0)?;
                let edges = &cache.nodes[cur as usize].edges;
                if edges.len() == 1 {
                    0
                } else {
                    let u = rng.uniform();
                    edges.iter().position(|e| u < e.cum).unwrap_or(edges.len() - 1)
                }
            };
            let src = &cache.nodes[cur as usize];
            let e = &src.edges[idx];
            let next = e.target;
            let from_sink = src.mark == Mark::Sink;
            if needs_total {
                total += &e.reward;
            }
            mem = if strategy.is_deterministic_update() {
                Memory { mode: mem.mode, step: mem.step + 1, total: if strategy.reads_total() { total.clone() } else { Rational::zero() } }
            } else {
                let reward = e.reward.clone();
                let (sid, tid) = (src.id.clone(), cache.nodes[next as usize].id.clone());
                strategy.update_sampled(&mem, &sid, idx, &tid, &reward, || rng.uniform())?
            };
            steps += 1;
            cur = next;
            if let Some(ev) = walker.enter(cache.nodes[cur as usize].mark, from_sink) {
                match ev {
                    ChainEvent::Sink => counts.sinks += 1,
                    ChainEvent::Dip => counts.dips += 1,
                    ChainEvent::Restart => counts.restarts += 1,
                }
                if let Objective::Survive(bad) = plan.objective {
                    if bad.contains(ev) {
                        event = Some(ev);
                        break Outcome::Lose;
                    }
                }
            }
        };
        let _ = event;
        counts.trials += 1;
        counts.steps += steps;
        match outcome {
            Outcome::Win => counts.cert_win += 1,
            Outcome::Lose => counts.cert_lose += 1,
            Outcome::Unknown => counts.unknown += 1,
        }
    }
    Ok(counts)
}

/// Runs every trial of the plan. Deterministic in the plan's seed.
pub fn run_trials<M: Simulated + ?Sized>(mdp: &M, strategy: &Strategy, plan: &TrialPlan) -> Result<EstimateReport, SimError> {
    let avoid = match &plan.objective {
        Objective::Avoid(r) => Some(r.clone()),
        _ => None,
    };
    let mut cache = Compiled::new(mdp, avoid);
    let counts = run_trial_range(&mut cache, strategy, plan, 0..plan.trials)?;
    finish_report(counts, plan)
}

/// Report for merged counts, enforcing the plan's tolerated unknown fraction.
pub fn finish_report(counts: Counts, plan: &TrialPlan) -> Result<EstimateReport, SimError> {
    let report = EstimateReport::from_counts(counts, plan.confidence, plan.seed);
    if let Some(max) = plan.max_unknown {
        if report.unknown_fraction() > max {
            return Err(SimError::TooManyUnknown { got: report.unknown_fraction(), max });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct DpOptions {
    pub horizon: Horizon,
    pub stop_on: BadSet,
    /// Runs reaching a restart row above this are set aside.
    pub row_cap: Option<u32>,
    pub max_steps: u64,
}

impl DpOptions {
    pub fn blocks(n: u64, stop_on: BadSet) -> Self {
        DpOptions { horizon: Horizon::Blocks(n), stop_on, row_cap: None, max_steps: 50_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpReport {
    /// Mass reaching the horizon without a stopping event.
    pub survived: Rational,
    pub sink: Rational,
    pub dip: Rational,
    pub restart: Rational,
    /// Mass of stopping events by the block they occurred in.
    pub bad_by_block: BTreeMap<u64, Rational>,
    /// Mass by restart row at the end (horizon, stopping event, or row cap).
    pub by_row: BTreeMap<u32, Rational>,
    pub first_block: u64,
    pub steps: u64,
}

impl DpReport {
    /// Probability of no stopping event before block first_block + n.
    pub fn survival(&self, n: u64) -> Rational {
        let bad: Rational = self.bad_by_block.range(..self.first_block + n).map(|(_, p)| p.clone()).sum();
        Rational::one() - bad
    }

    /// Probability of ending in restart row i or above.
    pub fn rows_at_least(&self, i: u32) -> Rational {
        self.by_row.range(i..).map(|(_, p)| p.clone()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    node: u32,
    mode: u64,
    tag: u64,
    total: Option<Rational>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Sink {
    Done(u32),
    Bad(ChainEvent, u64, u32),
}

fn lcm_all<'a>(ds: impl Iterator<Item = &'a BigInt>) -> BigInt {
    ds.fold(BigInt::one(), |l, d| if (&l % d).is_zero() { l } else { l.lcm(d) })
}

/// Exact forward DP of a finite-memory strategy on a chain, step by step with one common denominator.
pub fn exact_block_dp<M: Simulated + ?Sized>(mdp: &M, strategy: &Strategy, opts: &DpOptions) -> Result<DpReport, SimError> {
    if strategy.class() == StrategyClass::Hd {
        return Err(SimError::NotFiniteMemory(strategy.class().to_string()));
    }
    let mut cache = Compiled::new(mdp, None);
    let first = mdp.first_block();
    let init = cache.intern(&mdp.initial())?;
    let reads_total = strategy.reads_total();
    let m0 = strategy.initial_memory();
    let mut layer: BTreeMap<Key, BigInt> = BTreeMap::new();
    layer.insert(Key { node: init, mode: m0.mode, tag: 0, total: reads_total.then(Rational::zero) }, BigInt::one());
    let mut den = BigInt::one();
    let mut report = DpReport {
        survived: Rational::zero(),
        sink: Rational::zero(),
        dip: Rational::zero(),
        restart: Rational::zero(),
        bad_by_block: BTreeMap::new(),
        by_row: BTreeMap::new(),
        first_block: first,
        steps: 0,
    };
    let mut step = 0u64;
    while !layer.is_empty() {
        if step >= opts.max_steps {
            return Err(SimError::Invalid(format!("dynamic programming exceeded {} steps", opts.max_steps)));
        }
        // (destination, numerator, probability factor)
        let mut moves: Vec<(Result<Key, Sink>, BigInt, Rational)> = Vec::new();
        let mut settled: Vec<(Sink, BigInt)> = Vec::new();
        for (key, num) in core::mem::take(&mut layer) {
            let node = &cache.nodes[key.node as usize];
            if at_horizon(opts.horizon, first, step, node.boundary) {
                settled.push((Sink::Done(node.row), num));
                continue;
            }
            if opts.row_cap.is_some_and(|cap| node.row > cap) {
                settled.push((Sink::Done(node.row), num));
                continue;
            }
            let mem = Memory { mode: key.mode, step, total: key.total.clone().unwrap_or_default() };
            cache.expand(key.node, 0)?;
            let node = &cache.nodes[key.node as usize];
            if node.infinite {
                return Err(MdpError::InfiniteBranching(node.id.to_string()).into());
            }
            let choices: Vec<(usize, Rational)> = if node.kind == StateKind::Controlled {
                let d = strategy.act_raw(&mem, &node.id);
                if d.is_empty() {
                    return Err(StrategyError::BadDistribution("actions").into());
                }
                d.into_iter().map(|(i, p)| (clamp_index(i, Degree::Finite(node.edges.len())), p)).collect()
            } else {
                let mut v = Vec::with_capacity(node.edges.len());
                for (i, e) in node.edges.iter().enumerate() {
                    let p = e.prob.clone().ok_or_else(|| SimError::Inexact(node.id.to_string()))?;
                    v.push((i, p));
                }
                v
            };
            let from_sink = node.mark == Mark::Sink;
            for (idx, pa) in choices {
                let e = &node.edges[idx];
                let tgt = &cache.nodes[e.target as usize];
                let mut w = Walker { tag: key.tag };
                let ev = w.enter(tgt.mark, from_sink);
                let total = key.total.as_ref().map(|t| t + &e.reward);
                let modes = strategy.update(&mem, &node.id, idx, &tgt.id, &e.reward)?;
                for (m, pu) in modes {
                    let p = &pa * pu;
                    if p.is_zero() {
                        continue;
                    }
                    let dest = match ev {
                        Some(ev) if ev == ChainEvent::Sink || opts.stop_on.contains(ev) => {
                            Err(Sink::Bad(ev, node.block.unwrap_or(0), tgt.row))
                        }
                        other => {
                            if let Some(ev) = other {
                                // counted but not stopping
                                moves.push((Err(Sink::Bad(ev, node.block.unwrap_or(0), u32::MAX)), num.clone(), p.clone()));
                            }
                            Ok(Key { node: e.target, mode: m.mode, tag: w.tag, total: total.clone() })
                        }
                    };
                    moves.push((dest, num.clone(), p));
                }
            }
        }
        let l = lcm_all(moves.iter().map(|(_, _, p)| p.denom()));
        let new_den = &den * &l;
        let mut sinks: BTreeMap<Sink, BigInt> = BTreeMap::new();
        for (dest, num, p) in moves {
            let scaled = num * p.numer() * (&l / p.denom());
            match dest {
                Ok(k) => *layer.entry(k).or_default() += scaled,
                Err(s) => *sinks.entry(s).or_default() += scaled,
            }
        }
        for (s, num) in settled {
            *sinks.entry(s).or_default() += num * &l;
        }
        for (s, num) in sinks {
            let mass = Rational::new(num, new_den.clone());
            match s {
                Sink::Done(row) => {
                    report.survived += &mass;
                    *report.by_row.entry(row).or_default() += mass;
                }
                Sink::Bad(ev, block, row) => {
                    let counted_only = row == u32::MAX;
                    match ev {
                        ChainEvent::Sink => report.sink += &mass,
                        ChainEvent::Dip => report.dip += &mass,
                        ChainEvent::Restart => report.restart += &mass,
                    }
                    if !counted_only {
                        *report.bad_by_block.entry(block).or_default() += &mass;
                        *report.by_row.entry(row).or_default() += mass;
                    }
                }
            }
        }
        den = new_den;
        let g = layer.values().fold(den.clone(), |g, v| g.gcd(v));
        if !g.is_one() && !g.is_zero() {
            den /= &g;
            for v in layer.values_mut() {
                *v /= &g;
            }
        }
        step += 1;
    }
    report.steps = step;
    Ok(report)
}

/// One exact run of `steps` steps from the initial state, trial `stream` of `seed`.
pub fn sample_run<M: CountableMdp + ?Sized>(
    mdp: &M,
    strategy: &Strategy,
    seed: u64,
    stream: u64,
    steps: u64,
) -> Result<Run, SimError> {
    let mut rng = RngStream::new(seed, stream);
    let mut run = Run::new(mdp.initial());
    let mut mem = strategy.initial_memory();
    for _ in 0..steps {
        let s = run.last_state().clone();
        let choice = match mdp.kind(&s)? {
            StateKind::Controlled => {
                let d = strategy.act(mdp, &mem, &s)?;
                Choice::Index(if d.len() == 1 { d[0].0 } else { pick(&d, rng.uniform()) })
            }
            StateKind::Random => Choice::Draw(rng.uniform()),
        };
        let idx_before = run.len();
        let edge = extend_run(mdp, &mut run, choice)?;
        let index = run.steps()[idx_before].index;
        mem = strategy.update_sampled(&mem, &s, index, &edge.target, &edge.reward, || rng.uniform())?;
    }
    Ok(run)
}

/// sup over strategies of the probability of taking no transition in `bad` during the first `k` steps.
pub fn finite_horizon_safety_value<M: CountableMdp + ?Sized>(
    mdp: &M,
    s0: &StateId,
    bad: &dyn Fn(&StateId, usize, &StateId) -> bool,
    k: u64,
) -> Result<Rational, SimError> {
    let mut memo: BTreeMap<(StateId, u64), Rational> = BTreeMap::new();
    safety_rec(mdp, s0, bad, k, &mut memo)
}

fn safety_rec<M: CountableMdp + ?Sized>(
    mdp: &M,
    s: &StateId,
    bad: &dyn Fn(&StateId, usize, &StateId) -> bool,
    k: u64,
    memo: &mut BTreeMap<(StateId, u64), Rational>,
) -> Result<Rational, SimError> {
    if k == 0 {
        return Ok(Rational::one());
    }
    if let Some(v) = memo.get(&(s.clone(), k)) {
        return Ok(v.clone());
    }
    let edges = mdp.all_successors(s)?;
    let mut vals = Vec::with_capacity(edges.len());
    for (i, e) in edges.iter().enumerate() {
        let v = if bad(s, i, &e.target) { Rational::zero() } else { safety_rec(mdp, &e.target, bad, k - 1, memo)? };
        vals.push(v);
    }
    let v = match mdp.kind(s)? {
        StateKind::Controlled => vals.into_iter().max().unwrap_or_else(Rational::one),
        StateKind::Random => {
            let mut acc = Rational::zero();
            for (e, v) in edges.iter().zip(vals) {
                let p = e.prob.as_ref().and_then(|p| p.exact()).ok_or_else(|| SimError::Inexact(s.to_string()))?;
                acc += p * v;
            }
            acc
        }
    };
    memo.insert((s.clone(), k), v.clone());
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gadgets::{mimic, mimic_fr, ChainSpec, Variant};
    use crate::numeric::rat;
    use crate::schedule::Schedule;
    use crate::strategy::make_md;

    #[test]
    fn z_scores() {
        assert!((z_score(0.95) - 1.959964).abs() < 1e-5);
        assert!((z_score(0.99) - 2.575829).abs() < 1e-5);
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson(30, 100, 1.96);
        assert!(lo < 0.3 && 0.3 < hi);
        assert_eq!(wilson(0, 10, 1.96).0, 0.0);
    }

    #[test]
    fn mimic_block_marginal() {
        let s = Schedule::accel_mimic();
        let ch = GadgetChain::build(&s, ChainSpec::new(Variant::StepImplicit, 3)).unwrap();
        let st = mimic_fr(&ch).unwrap();
        let r = exact_block_dp(&ch, &st, &DpOptions::blocks(1, BadSet::ALL)).unwrap();
        let n = ch.n_star();
        let d = ch.deltas(n).unwrap();
        let e = ch.epsilons(n).unwrap();
        let loss: Rational = d.iter().zip(&e).map(|(a, b)| a.exact().unwrap() * b.exact().unwrap()).sum();
        assert_eq!(r.survived, Rational::one() - loss);
        assert!(r.dip.is_zero());
    }

    #[test]
    fn rc_and_fr_mimic_agree() {
        let s = Schedule::accel_mimic();
        let ch = GadgetChain::build(&s, ChainSpec::new(Variant::StepImplicit, 8)).unwrap();
        let a = exact_block_dp(&ch, &mimic(&ch).unwrap(), &DpOptions::blocks(6, BadSet::ALL)).unwrap();
        let b = exact_block_dp(&ch, &mimic_fr(&ch).unwrap(), &DpOptions::blocks(6, BadSet::ALL)).unwrap();
        assert_eq!(a.survived, b.survived);
        assert!(a.dip.is_zero());
    }

    #[test]
    fn fixed_index_block() {
        let s = Schedule::accel_telescoping();
        let ch = GadgetChain::build(&s, ChainSpec::new(Variant::StepImplicit, 3)).unwrap();
        let st = make_md(|_| 0);
        let r = exact_block_dp(&ch, &st, &DpOptions::blocks(1, BadSet::ALL)).unwrap();
        let n = ch.n_star();
        let d = ch.deltas(n).unwrap();
        let e = ch.epsilons(n).unwrap();
        // index 0 enters at w and picks the bottom branch at c: never a dip, ⊥ with ε_0 after either branch
        let bad = (d[0].exact().unwrap() + d[1].exact().unwrap()) * e[0].exact().unwrap();
        assert_eq!(Rational::one() - &r.survived, bad);
        let top = make_md(|s| usize::from(s.role() == Some(Role::C)));
        let r = exact_block_dp(&ch, &top, &DpOptions::blocks(1, BadSet::ALL)).unwrap();
        assert_eq!(r.dip, d[0].exact().unwrap().clone());
    }

    #[test]
    fn safety_trivial_cases() {
        let mut m = FiniteMdp::new();
        let a = m.add_state(StateKind::Controlled);
        let b = m.add_state(StateKind::Controlled);
        m.add_edge(a, b, rat(0, 1), None);
        m.add_edge(b, b, rat(0, 1), None);
        let never = |_: &StateId, _: usize, _: &StateId| false;
        let always = |_: &StateId, _: usize, _: &StateId| true;
        assert_eq!(finite_horizon_safety_value(&m, &StateId::Plain(a), &never, 5).unwrap(), Rational::one());
        assert_eq!(finite_horizon_safety_value(&m, &StateId::Plain(a), &always, 5).unwrap(), Rational::zero());
    }

    #[test]
    fn trials_reproducible() {
        let s = Schedule::accel_mimic();
        let ch = GadgetChain::build(&s, ChainSpec::new(Variant::StepImplicit, 30)).unwrap();
        let st = mimic_fr(&ch).unwrap();
        let plan = TrialPlan::new(Horizon::Blocks(20), 2000, 7, Objective::Liminf(PayoffKind::Mean));
        let a = run_trials(&ch, &st, &plan).unwrap();
        let b = run_trials(&ch, &st, &plan).unwrap();
        assert_eq!(a, b);
        let mut cache = Compiled::new(&ch, None);
        let x = run_trial_range(&mut cache, &st, &plan, 0..700).unwrap();
        let y = run_trial_range(&mut cache, &st, &plan, 700..2000).unwrap();
        assert_eq!(x.merge(y), a.counts);
        assert_eq!(a.counts.cert_win, 0);
        assert!(a.counts.cert_lose > 0 && a.counts.unknown > 0);
    }
}
