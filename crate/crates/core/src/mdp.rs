//! Countable MDPs with controlled and random states, transition rewards and lazily generated successors.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_traits::{One, Signed, Zero};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub use crate::numeric::Prob;
use crate::numeric::{parse_rational, rat, sum_probs, to_f64, Interval, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    S,
    A,
    C,
    B,
    Q,
    W,
    Ent,
    Bot,
    Rst,
    Pad,
    Tr,
    Tc,
    Up,
    Dn,
    R,
    T,
    X,
}

impl Role {
    pub const ALL: [Role; 17] = [
        Role::S,
        Role::A,
        Role::C,
        Role::B,
        Role::Q,
        Role::W,
        Role::Ent,
        Role::Bot,
        Role::Rst,
        Role::Pad,
        Role::Tr,
        Role::Tc,
        Role::Up,
        Role::Dn,
        Role::R,
        Role::T,
        Role::X,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Role::S => "s",
            Role::A => "a",
            Role::C => "c",
            Role::B => "b",
            Role::Q => "q",
            Role::W => "w",
            Role::Ent => "ent",
            Role::Bot => "bot",
            Role::Rst => "rst",
            Role::Pad => "pad",
            Role::Tr => "tr",
            Role::Tc => "tc",
            Role::Up => "up",
            Role::Dn => "dn",
            Role::R => "r",
            Role::T => "t",
            Role::X => "x",
        }
    }
}

impl FromStr for Role {
    type Err = ParseStateError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .iter()
            .copied()
            .find(|r| r.code() == s)
            .ok_or_else(|| ParseStateError(s.to_string()))
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Position of a state inside a gadget chain: block `n`, role, branch index, offset along a path, restart row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GadgetCoord {
    pub n: u64,
    pub role: Role,
    pub branch: u64,
    pub offset: u64,
    pub row: u32,
}

impl GadgetCoord {
    pub fn new(n: u64, role: Role, branch: u64, offset: u64) -> Self {
        GadgetCoord { n, role, branch, offset, row: 0 }
    }

    pub fn in_row(mut self, row: u32) -> Self {
        self.row = row;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StateId {
    Plain(u64),
    Gadget(GadgetCoord),
    Step(Box<StateId>, u64),
    Reward(Box<StateId>, Rational),
    Mean(Box<StateId>, u64, Rational),
}

impl StateId {
    pub fn gadget(n: u64, role: Role, branch: u64, offset: u64) -> StateId {
        StateId::Gadget(GadgetCoord::new(n, role, branch, offset))
    }

    pub fn coord(&self) -> Option<&GadgetCoord> {
        match self.base() {
            StateId::Gadget(c) => Some(c),
            _ => None,
        }
    }

    pub fn role(&self) -> Option<Role> {
        self.coord().map(|c| c.role)
    }

    /// Strips every encoding layer.
    pub fn base(&self) -> &StateId {
        match self {
            StateId::Step(b, _) | StateId::Reward(b, _) | StateId::Mean(b, _, _) => b.base(),
            other => other,
        }
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateId::Plain(i) => write!(f, "p{i}"),
            StateId::Gadget(c) => {
                write!(f, "g{}/{}/{}/{}", c.n, c.role, c.branch, c.offset)?;
                if c.row > 0 {
                    write!(f, "~{}", c.row)?;
                }
                Ok(())
            }
            StateId::Step(b, n) => write!(f, "{b}@{n}"),
            StateId::Reward(b, r) => match **b {
                StateId::Step(..) => write!(f, "({b})@r={r}"),
                _ => write!(f, "{b}@r={r}"),
            },
            StateId::Mean(b, n, r) => write!(f, "{b}@{n}@r={r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed state id `{0}`")]
pub struct ParseStateError(pub String);

impl FromStr for StateId {
    type Err = ParseStateError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = || ParseStateError(text.to_string());
        let t = text.trim();
        if let Some(rest) = t.strip_prefix('(') {
            let close = rest.rfind(')').ok_or_else(err)?;
            let inner: StateId = rest[..close].parse()?;
            let r = rest[close + 1..].strip_prefix("@r=").ok_or_else(err)?;
            let r = parse_rational(r).map_err(|_| err())?;
            return Ok(StateId::Reward(Box::new(inner), r));
        }
        if let Some(at) = t.rfind('@') {
            let (head, tail) = (&t[..at], &t[at + 1..]);
            if let Some(r) = tail.strip_prefix("r=") {
                let r = parse_rational(r).map_err(|_| err())?;
                if let Some(at2) = head.rfind('@') {
                    if let Ok(n) = head[at2 + 1..].parse::<u64>() {
                        let base: StateId = head[..at2].parse()?;
                        return Ok(StateId::Mean(Box::new(base), n, r));
                    }
                }
                return Ok(StateId::Reward(Box::new(head.parse()?), r));
            }
            let n = tail.parse::<u64>().map_err(|_| err())?;
            return Ok(StateId::Step(Box::new(head.parse()?), n));
        }
        if let Some(i) = t.strip_prefix('p') {
            return i.parse().map(StateId::Plain).map_err(|_| err());
        }
        let body = t.strip_prefix('g').ok_or_else(err)?;
        let (body, row) = match body.split_once('~') {
            Some((b, r)) => (b, r.parse::<u32>().map_err(|_| err())?),
            None => (body, 0),
        };
        let parts: Vec<&str> = body.split('/').collect();
        if parts.len() != 4 {
            return Err(err());
        }
        let n = parts[0].parse().map_err(|_| err())?;
        let role = parts[1].parse().map_err(|_| err())?;
        let branch = parts[2].parse().map_err(|_| err())?;
        let offset = parts[3].parse().map_err(|_| err())?;
        Ok(StateId::Gadget(GadgetCoord { n, role, branch, offset, row }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Controlled,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degree {
    Finite(usize),
    Infinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutEdge {
    pub target: StateId,
    pub reward: Rational,
    /// `None` on controlled states.
    pub prob: Option<Prob>,
}

impl OutEdge {
    pub fn choice(target: StateId, reward: Rational) -> Self {
        OutEdge { target, reward, prob: None }
    }

    pub fn random(target: StateId, reward: Rational, prob: Prob) -> Self {
        OutEdge { target, reward, prob: Some(prob) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MdpError {
    #[error("unknown state {0}")]
    UnknownState(String),
    #[error("state {state} has no edge with index {index}")]
    EdgeOutOfRange { state: String, index: usize },
    #[error("state {0} has infinitely many successors")]
    InfiniteBranching(String),
    #[error("state {0} is not controlled")]
    NotControlled(String),
    #[error("state {0} is not random")]
    NotRandom(String),
    #[error("invalid construction: {0}")]
    Invalid(String),
}

impl MdpError {
    pub fn unknown(s: &StateId) -> Self {
        MdpError::UnknownState(s.to_string())
    }
}

pub trait CountableMdp {
    fn initial(&self) -> StateId;

    fn kind(&self, s: &StateId) -> Result<StateKind, MdpError>;

    fn degree(&self, s: &StateId) -> Result<Degree, MdpError>;

    /// The first `limit` outgoing edges in canonical order.
    fn successors(&self, s: &StateId, limit: usize) -> Result<Vec<OutEdge>, MdpError>;

    /// Mass not covered by the first `probed` edges of a random state with infinite branching.
    fn tail_mass(&self, _s: &StateId, _probed: usize) -> Result<Option<Prob>, MdpError> {
        Ok(None)
    }

    fn edge(&self, s: &StateId, index: usize) -> Result<OutEdge, MdpError> {
        let mut edges = self.successors(s, index.saturating_add(1))?;
        if edges.len() <= index {
            return Err(MdpError::EdgeOutOfRange { state: s.to_string(), index });
        }
        Ok(edges.swap_remove(index))
    }

    fn all_successors(&self, s: &StateId) -> Result<Vec<OutEdge>, MdpError> {
        match self.degree(s)? {
            Degree::Finite(d) => self.successors(s, d),
            Degree::Infinite => Err(MdpError::InfiniteBranching(s.to_string())),
        }
    }
}

impl<M: CountableMdp + ?Sized> CountableMdp for &M {
    fn initial(&self) -> StateId {
        (**self).initial()
    }
    fn kind(&self, s: &StateId) -> Result<StateKind, MdpError> {
        (**self).kind(s)
    }
    fn degree(&self, s: &StateId) -> Result<Degree, MdpError> {
        (**self).degree(s)
    }
    fn successors(&self, s: &StateId, limit: usize) -> Result<Vec<OutEdge>, MdpError> {
        (**self).successors(s, limit)
    }
    fn tail_mass(&self, s: &StateId, probed: usize) -> Result<Option<Prob>, MdpError> {
        (**self).tail_mass(s, probed)
    }
}

impl<M: CountableMdp + ?Sized> CountableMdp for Arc<M> {
    fn initial(&self) -> StateId {
        (**self).initial()
    }
    fn kind(&self, s: &StateId) -> Result<StateKind, MdpError> {
        (**self).kind(s)
    }
    fn degree(&self, s: &StateId) -> Result<Degree, MdpError> {
        (**self).degree(s)
    }
    fn successors(&self, s: &StateId, limit: usize) -> Result<Vec<OutEdge>, MdpError> {
        (**self).successors(s, limit)
    }
    fn tail_mass(&self, s: &StateId, probed: usize) -> Result<Option<Prob>, MdpError> {
        (**self).tail_mass(s, probed)
    }
}

pub fn successors<M: CountableMdp + ?Sized>(mdp: &M, s: &StateId, limit: usize) -> Result<Vec<OutEdge>, MdpError> {
    mdp.successors(s, limit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub state: StateId,
    pub kind: StateKind,
    pub probed: usize,
    pub prob_sum: Option<Prob>,
    pub tail: Option<Prob>,
    pub passed: bool,
    pub detail: Option<String>,
}

/// Local well-formedness: controlled states have a successor, random distributions are positive and sum to 1
/// (exactly, or within `tol` for enclosures; infinite fans are checked on `probe` edges plus the tail mass).
pub fn validate_local<M: CountableMdp + ?Sized>(
    mdp: &M,
    s: &StateId,
    tol: f64,
    probe: usize,
) -> Result<ValidationReport, MdpError> {
    let kind = mdp.kind(s)?;
    let degree = mdp.degree(s)?;
    let limit = match degree {
        Degree::Finite(d) => d,
        Degree::Infinite => probe,
    };
    let edges = mdp.successors(s, limit)?;
    let mut report = ValidationReport {
        state: s.clone(),
        kind,
        probed: edges.len(),
        prob_sum: None,
        tail: None,
        passed: true,
        detail: None,
    };
    if edges.is_empty() {
        report.passed = false;
        report.detail = Some("no successors".into());
        return Ok(report);
    }
    if kind == StateKind::Controlled {
        if edges.iter().any(|e| e.prob.is_some()) {
            report.passed = false;
            report.detail = Some("controlled edge carries a probability".into());
        }
        return Ok(report);
    }
    let mut probs = Vec::with_capacity(edges.len());
    for (i, e) in edges.iter().enumerate() {
        match &e.prob {
            Some(p) if p.is_positive() => probs.push(p.clone()),
            Some(_) => {
                report.passed = false;
                report.detail = Some(format!("edge {i} has non-positive probability"));
                return Ok(report);
            }
            None => {
                report.passed = false;
                report.detail = Some(format!("random edge {i} has no probability"));
                return Ok(report);
            }
        }
    }
    let mut total = sum_probs(probs.iter());
    if degree == Degree::Infinite {
        let tail = mdp.tail_mass(s, edges.len())?;
        match &tail {
            Some(t) => total = sum_probs([&total, t]),
            None => {
                report.passed = false;
                report.detail = Some("infinite fan without a tail-mass bound".into());
            }
        }
        report.tail = tail;
    }
    let ok = match &total {
        Prob::Exact(r) => r.is_one(),
        Prob::Approx(i) => i.lo() - tol <= 1.0 && 1.0 <= i.hi() + tol,
    };
    if !ok {
        report.passed = false;
        report.detail = Some(format!("probabilities sum to {total}"));
    }
    report.prob_sum = Some(total);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStep {
    pub index: usize,
    pub reward: Rational,
}

/// Finite run prefix s0 e0 s1 e1 ... sn.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    states: Vec<StateId>,
    steps: Vec<RunStep>,
}

impl Run {
    pub fn new(initial: StateId) -> Self {
        Run { states: alloc::vec![initial], steps: Vec::new() }
    }

    /// Number of transitions taken.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn state(&self, i: usize) -> &StateId {
        &self.states[i]
    }

    pub fn last_state(&self) -> &StateId {
        self.states.last().expect("runs are never empty")
    }

    pub fn states(&self) -> &[StateId] {
        &self.states
    }

    pub fn steps(&self) -> &[RunStep] {
        &self.steps
    }

    pub fn rewards(&self) -> impl Iterator<Item = &Rational> + '_ {
        self.steps.iter().map(|s| &s.reward)
    }

    pub fn total(&self) -> Rational {
        self.rewards().fold(Rational::zero(), |acc, r| acc + r)
    }

    pub fn push(&mut self, index: usize, reward: Rational, target: StateId) {
        self.steps.push(RunStep { index, reward });
        self.states.push(target);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Choice {
    /// Edge index at a controlled state.
    Index(usize),
    /// Uniform draw in [0,1) resolving a random state.
    Draw(f64),
}

/// Maps a uniform draw to an edge index by walking cumulative probabilities.
pub fn sample_index<M: CountableMdp + ?Sized>(mdp: &M, s: &StateId, u: f64) -> Result<usize, MdpError> {
    let mut acc = 0.0;
    let mut limit = 8usize;
    let mut seen = 0usize;
    loop {
        let edges = mdp.successors(s, limit)?;
        for (i, e) in edges.iter().enumerate().skip(seen) {
            acc += e.prob.as_ref().map(Prob::to_f64).unwrap_or(0.0);
            if u < acc {
                return Ok(i);
            }
        }
        let exhausted = edges.len() < limit || limit >= 1 << 20;
        if exhausted {
            return edges.len().checked_sub(1).ok_or_else(|| MdpError::Invalid(format!("{s} has no successors")));
        }
        seen = edges.len();
        limit *= 2;
    }
}

pub fn extend_run<M: CountableMdp + ?Sized>(mdp: &M, run: &mut Run, choice: Choice) -> Result<OutEdge, MdpError> {
    let s = run.last_state().clone();
    let kind = mdp.kind(&s)?;
    let index = match (kind, choice) {
        (StateKind::Controlled, Choice::Index(i)) => i,
        (StateKind::Random, Choice::Draw(u)) => sample_index(mdp, &s, u)?,
        (StateKind::Controlled, Choice::Draw(_)) => return Err(MdpError::NotRandom(s.to_string())),
        (StateKind::Random, Choice::Index(_)) => return Err(MdpError::NotControlled(s.to_string())),
    };
    let edge = mdp.edge(&s, index)?;
    run.push(index, edge.reward.clone(), edge.target.clone());
    Ok(edge)
}

/// Per-trial random stream: ChaCha8 keyed by the master seed, stream id = trial index.
#[derive(Debug, Clone)]
pub struct RngStream(ChaCha8Rng);

pub const RNG_ALGORITHM: &str = "chacha8-stream/seed_from_u64";

impl RngStream {
    pub fn new(master_seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream);
        RngStream(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in [0,1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        self.0.next_u64() % n
    }
}

#[derive(Debug, Clone)]
struct FiniteState {
    kind: StateKind,
    edges: Vec<OutEdge>,
}

/// Explicit MDP over `p0..p{n-1}`.
#[derive(Debug, Clone)]
pub struct FiniteMdp {
    states: Vec<FiniteState>,
    initial: u64,
}

impl FiniteMdp {
    pub fn new() -> Self {
        FiniteMdp { states: Vec::new(), initial: 0 }
    }

    pub fn add_state(&mut self, kind: StateKind) -> u64 {
        self.states.push(FiniteState { kind, edges: Vec::new() });
        (self.states.len() - 1) as u64
    }

    pub fn set_initial(&mut self, s: u64) {
        self.initial = s;
    }

    pub fn add_edge(&mut self, from: u64, to: u64, reward: Rational, prob: Option<Rational>) {
        let e = OutEdge { target: StateId::Plain(to), reward, prob: prob.map(Prob::Exact) };
        self.states[from as usize].edges.push(e);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_ids(&self) -> impl Iterator<Item = StateId> {
        (0..self.states.len() as u64).map(StateId::Plain)
    }

    fn get(&self, s: &StateId) -> Result<&FiniteState, MdpError> {
        match s {
            StateId::Plain(i) => self.states.get(*i as usize).ok_or_else(|| MdpError::unknown(s)),
            _ => Err(MdpError::unknown(s)),
        }
    }

    /// Random instance: every state gets 1..=max_out edges, random probabilities with small denominators
    /// and rewards in [-reward_span, reward_span] with denominators up to 4.
    pub fn random(rng: &mut RngStream, n_states: usize, max_out: usize, reward_span: i64) -> FiniteMdp {
        let mut m = FiniteMdp::new();
        for _ in 0..n_states {
            let kind = if rng.below(2) == 0 { StateKind::Controlled } else { StateKind::Random };
            m.add_state(kind);
        }
        for s in 0..n_states as u64 {
            let out = 1 + rng.below(max_out as u64) as usize;
            let weights: Vec<i64> = (0..out).map(|_| 1 + rng.below(4) as i64).collect();
            let total: i64 = weights.iter().sum();
            for w in weights {
                let to = rng.below(n_states as u64);
                let den = 1 + rng.below(4) as i64;
                let num = rng.below((2 * reward_span * den + 1) as u64) as i64 - reward_span * den;
                let prob = match m.states[s as usize].kind {
                    StateKind::Random => Some(rat(w, total)),
                    StateKind::Controlled => None,
                };
                m.add_edge(s, to, rat(num, den), prob);
            }
        }
        m
    }
}

impl Default for FiniteMdp {
    fn default() -> Self {
        Self::new()
    }
}

impl CountableMdp for FiniteMdp {
    fn initial(&self) -> StateId {
        StateId::Plain(self.initial)
    }

    fn kind(&self, s: &StateId) -> Result<StateKind, MdpError> {
        Ok(self.get(s)?.kind)
    }

    fn degree(&self, s: &StateId) -> Result<Degree, MdpError> {
        Ok(Degree::Finite(self.get(s)?.edges.len()))
    }

    fn successors(&self, s: &StateId, limit: usize) -> Result<Vec<OutEdge>, MdpError> {
        Ok(self.get(s)?.edges.iter().take(limit).cloned().collect())
    }
}

/// Negative-free helper for callers that store probabilities as f64 tables.
pub fn edge_prob_f64(e: &OutEdge) -> f64 {
    e.prob.as_ref().map(Prob::to_f64).unwrap_or(0.0)
}

pub fn reward_f64(e: &OutEdge) -> f64 {
    to_f64(&e.reward)
}

pub fn interval_sum(edges: &[OutEdge]) -> Interval {
    edges
        .iter()
        .filter_map(|e| e.prob.as_ref())
        .fold(Interval::point(0.0), |acc, p| acc + p.interval())
}

pub fn is_negative(r: &Rational) -> bool {
    r.is_negative()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_ids_round_trip() {
        let ids = [
            "g7/s/0/0",
            "g12/a/3/5~2",
            "p4",
            "g3/c/0/0@17",
            "g3/c/0/0@r=-5/2",
            "g3/c/0/0@4@r=7",
            "(g3/c/0/0@4)@r=7",
        ];
        for t in ids {
            let s: StateId = t.parse().unwrap();
            assert_eq!(s.to_string(), t);
        }
        assert!(matches!("g3/c/0/0@4@r=7".parse::<StateId>().unwrap(), StateId::Mean(..)));
        assert!("g3/zz/0/0".parse::<StateId>().is_err());
        assert!("g3/s/0".parse::<StateId>().is_err());
    }

    #[test]
    fn random_finite_mdps_validate() {
        let mut rng = RngStream::new(9, 0);
        for _ in 0..50 {
            let m = FiniteMdp::random(&mut rng, 6, 3, 3);
            for s in m.state_ids() {
                let r = validate_local(&m, &s, 0.0, 0).unwrap();
                assert!(r.passed, "{:?}", r);
            }
        }
    }

    #[test]
    fn extend_run_checks_kind() {
        let mut m = FiniteMdp::new();
        let a = m.add_state(StateKind::Controlled);
        let b = m.add_state(StateKind::Random);
        m.add_edge(a, b, rat(1, 1), None);
        m.add_edge(b, a, rat(-1, 2), Some(rat(1, 1)));
        let mut run = Run::new(m.initial());
        assert!(extend_run(&m, &mut run, Choice::Draw(0.3)).is_err());
        extend_run(&m, &mut run, Choice::Index(0)).unwrap();
        extend_run(&m, &mut run, Choice::Draw(0.9)).unwrap();
        assert_eq!(run.len(), 2);
        assert_eq!(run.total(), rat(1, 2));
        assert!(extend_run(&m, &mut run, Choice::Index(3)).is_err());
    }
}
