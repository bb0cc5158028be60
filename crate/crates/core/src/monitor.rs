//! Incremental point/mean/total payoff monitors, run verdicts, safety levels and bubbles.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use crate::mdp::{CountableMdp, Degree, MdpError, OutEdge, Prob, Role, StateId, StateKind};
use crate::numeric::Rational;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PayoffKind {
    Point,
    Mean,
    Total,
}

impl PayoffKind {
    pub const ALL: [PayoffKind; 3] = [PayoffKind::Point, PayoffKind::Mean, PayoffKind::Total];

    pub fn code(self) -> &'static str {
        match self {
            PayoffKind::Point => "PP",
            PayoffKind::Mean => "MP",
            PayoffKind::Total => "TP",
        }
    }
}

impl fmt::Display for PayoffKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Step count, accumulated total and last reward of a run prefix.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MonitorState {
    steps: u64,
    total: Rational,
    last: Option<Rational>,
}

impl MonitorState {
    pub fn new() -> Self {
        MonitorState { steps: 0, total: Rational::zero(), last: None }
    }

    pub fn observe(&mut self, reward: &Rational) {
        self.steps += 1;
        self.total += reward;
        self.last = Some(reward.clone());
    }

    pub fn observed(&self, reward: &Rational) -> MonitorState {
        let mut next = self.clone();
        next.observe(reward);
        next
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn total(&self) -> &Rational {
        &self.total
    }

    pub fn last(&self) -> Option<&Rational> {
        self.last.as_ref()
    }

    /// Current value of the quantity whose liminf defines `kind`; `None` before the first step
    /// for point and mean payoff.
    pub fn value(&self, kind: PayoffKind) -> Option<Rational> {
        match kind {
            PayoffKind::Point => self.last.clone(),
            PayoffKind::Mean => {
                (self.steps > 0).then(|| &self.total / Rational::from_integer(BigInt::from(self.steps)))
            }
            PayoffKind::Total => Some(self.total.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Reason {
    /// Entered an absorbing region where every continuation loses.
    Sink,
    /// Entered an absorbing zero-reward region with a non-negative total.
    SafeRegion,
    /// A construction-level bad event was observed.
    BadEvent,
    /// The run exhausted its horizon while still in the winning part of the chain.
    Horizon,
}

impl Reason {
    pub fn code(self) -> &'static str {
        match self {
            Reason::Sink => "sink",
            Reason::SafeRegion => "safe-region",
            Reason::BadEvent => "bad-event",
            Reason::Horizon => "horizon",
        }
    }
}

impl FromStr for Reason {
    type Err = ParseVerdictError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Reason::Sink, Reason::SafeRegion, Reason::BadEvent, Reason::Horizon]
            .into_iter()
            .find(|r| r.code() == s)
            .ok_or_else(|| ParseVerdictError(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Verdict {
    CertWin(Reason),
    CertLose(Reason),
    Unknown,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::CertWin(_) => "win",
            Verdict::CertLose(_) => "lose",
            Verdict::Unknown => "unknown",
        }
    }

    pub fn reason(self) -> Option<Reason> {
        match self {
            Verdict::CertWin(r) | Verdict::CertLose(r) => Some(r),
            Verdict::Unknown => None,
        }
    }

    pub fn is_decided(self) -> bool {
        !matches!(self, Verdict::Unknown)
    }
}

/// Serialised as `win:<reason>`, `lose:<reason>` or `unknown`.
impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.reason() {
            Some(r) => write!(f, "{}:{}", self.label(), r.code()),
            None => f.write_str("unknown"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed verdict `{0}`")]
pub struct ParseVerdictError(pub String);

impl FromStr for Verdict {
    type Err = ParseVerdictError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "unknown" {
            return Ok(Verdict::Unknown);
        }
        let (label, reason) = s.split_once(':').ok_or_else(|| ParseVerdictError(s.to_string()))?;
        let reason: Reason = reason.parse()?;
        match label {
            "win" => Ok(Verdict::CertWin(reason)),
            "lose" => Ok(Verdict::CertLose(reason)),
            _ => Err(ParseVerdictError(s.to_string())),
        }
    }
}

#[derive(Clone)]
pub enum Region {
    Role(Role),
    State(StateId),
    Predicate(Arc<dyn Fn(&StateId) -> bool + Send + Sync>),
}

impl Region {
    pub fn contains(&self, s: &StateId) -> bool {
        match self {
            Region::Role(r) => s.role() == Some(*r),
            Region::State(t) => s.base() == t,
            Region::Predicate(p) => p(s),
        }
    }
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Role(r) => write!(f, "Role({r})"),
            Region::State(s) => write!(f, "State({s})"),
            Region::Predicate(_) => f.write_str("Predicate(..)"),
        }
    }
}

/// Absorbing regions a construction declares: every run entering a losing region loses all three
/// objectives; a safe region is a zero-reward trap, so only the total payoff still depends on the entry total.
#[derive(Debug, Clone, Default)]
pub struct StructuralFacts {
    pub losing: Vec<Region>,
    pub safe: Vec<Region>,
}

impl StructuralFacts {
    pub fn losing_role(role: Role) -> Self {
        StructuralFacts { losing: alloc::vec![Region::Role(role)], safe: Vec::new() }
    }

    pub fn is_losing(&self, s: &StateId) -> bool {
        self.losing.iter().any(|r| r.contains(s))
    }

    pub fn is_safe(&self, s: &StateId) -> bool {
        self.safe.iter().any(|r| r.contains(s))
    }
}

/// Certified verdict for the run whose current state is `state` and whose prefix is summarised by `m`.
pub fn verdict(facts: &StructuralFacts, state: &StateId, m: &MonitorState, kind: PayoffKind) -> Verdict {
    if facts.is_losing(state) {
        return Verdict::CertLose(Reason::Sink);
    }
    if facts.is_safe(state) {
        return match kind {
            PayoffKind::Point | PayoffKind::Mean => Verdict::CertWin(Reason::SafeRegion),
            PayoffKind::Total if !m.total().is_negative() => Verdict::CertWin(Reason::SafeRegion),
            PayoffKind::Total => Verdict::CertLose(Reason::SafeRegion),
        };
    }
    Verdict::Unknown
}

/// Latches the first decided verdict so later observations cannot revise it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerdictTracker {
    current: Verdict,
}

impl Default for VerdictTracker {
    fn default() -> Self {
        VerdictTracker { current: Verdict::Unknown }
    }
}

impl VerdictTracker {
    pub fn update(&mut self, v: Verdict) -> Verdict {
        if !self.current.is_decided() {
            self.current = v;
        }
        self.current
    }

    pub fn get(&self) -> Verdict {
        self.current
    }
}

/// Level i of a safety family: after step k every reward must be at least -2^-i.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SafetyLevelSpec {
    pub level: u32,
    pub k: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyStatus {
    Violated,
    HoldsSoFar,
    /// The prefix is shorter than k, so nothing is known about the level yet.
    Undetermined,
}

pub fn safety_threshold(level: u32) -> Rational {
    -Rational::new(BigInt::one(), BigInt::one() << level as usize)
}

pub fn safety_level_holds<'a>(rewards: impl IntoIterator<Item = &'a Rational>, spec: SafetyLevelSpec) -> SafetyStatus {
    let threshold = safety_threshold(spec.level);
    let mut len = 0u64;
    for (i, r) in rewards.into_iter().enumerate() {
        len = i as u64 + 1;
        if i as u64 >= spec.k && *r < threshold {
            return SafetyStatus::Violated;
        }
    }
    if len < spec.k { SafetyStatus::Undetermined } else { SafetyStatus::HoldsSoFar }
}

/// Breadth-first distances from `s0`, up to `radius` steps.
pub fn bfs_depths<M: CountableMdp + ?Sized>(
    mdp: &M,
    s0: &StateId,
    radius: u64,
) -> Result<BTreeMap<StateId, u64>, MdpError> {
    let mut depth = BTreeMap::new();
    depth.insert(s0.clone(), 0u64);
    let mut queue = VecDeque::from([(s0.clone(), 0u64)]);
    while let Some((s, d)) = queue.pop_front() {
        if d == radius {
            continue;
        }
        if mdp.degree(&s)? == Degree::Infinite {
            return Err(MdpError::InfiniteBranching(s.to_string()));
        }
        for e in mdp.all_successors(&s)? {
            if !depth.contains_key(&e.target) {
                depth.insert(e.target.clone(), d + 1);
                queue.push_back((e.target, d + 1));
            }
        }
    }
    Ok(depth)
}

/// States reachable from `s0` in at most `n` steps.
pub fn bubble<M: CountableMdp + ?Sized>(mdp: &M, s0: &StateId, n: u64) -> Result<BTreeSet<StateId>, MdpError> {
    Ok(bfs_depths(mdp, s0, n)?.into_keys().collect())
}

/// Same graph, every transition from s rewarded -1/(d(s)+1) with d the distance from the initial state.
/// Distances within `radius` are cached at construction; farther states are resolved by a fresh search.
pub struct TransienceRewards<M> {
    inner: M,
    depths: BTreeMap<StateId, u64>,
    radius: u64,
}

pub fn transience_reward_structure<M: CountableMdp>(mdp: M, radius: u64) -> Result<TransienceRewards<M>, MdpError> {
    let s0 = mdp.initial();
    let depths = bfs_depths(&mdp, &s0, radius)?;
    Ok(TransienceRewards { inner: mdp, depths, radius })
}

impl<M: CountableMdp> TransienceRewards<M> {
    pub fn depth(&self, s: &StateId) -> Result<u64, MdpError> {
        if let Some(d) = self.depths.get(s) {
            return Ok(*d);
        }
        let mut radius = self.radius.max(1);
        loop {
            radius = radius.saturating_mul(2);
            let d = bfs_depths(&self.inner, &self.inner.initial(), radius)?;
            if let Some(v) = d.get(s) {
                return Ok(*v);
            }
            if radius > (1 << 24) {
                return Err(MdpError::unknown(s));
            }
        }
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: CountableMdp> CountableMdp for TransienceRewards<M> {
    fn initial(&self) -> StateId {
        self.inner.initial()
    }

    fn kind(&self, s: &StateId) -> Result<StateKind, MdpError> {
        self.inner.kind(s)
    }

    fn degree(&self, s: &StateId) -> Result<Degree, MdpError> {
        self.inner.degree(s)
    }

    fn successors(&self, s: &StateId, limit: usize) -> Result<Vec<OutEdge>, MdpError> {
        let d = self.depth(s)?;
        let r = -Rational::new(BigInt::one(), BigInt::from(d + 1));
        Ok(self
            .inner
            .successors(s, limit)?
            .into_iter()
            .map(|e| OutEdge { reward: r.clone(), ..e })
            .collect())
    }

    fn tail_mass(&self, s: &StateId, probed: usize) -> Result<Option<Prob>, MdpError> {
        self.inner.tail_mass(s, probed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::FiniteMdp;
    use crate::numeric::{int, rat};

    #[test]
    fn monitor_values() {
        let mut m = MonitorState::new();
        assert_eq!(m.value(PayoffKind::Mean), None);
        assert_eq!(m.value(PayoffKind::Point), None);
        for r in [int(1), int(-3), int(2)] {
            m.observe(&r);
        }
        assert_eq!(m.value(PayoffKind::Point), Some(int(2)));
        assert_eq!(m.value(PayoffKind::Total), Some(int(0)));
        assert_eq!(m.value(PayoffKind::Mean), Some(int(0)));
        let shifted = m.observed(&rat(-1, 2));
        assert_eq!(shifted.value(PayoffKind::Mean), Some(rat(-1, 8)));
        assert_eq!(m.steps(), 3);
    }

    #[test]
    fn verdict_text_round_trips() {
        for v in [Verdict::CertWin(Reason::SafeRegion), Verdict::CertLose(Reason::Sink), Verdict::Unknown] {
            assert_eq!(v.to_string().parse::<Verdict>().unwrap(), v);
        }
        assert!("lose:nope".parse::<Verdict>().is_err());
    }

    #[test]
    fn safety_levels() {
        let rw = [int(-5), int(-5), int(0), int(0)];
        assert_eq!(safety_level_holds(&rw, SafetyLevelSpec { level: 0, k: 2 }), SafetyStatus::HoldsSoFar);
        assert_eq!(safety_level_holds(&rw, SafetyLevelSpec { level: 0, k: 1 }), SafetyStatus::Violated);
        assert_eq!(safety_level_holds(&rw, SafetyLevelSpec { level: 0, k: 9 }), SafetyStatus::Undetermined);
        let rw = [int(0), int(0), int(0), int(0), int(-1)];
        assert_eq!(safety_level_holds(&rw, SafetyLevelSpec { level: 1, k: 1 }), SafetyStatus::Violated);
        let rw = [rat(-1, 2), rat(-1, 2)];
        assert_eq!(safety_level_holds(&rw, SafetyLevelSpec { level: 1, k: 0 }), SafetyStatus::HoldsSoFar);
    }

    fn chain(len: u64) -> FiniteMdp {
        let mut m = FiniteMdp::new();
        for _ in 0..len {
            m.add_state(StateKind::Controlled);
        }
        for i in 0..len - 1 {
            m.add_edge(i, i + 1, int(3), None);
        }
        m.add_edge(len - 1, len - 1, int(3), None);
        m
    }

    #[test]
    fn transience_rewards_on_chain() {
        let t = transience_reward_structure(chain(6), 10).unwrap();
        let mut s = t.initial();
        let mut seen = Vec::new();
        for _ in 0..3 {
            let e = t.edge(&s, 0).unwrap();
            seen.push(e.reward.clone());
            s = e.target;
        }
        assert_eq!(seen, [rat(-1, 1), rat(-1, 2), rat(-1, 3)]);
        let last = StateId::Plain(5);
        assert_eq!(t.edge(&last, 0).unwrap().reward, rat(-1, 6));
        let small = transience_reward_structure(chain(40), 2).unwrap();
        assert_eq!(small.edge(&StateId::Plain(30), 0).unwrap().reward, rat(-1, 31));
    }

    #[test]
    fn bubbles_grow_by_one_step() {
        let m = chain(5);
        let b = bubble(&m, &m.initial(), 2).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(bubble(&m, &m.initial(), 0).unwrap().len(), 1);
    }
}
