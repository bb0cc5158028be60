//! Strategies as memory machines: a memory value (mode, step counter, reward counter) that only the
//! class-permitted parts of may be read, an action rule and a memory update applied after every step.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_traits::{One, Zero};

use crate::mdp::{CountableMdp, Degree, MdpError, StateId, StateKind};
use crate::numeric::{to_f64, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StrategyClass {
    Md,
    Fr(u32),
    Markov,
    RewardCounter,
    StepReward,
    KBitMarkov(u32),
    Hd,
}

impl StrategyClass {
    pub fn reads_step(self) -> bool {
        matches!(self, StrategyClass::Markov | StrategyClass::StepReward | StrategyClass::KBitMarkov(_))
    }

    pub fn reads_total(self) -> bool {
        matches!(self, StrategyClass::RewardCounter | StrategyClass::StepReward)
    }

    /// Number of modes, `None` when unbounded.
    pub fn modes(self) -> Option<u64> {
        match self {
            StrategyClass::Fr(k) => Some(k as u64),
            StrategyClass::KBitMarkov(k) => Some(1u64 << k),
            StrategyClass::Hd => None,
            _ => Some(1),
        }
    }
}

impl fmt::Display for StrategyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyClass::Md => f.write_str("MD"),
            StrategyClass::Fr(k) => write!(f, "FR({k})"),
            StrategyClass::Markov => f.write_str("Markov"),
            StrategyClass::RewardCounter => f.write_str("RC"),
            StrategyClass::StepReward => f.write_str("SC+RC"),
            StrategyClass::KBitMarkov(k) => write!(f, "{k}BitMarkov"),
            StrategyClass::Hd => f.write_str("HD"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown strategy class `{0}`")]
pub struct ParseClassError(pub String);

impl FromStr for StrategyClass {
    type Err = ParseClassError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseClassError(s.to_string());
        Ok(match s {
            "MD" => StrategyClass::Md,
            "Markov" | "SC" => StrategyClass::Markov,
            "RC" => StrategyClass::RewardCounter,
            "SC+RC" => StrategyClass::StepReward,
            "HD" => StrategyClass::Hd,
            _ => {
                if let Some(k) = s.strip_prefix("FR(").and_then(|r| r.strip_suffix(')')) {
                    StrategyClass::Fr(k.parse().map_err(|_| err())?)
                } else if let Some(k) = s.strip_suffix("BitMarkov") {
                    StrategyClass::KBitMarkov(k.parse().map_err(|_| err())?)
                } else {
                    return Err(err());
                }
            }
        })
    }
}

/// Finite-support distribution with exact weights.
pub type Dist<T> = Vec<(T, Rational)>;

pub fn point<T>(x: T) -> Dist<T> {
    alloc::vec![(x, Rational::one())]
}

/// Picks from a distribution with a uniform draw.
pub fn sample_dist<T: Clone>(d: &Dist<T>, u: f64) -> T {
    let mut acc = 0.0;
    for (x, p) in d {
        acc += to_f64(p);
        if u < acc {
            return x.clone();
        }
    }
    d.last().expect("non-empty distribution").0.clone()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Memory {
    pub mode: u64,
    pub step: u64,
    /// Only maintained for classes that read it.
    pub total: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StrategyError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("strategy asked to act at non-controlled state {0}")]
    NotControlled(String),
    #[error("memory mode {mode} outside the {modes} available")]
    MemoryOutOfRange { mode: u64, modes: u64 },
    #[error("distribution over {0} does not sum to 1")]
    BadDistribution(&'static str),
    #[error("{class} cannot be expressed as {target}")]
    ClassTooRich { class: String, target: String },
    #[error("probabilities at {0} are not exact")]
    Inexact(String),
}

type ActFn = Arc<dyn Fn(u64, u64, &Rational, &StateId) -> Dist<usize> + Send + Sync>;
type UpdateFn = Arc<dyn Fn(u64, u64, &StateId, usize, &StateId) -> Dist<u64> + Send + Sync>;

#[derive(Clone)]
pub struct Strategy {
    class: StrategyClass,
    initial_mode: u64,
    act: ActFn,
    update: Option<UpdateFn>,
    label: String,
}

impl fmt::Debug for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Strategy({}, {})", self.class, self.label)
    }
}

impl Strategy {
    pub fn class(&self) -> StrategyClass {
        self.class
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn initial_memory(&self) -> Memory {
        Memory { mode: self.initial_mode, step: 0, total: Rational::zero() }
    }

    pub fn reads_total(&self) -> bool {
        self.class.reads_total()
    }

    /// Distribution over edge indices at a controlled state. Indices are not clamped here.
    pub fn act_raw(&self, m: &Memory, s: &StateId) -> Dist<usize> {
        (self.act)(m.mode, m.step, &m.total, s)
    }

    pub fn act<M: CountableMdp + ?Sized>(&self, mdp: &M, m: &Memory, s: &StateId) -> Result<Dist<usize>, StrategyError> {
        if mdp.kind(s)? != StateKind::Controlled {
            return Err(StrategyError::NotControlled(s.to_string()));
        }
        let degree = mdp.degree(s)?;
        let mut d = self.act_raw(m, s);
        if d.is_empty() {
            return Err(StrategyError::BadDistribution("actions"));
        }
        for (i, _) in d.iter_mut() {
            *i = clamp_index(*i, degree);
        }
        Ok(d)
    }

    /// Memory after taking edge `index` from `src` to `tgt` with `reward`.
    pub fn update(
        &self,
        m: &Memory,
        src: &StateId,
        index: usize,
        tgt: &StateId,
        reward: &Rational,
    ) -> Result<Dist<Memory>, StrategyError> {
        let step = m.step + 1;
        let total = if self.class.reads_total() { &m.total + reward } else { Rational::zero() };
        let modes = match &self.update {
            None => point(m.mode),
            Some(u) => u(m.mode, m.step, src, index, tgt),
        };
        if let Some(limit) = self.class.modes() {
            if let Some((bad, _)) = modes.iter().find(|(x, _)| *x >= limit) {
                return Err(StrategyError::MemoryOutOfRange { mode: *bad, modes: limit });
            }
        }
        Ok(modes
            .into_iter()
            .map(|(mode, p)| (Memory { mode, step, total: total.clone() }, p))
            .collect())
    }

    /// Single-successor shortcut used by simulators: draws the next mode with `u` when the update is randomised.
    pub fn update_sampled(
        &self,
        m: &Memory,
        src: &StateId,
        index: usize,
        tgt: &StateId,
        reward: &Rational,
        u: impl FnOnce() -> f64,
    ) -> Result<Memory, StrategyError> {
        let d = self.update(m, src, index, tgt, reward)?;
        Ok(if d.len() == 1 { d.into_iter().next().unwrap().0 } else { sample_dist(&d, u()) })
    }

    pub fn is_deterministic_update(&self) -> bool {
        self.update.is_none()
    }
}

/// Choices past the last edge of a finite fan select the last edge.
pub fn clamp_index(i: usize, degree: Degree) -> usize {
    match degree {
        Degree::Finite(d) if d > 0 && i >= d => d - 1,
        _ => i,
    }
}

pub fn make_md(rule: impl Fn(&StateId) -> usize + Send + Sync + 'static) -> Strategy {
    Strategy {
        class: StrategyClass::Md,
        initial_mode: 0,
        act: Arc::new(move |_, _, _, s| point(rule(s))),
        update: None,
        label: "md".into(),
    }
}

pub fn make_markov(rule: impl Fn(&StateId, u64) -> usize + Send + Sync + 'static) -> Strategy {
    Strategy {
        class: StrategyClass::Markov,
        initial_mode: 0,
        act: Arc::new(move |_, step, _, s| point(rule(s, step))),
        update: None,
        label: "markov".into(),
    }
}

pub fn make_reward_counter(rule: impl Fn(&StateId, &Rational) -> usize + Send + Sync + 'static) -> Strategy {
    Strategy {
        class: StrategyClass::RewardCounter,
        initial_mode: 0,
        act: Arc::new(move |_, _, total, s| point(rule(s, total))),
        update: None,
        label: "rc".into(),
    }
}

pub fn make_sc_rc(rule: impl Fn(&StateId, u64, &Rational) -> usize + Send + Sync + 'static) -> Strategy {
    Strategy {
        class: StrategyClass::StepReward,
        initial_mode: 0,
        act: Arc::new(move |_, step, total, s| point(rule(s, step, total))),
        update: None,
        label: "sc+rc".into(),
    }
}

/// Finite-memory machine with `modes` modes; both the action and the update may be randomised.
#[derive(Clone)]
pub struct FrMachine {
    pub modes: u32,
    pub initial: u32,
    pub act: Arc<dyn Fn(u32, &StateId) -> Dist<usize> + Send + Sync>,
    pub update: Arc<dyn Fn(u32, &StateId, usize, &StateId) -> Dist<u32> + Send + Sync>,
}

impl FrMachine {
    pub fn new(
        modes: u32,
        initial: u32,
        act: impl Fn(u32, &StateId) -> Dist<usize> + Send + Sync + 'static,
        update: impl Fn(u32, &StateId, usize, &StateId) -> Dist<u32> + Send + Sync + 'static,
    ) -> Self {
        FrMachine { modes, initial, act: Arc::new(act), update: Arc::new(update) }
    }
}

pub fn make_fr(machine: FrMachine) -> Result<Strategy, StrategyError> {
    if machine.modes == 0 || machine.initial >= machine.modes {
        return Err(StrategyError::MemoryOutOfRange { mode: machine.initial as u64, modes: machine.modes as u64 });
    }
    let FrMachine { modes, initial, act, update } = machine;
    Ok(Strategy {
        class: StrategyClass::Fr(modes),
        initial_mode: initial as u64,
        act: Arc::new(move |mode, _, _, s| act(mode as u32, s)),
        update: Some(Arc::new(move |mode, _, src, i, tgt| {
            update(mode as u32, src, i, tgt).into_iter().map(|(m, p)| (m as u64, p)).collect()
        })),
        label: "fr".into(),
    })
}

/// k bits of memory that may also read the step counter.
pub fn make_kbit_markov(
    bits: u32,
    initial: u64,
    act: impl Fn(u64, u64, &StateId) -> Dist<usize> + Send + Sync + 'static,
    update: impl Fn(u64, u64, &StateId, usize, &StateId) -> Dist<u64> + Send + Sync + 'static,
) -> Strategy {
    Strategy {
        class: StrategyClass::KBitMarkov(bits),
        initial_mode: initial,
        act: Arc::new(move |mode, step, _, s| act(mode, step, s)),
        update: Some(Arc::new(update)),
        label: "kbit".into(),
    }
}

/// History-dependent strategy given by an unbounded memory machine.
pub fn make_countable(
    initial: u64,
    act: impl Fn(u64, &StateId) -> Dist<usize> + Send + Sync + 'static,
    update: impl Fn(u64, &StateId, usize, &StateId) -> Dist<u64> + Send + Sync + 'static,
) -> Strategy {
    Strategy {
        class: StrategyClass::Hd,
        initial_mode: initial,
        act: Arc::new(move |mode, _, _, s| act(mode, s)),
        update: Some(Arc::new(move |mode, _, src, i, tgt| update(mode, src, i, tgt))),
        label: "hd".into(),
    }
}

/// Markov chain induced by a finite-memory strategy on a finite fragment of an MDP.
/// Nodes are (state, mode) pairs reachable from the start; targets outside the fragment become absorbing exits.
#[derive(Debug, Clone)]
pub struct InducedChain {
    pub nodes: Vec<(StateId, u64)>,
    pub rows: Vec<Vec<(usize, Rational)>>,
    pub exits: BTreeSet<usize>,
    index: BTreeMap<(StateId, u64), usize>,
}

impl InducedChain {
    pub fn node(&self, s: &StateId, mode: u64) -> Option<usize> {
        self.index.get(&(s.clone(), mode)).copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Distribution over exit nodes when started from `start`; the fragment must be acyclic apart from exits.
    pub fn absorption(&self, start: usize) -> BTreeMap<usize, Rational> {
        let mut order = Vec::new();
        let mut indeg = alloc::vec![0usize; self.nodes.len()];
        for (i, row) in self.rows.iter().enumerate() {
            if self.exits.contains(&i) {
                continue;
            }
            for (j, _) in row {
                indeg[*j] += 1;
            }
        }
        let mut queue: VecDeque<usize> = (0..self.nodes.len()).filter(|i| indeg[*i] == 0).collect();
        while let Some(i) = queue.pop_front() {
            order.push(i);
            if self.exits.contains(&i) {
                continue;
            }
            for (j, _) in &self.rows[i] {
                indeg[*j] -= 1;
                if indeg[*j] == 0 {
                    queue.push_back(*j);
                }
            }
        }
        let mut mass = alloc::vec![Rational::zero(); self.nodes.len()];
        mass[start] = Rational::one();
        let mut out = BTreeMap::new();
        for i in order {
            if mass[i].is_zero() {
                continue;
            }
            if self.exits.contains(&i) {
                out.insert(i, mass[i].clone());
                continue;
            }
            let m = mass[i].clone();
            for (j, p) in &self.rows[i] {
                mass[*j] += &m * p;
            }
        }
        out
    }
}

pub fn induced_chain<M: CountableMdp + ?Sized>(
    mdp: &M,
    fragment: &BTreeSet<StateId>,
    strategy: &Strategy,
    start: (StateId, u64),
) -> Result<InducedChain, StrategyError> {
    if strategy.class.reads_step() || strategy.class.reads_total() || strategy.class.modes().is_none() {
        return Err(StrategyError::ClassTooRich { class: strategy.class.to_string(), target: "an induced finite chain".into() });
    }
    let mut chain = InducedChain { nodes: Vec::new(), rows: Vec::new(), exits: BTreeSet::new(), index: BTreeMap::new() };
    let mut queue = VecDeque::new();
    let intern = |chain: &mut InducedChain, queue: &mut VecDeque<usize>, key: (StateId, u64)| -> usize {
        if let Some(i) = chain.index.get(&key) {
            return *i;
        }
        let i = chain.nodes.len();
        chain.index.insert(key.clone(), i);
        chain.nodes.push(key);
        chain.rows.push(Vec::new());
        queue.push_back(i);
        i
    };
    intern(&mut chain, &mut queue, start);
    while let Some(i) = queue.pop_front() {
        let (s, mode) = chain.nodes[i].clone();
        if !fragment.contains(&s) {
            chain.exits.insert(i);
            continue;
        }
        let mem = Memory { mode, step: 0, total: Rational::zero() };
        let edges = mdp.all_successors(&s)?;
        let choices: Dist<usize> = match mdp.kind(&s)? {
            StateKind::Controlled => strategy.act(mdp, &mem, &s)?,
            StateKind::Random => edges
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    let p = e.prob.as_ref().and_then(|p| p.exact()).ok_or_else(|| StrategyError::Inexact(s.to_string()))?;
                    Ok((k, p.clone()))
                })
                .collect::<Result<_, StrategyError>>()?,
        };
        let mut row: BTreeMap<usize, Rational> = BTreeMap::new();
        for (k, p) in choices {
            let e = &edges[k];
            for (next, q) in strategy.update(&mem, &s, k, &e.target, &e.reward)? {
                let j = intern(&mut chain, &mut queue, (e.target.clone(), next.mode));
                *row.entry(j).or_insert_with(Rational::zero) += &p * &q;
            }
        }
        chain.rows[i] = row.into_iter().collect();
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::FiniteMdp;
    use crate::numeric::{int, rat};

    #[test]
    fn class_names_round_trip() {
        for c in [
            StrategyClass::Md,
            StrategyClass::Fr(3),
            StrategyClass::Markov,
            StrategyClass::RewardCounter,
            StrategyClass::StepReward,
            StrategyClass::KBitMarkov(2),
            StrategyClass::Hd,
        ] {
            assert_eq!(c.to_string().parse::<StrategyClass>().unwrap(), c);
        }
    }

    #[test]
    fn fr_update_rejects_out_of_range_modes() {
        let m = FrMachine::new(2, 0, |_, _| point(0), |_, _, _, _| point(5));
        let s = make_fr(m).unwrap();
        let st = StateId::Plain(0);
        assert!(matches!(
            s.update(&s.initial_memory(), &st, 0, &st, &int(0)),
            Err(StrategyError::MemoryOutOfRange { mode: 5, modes: 2 })
        ));
    }

    #[test]
    fn act_refuses_random_states_and_clamps() {
        let mut mdp = FiniteMdp::new();
        let c = mdp.add_state(StateKind::Controlled);
        let r = mdp.add_state(StateKind::Random);
        mdp.add_edge(c, r, int(0), None);
        mdp.add_edge(c, c, int(0), None);
        mdp.add_edge(r, c, int(1), Some(int(1)));
        let s = make_md(|_| 7);
        assert_eq!(s.act(&mdp, &s.initial_memory(), &StateId::Plain(c)).unwrap(), point(1));
        assert!(matches!(s.act(&mdp, &s.initial_memory(), &StateId::Plain(r)), Err(StrategyError::NotControlled(_))));
    }

    #[test]
    fn induced_chain_of_two_mode_machine() {
        let mut mdp = FiniteMdp::new();
        let a = mdp.add_state(StateKind::Random);
        let b = mdp.add_state(StateKind::Controlled);
        let out0 = mdp.add_state(StateKind::Controlled);
        let out1 = mdp.add_state(StateKind::Controlled);
        mdp.add_edge(a, b, int(0), Some(rat(1, 3)));
        mdp.add_edge(a, b, int(1), Some(rat(2, 3)));
        mdp.add_edge(b, out0, int(0), None);
        mdp.add_edge(b, out1, int(0), None);
        mdp.add_edge(out0, out0, int(0), None);
        mdp.add_edge(out1, out1, int(0), None);
        // remember which edge left `a` and copy it at `b`
        let m = FrMachine::new(
            2,
            0,
            |mode, _| point(mode as usize),
            |mode, src, i, _| point(if *src == StateId::Plain(0) { i as u32 } else { mode }),
        );
        let s = make_fr(m).unwrap();
        let frag: BTreeSet<StateId> = [StateId::Plain(a), StateId::Plain(b)].into_iter().collect();
        let chain = induced_chain(&mdp, &frag, &s, (StateId::Plain(a), 0)).unwrap();
        assert!(chain.len() <= 2 * 4);
        let abs = chain.absorption(0);
        let p1 = abs[&chain.node(&StateId::Plain(out1), 1).unwrap()].clone();
        assert_eq!(p1, rat(2, 3));
        let total: Rational = abs.values().cloned().sum();
        assert_eq!(total, int(1));
    }
}
