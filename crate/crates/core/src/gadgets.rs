//! The gadget chains and the small standalone gadgets, with their canonical strategies.
//!
//! Step-implicit chains place every state at a fixed depth: block `n` starts at depth `D(n)` and the
//! skip column, corridors and restart paths are padded to match. Reward-implicit chains instead fix
//! the running total of every state.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::mdp::{CountableMdp, Degree, GadgetCoord, MdpError, OutEdge, Prob, Role, StateId, StateKind};
use crate::monitor::{Region, StructuralFacts};
use crate::numeric::{big, ceil_log2, int, rat, sum_probs, Interval, Rational};
use crate::schedule::{Schedule, ScheduleError};
use crate::strategy::{make_fr, make_markov, make_reward_counter, point, Dist, FrMachine, Strategy, StrategyError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GadgetError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("variant mismatch: {0}")]
    VariantMismatch(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    StepImplicit,
    RewardImplicit,
    Restart,
    RestartRewardImplicit,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::StepImplicit, Variant::RewardImplicit, Variant::Restart, Variant::RestartRewardImplicit];

    pub fn code(self) -> &'static str {
        match self {
            Variant::StepImplicit => "step-implicit",
            Variant::RewardImplicit => "reward-implicit",
            Variant::Restart => "restart",
            Variant::RestartRewardImplicit => "restart-reward-implicit",
        }
    }

    pub fn is_restart(self) -> bool {
        matches!(self, Variant::Restart | Variant::RestartRewardImplicit)
    }

    pub fn is_reward_implicit(self) -> bool {
        matches!(self, Variant::RewardImplicit | Variant::RestartRewardImplicit)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Variant {
    type Err = GadgetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.code() == s)
            .ok_or_else(|| GadgetError::Unsupported(format!("unknown chain variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Flags {
    pub binary: bool,
    pub rationalized: bool,
    pub bounded: bool,
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.binary {
            parts.push("binary");
        }
        if self.rationalized {
            parts.push("rationalized");
        }
        if self.bounded {
            parts.push("bounded");
        }
        if parts.is_empty() {
            f.write_str("plain")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainSpec {
    pub variant: Variant,
    pub flags: Flags,
    /// Number of blocks materialised from N*.
    pub blocks: u64,
}

impl ChainSpec {
    pub fn new(variant: Variant, blocks: u64) -> Self {
        ChainSpec { variant, flags: Flags::default(), blocks }
    }
}

#[derive(Debug, Clone)]
struct Block {
    k: u32,
    delta: Vec<Prob>,
    eps: Vec<Prob>,
    m: BigInt,
    /// m^0..m^k, reward-implicit only.
    mpow: Vec<BigInt>,
    /// Height of the random and controlled fans (1 unless binary).
    h: u32,
    /// Edges from a_i to c_n.
    up: u64,
    /// Edges of the reward-bearing part after b_j.
    down: u64,
    /// Edges from w(e,n,0) into s_n.
    corridor: u64,
    /// Zero edges appended after the down segment.
    pad: u64,
    /// Depth of s_n (step-implicit) or the largest depth of s_n (reward-implicit).
    depth: u64,
    penalty: BigInt,
}

impl Block {
    fn len(&self) -> u64 {
        2 * self.h as u64 + self.up + self.down + self.pad
    }

    /// Edges of reward-implicit branch i from s_n to c_n.
    fn ri_path(&self, n: u64, i: u32) -> u64 {
        self.h as u64 - 1 + ri_len(n, &self.mpow[i as usize])
    }
}

fn ri_len(n: u64, mi: &BigInt) -> u64 {
    (BigInt::from(n) * mi).to_u64().unwrap_or(u64::MAX)
}

/// A chain of gadgets with its schedule, construction flags and block table.
#[derive(Debug, Clone)]
pub struct GadgetChain {
    schedule: Schedule,
    spec: ChainSpec,
    n_star: u64,
    table: Arc<Vec<Block>>,
}

fn bot() -> StateId {
    StateId::gadget(0, Role::Bot, 0, 0)
}

fn g(n: u64, role: Role, branch: u64, offset: u64, row: u32) -> StateId {
    StateId::Gadget(GadgetCoord::new(n, role, branch, offset).in_row(row))
}

fn prob_div(a: &Prob, b: &Prob) -> Prob {
    match (a, b) {
        (Prob::Exact(x), Prob::Exact(y)) => Prob::Exact(x / y),
        _ => Prob::Approx((a.interval() / b.interval()).clamp_unit()),
    }
}

fn unbounded(what: &str, n: u64) -> GadgetError {
    GadgetError::Unsupported(format!("{what} at block {n} exceeds 64-bit path lengths"))
}

impl GadgetChain {
    pub fn build(schedule: &Schedule, spec: ChainSpec) -> Result<Self, GadgetError> {
        let schedule = if spec.flags.rationalized {
            if !schedule.is_faithful() && schedule.is_exact() {
                schedule.clone()
            } else {
                schedule.rationalized()
            }
        } else {
            schedule.clone()
        };
        if spec.blocks == 0 {
            return Err(GadgetError::Unsupported("a chain needs at least one block".into()));
        }
        if spec.flags.bounded && spec.variant != Variant::StepImplicit {
            return Err(GadgetError::Unsupported(format!("bounded rewards on a {} chain", spec.variant)));
        }
        let n_star = schedule.n_star();
        let count = spec.blocks + 3;
        let last = n_star + count - 1;
        let ms = schedule.m_table(last);
        let mut table: Vec<Block> = Vec::with_capacity(count as usize);
        for (idx, n) in (n_star..=last).enumerate() {
            let k = schedule.k(n);
            let delta = schedule.deltas(n)?;
            let eps = schedule.epsilons(n)?;
            if spec.flags.rationalized && !(delta.iter().chain(&eps)).all(|p| p.exact().is_some()) {
                return Err(GadgetError::Unsupported(format!("inexact probabilities at block {n}")));
            }
            let m = ms[idx].clone();
            let h = if spec.flags.binary { ceil_log2(k as u64 + 1) } else { 1 };
            let ri = spec.variant.is_reward_implicit();
            let mpow = if ri { (0..=k).map(|i| num_traits::pow(m.clone(), i as usize)).collect() } else { Vec::new() };
            let (up, down) = if spec.flags.bounded {
                let km = (BigInt::from(k) * &m).to_u64().ok_or_else(|| unbounded("k·m", n))?;
                (km, km)
            } else if ri {
                (0, 1)
            } else {
                (1, 1)
            };
            let corridor = if spec.flags.bounded { n - n_star + 1 } else { 1 };
            let pad = if spec.flags.bounded { corridor } else { 0 };
            table.push(Block { k, delta, eps, m, mpow, h, up, down, corridor, pad, depth: 0, penalty: BigInt::zero() });
        }
        // depths
        table[0].depth = table[0].corridor;
        for i in 1..table.len() {
            let prev = &table[i - 1];
            let n = n_star + i as u64 - 1;
            let add = if spec.variant.is_reward_implicit() {
                let longest = prev.ri_path(n, prev.k);
                if longest == u64::MAX {
                    return Err(unbounded("branch path", n));
                }
                longest + prev.h as u64 + 1
            } else {
                prev.len()
            };
            table[i].depth = prev.depth.checked_add(add).ok_or_else(|| unbounded("depth", n))?;
        }
        // restart penalties
        if spec.variant.is_restart() {
            for i in 0..table.len().saturating_sub(2) {
                table[i].penalty = if spec.variant == Variant::Restart {
                    &table[i + 2].m + BigInt::from(table[i + 1].depth)
                } else {
                    BigInt::from(table[i + 1].depth) + BigInt::one()
                };
            }
        }
        Ok(GadgetChain { schedule, spec, n_star, table: Arc::new(table) })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn flags(&self) -> Flags {
        self.spec.flags
    }

    pub fn n_star(&self) -> u64 {
        self.n_star
    }

    /// Last block whose exit is materialised.
    pub fn last_block(&self) -> u64 {
        self.n_star + self.spec.blocks - 1
    }

    fn block(&self, n: u64) -> Result<&Block, MdpError> {
        if n < self.n_star {
            return Err(MdpError::Invalid(format!("block {n} precedes N* = {}", self.n_star)));
        }
        self.table
            .get((n - self.n_star) as usize)
            .ok_or_else(|| MdpError::Invalid(format!("block {n} lies beyond the materialised chain")))
    }

    pub fn k(&self, n: u64) -> Result<u32, MdpError> {
        Ok(self.block(n)?.k)
    }

    pub fn m(&self, n: u64) -> Result<BigInt, MdpError> {
        Ok(self.block(n)?.m.clone())
    }

    pub fn deltas(&self, n: u64) -> Result<Vec<Prob>, MdpError> {
        Ok(self.block(n)?.delta.clone())
    }

    pub fn epsilons(&self, n: u64) -> Result<Vec<Prob>, MdpError> {
        Ok(self.block(n)?.eps.clone())
    }

    pub fn penalty(&self, n: u64) -> Result<BigInt, MdpError> {
        Ok(self.block(n)?.penalty.clone())
    }

    /// Height of the random and controlled fans in block n.
    pub fn fan_height(&self, n: u64) -> Result<u32, MdpError> {
        Ok(self.block(n)?.h)
    }

    /// Steps from s_n to s_{n+1} (step-implicit chains).
    pub fn block_len(&self, n: u64) -> Result<u64, MdpError> {
        Ok(self.block(n)?.len())
    }

    pub fn s(&self, n: u64) -> StateId {
        StateId::gadget(n, Role::S, 0, 0)
    }

    pub fn c(&self, n: u64) -> StateId {
        StateId::gadget(n, Role::C, 0, 0)
    }

    pub fn bottom(&self) -> StateId {
        bot()
    }

    /// Declared ⊥ region and, for documentation, the skip column.
    pub fn facts(&self) -> StructuralFacts {
        if self.spec.variant.is_restart() {
            StructuralFacts::default()
        } else {
            StructuralFacts::losing_role(Role::Bot)
        }
    }

    pub fn skip_region(&self) -> Region {
        Region::Role(Role::W)
    }

    /// Block index at which a run stands at a block boundary: s_n and the skip-column heads w(e,n,0).
    pub fn boundary(&self, s: &StateId) -> Option<u64> {
        let c = s.coord()?;
        match c.role {
            Role::S => Some(c.n),
            Role::W if c.offset == 0 => Some(c.n),
            _ => None,
        }
    }

    /// The depth every generating path to `s` has, for step-implicit variants.
    pub fn declared_depth(&self, s: &StateId) -> Option<u64> {
        if self.spec.variant.is_reward_implicit() {
            return None;
        }
        let c = s.coord()?;
        let b = self.block(c.n).ok()?;
        let tree = b.h as u64;
        Some(match c.role {
            Role::W | Role::Ent => b.depth - b.corridor + c.offset,
            Role::S => b.depth,
            Role::Tr => b.depth + c.offset,
            Role::A => b.depth + tree,
            Role::Up => b.depth + tree + c.offset,
            Role::C => b.depth + tree + b.up,
            Role::Tc => b.depth + tree + b.up + c.offset,
            Role::B => b.depth + 2 * tree + b.up,
            Role::Dn => b.depth + 2 * tree + b.up + c.offset,
            Role::Rst => b.depth + 2 * tree + b.up + 1 + c.offset,
            _ => return None,
        })
    }

    /// Total every path to `s` carries, for reward-implicit variants outside ⊥ and the restart paths.
    pub fn declared_total(&self, s: &StateId) -> Option<Rational> {
        if !self.spec.variant.is_reward_implicit() {
            return None;
        }
        let c = s.coord()?;
        let b = self.block(c.n).ok()?;
        Some(match c.role {
            Role::W => -Rational::from_integer(BigInt::from(c.n - c.branch)),
            Role::S | Role::Tr | Role::A | Role::C | Role::Tc => Rational::zero(),
            Role::Q => -Rational::from_integer(b.mpow[c.branch as usize].clone()),
            _ => return None,
        })
    }

    /// Largest depth at which s_n can be reached (reward-implicit variants).
    pub fn max_depth(&self, n: u64) -> Result<u64, MdpError> {
        Ok(self.block(n)?.depth)
    }

    /// Smallest depth at which s_n can be reached without restarts: skip straight to it.
    pub fn min_depth(&self, n: u64) -> u64 {
        n - self.n_star + 1
    }

    /// Edges from s_n to c_n on branch i (reward-implicit variants).
    pub fn ri_path(&self, n: u64, i: u32) -> Result<u64, MdpError> {
        let b = self.block(n)?;
        if !self.spec.variant.is_reward_implicit() {
            return Ok(b.h as u64 + b.up);
        }
        Ok(b.ri_path(n, i))
    }

    fn tree_range(h: u32, level: u32, lo: u64, k: u32) -> (u64, u64) {
        let span = 1u64 << (h - level);
        (lo, (lo + span).min(k as u64 + 1))
    }

    fn mass(b: &Block, lo: u64, hi: u64) -> Prob {
        sum_probs(b.delta[lo as usize..hi as usize].iter())
    }

    /// Children of a fan node at `level` covering branches from `lo`: (child lo, child is leaf).
    fn fan_children(b: &Block, level: u32, lo: u64) -> Vec<(u64, u64)> {
        if b.h == 1 && level == 0 {
            return (0..=b.k as u64).map(|i| (i, i + 1)).collect();
        }
        let (_, hi) = Self::tree_range(b.h, level, lo, b.k);
        let half = 1u64 << (b.h - level - 1);
        let mut out = vec![(lo, (lo + half).min(hi))];
        if lo + half < hi {
            out.push((lo + half, hi));
        }
        out
    }

    fn random_fan(&self, n: u64, b: &Block, level: u32, lo: u64, row: u32) -> Vec<OutEdge> {
        let (plo, phi) = Self::tree_range(b.h, level, lo, b.k);
        let parent = Self::mass(b, plo, phi);
        Self::fan_children(b, level, lo)
            .into_iter()
            .map(|(clo, chi)| {
                let p = if level == 0 && b.h == 1 { b.delta[clo as usize].clone() } else { prob_div(&Self::mass(b, clo, chi), &parent) };
                let target = if level + 1 == b.h { g(n, Role::A, clo, 0, row) } else { g(n, Role::Tr, clo, level as u64 + 1, row) };
                OutEdge::random(target, Rational::zero(), p)
            })
            .collect()
    }

    fn control_fan(&self, n: u64, b: &Block, level: u32, lo: u64, row: u32) -> Vec<OutEdge> {
        let ri = self.spec.variant.is_reward_implicit();
        Self::fan_children(b, level, lo)
            .into_iter()
            .map(|(clo, _)| {
                if level + 1 == b.h {
                    if ri {
                        OutEdge::choice(g(n, Role::Q, clo, 0, row), -Rational::from_integer(b.mpow[clo as usize].clone()))
                    } else {
                        OutEdge::choice(g(n, Role::B, clo, 0, row), Rational::zero())
                    }
                } else {
                    OutEdge::choice(g(n, Role::Tc, clo, level as u64 + 1, row), Rational::zero())
                }
            })
            .collect()
    }

    fn escape_target(&self, n: u64, row: u32) -> StateId {
        if self.spec.variant.is_restart() {
            g(n, Role::Rst, 0, 0, row)
        } else {
            bot()
        }
    }

    /// Edges out of the restart path that starts after block n of `row`.
    fn restart_edges(&self, n: u64, offset: u64, row: u32) -> Result<Vec<OutEdge>, MdpError> {
        let b = self.block(n)?;
        let target = g(n + 2, Role::W, n + 2, 0, row + 1);
        let len = if self.spec.variant.is_reward_implicit() {
            2
        } else {
            let t = self.block(n + 2)?;
            let from = b.depth + 2 * b.h as u64 + b.up;
            t.depth - t.corridor - from
        };
        if len < 2 {
            return Err(MdpError::Invalid(format!("restart path after block {n} is too short")));
        }
        let edge = if offset + 2 < len {
            OutEdge::random(g(n, Role::Rst, 0, offset + 1, row), Rational::zero(), Prob::one())
        } else {
            OutEdge::random(target, Rational::from_integer(b.penalty.clone()), Prob::one())
        };
        Ok(vec![edge])
    }

    fn edges(&self, s: &StateId) -> Result<(StateKind, Vec<OutEdge>), MdpError> {
        let c = s.coord().ok_or_else(|| MdpError::unknown(s))?;
        if !matches!(s, StateId::Gadget(_)) {
            return Err(MdpError::unknown(s));
        }
        let (n, row) = (c.n, c.row);
        let one = || Prob::one();
        let ri = self.spec.variant.is_reward_implicit();
        if c.role == Role::Bot {
            return Ok((StateKind::Random, vec![OutEdge::random(bot(), int(-1), one())]));
        }
        if row > 0 && !self.spec.variant.is_restart() {
            return Err(MdpError::unknown(s));
        }
        let b = self.block(n)?;
        let k = b.k as u64;
        let tree = b.h as u64;
        match c.role {
            Role::W => {
                let e = c.branch;
                if e > n || e < self.n_star {
                    return Err(MdpError::unknown(s));
                }
                let skip_len = if ri { 1 } else { b.len() + b.corridor - self.block(n + 1)?.corridor };
                let next_w = |o: u64| if o < skip_len { g(n, Role::W, e, o, row) } else { g(n + 1, Role::W, e, 0, row) };
                if c.offset == 0 {
                    let reimburse = n - e;
                    let enter = if b.corridor == 1 {
                        OutEdge::choice(self.s(n).with_row(row), big(reimburse))
                    } else {
                        OutEdge::choice(g(n, Role::Ent, e, 1, row), if reimburse > 0 { int(1) } else { int(0) })
                    };
                    Ok((StateKind::Controlled, vec![enter, OutEdge::choice(next_w(1), int(-1))]))
                } else if c.offset < skip_len {
                    Ok((StateKind::Random, vec![OutEdge::random(next_w(c.offset + 1), Rational::zero(), one())]))
                } else {
                    Err(MdpError::unknown(s))
                }
            }
            Role::Ent => {
                let e = c.branch;
                if c.offset == 0 || c.offset >= b.corridor || e > n {
                    return Err(MdpError::unknown(s));
                }
                let target = if c.offset + 1 < b.corridor { g(n, Role::Ent, e, c.offset + 1, row) } else { self.s(n).with_row(row) };
                let r = if c.offset < n - e { int(1) } else { int(0) };
                Ok((StateKind::Random, vec![OutEdge::random(target, r, one())]))
            }
            Role::S => Ok((StateKind::Random, self.random_fan(n, b, 0, 0, row))),
            Role::Tr => {
                if c.offset == 0 || c.offset >= tree || c.branch > k {
                    return Err(MdpError::unknown(s));
                }
                Ok((StateKind::Random, self.random_fan(n, b, c.offset as u32, c.branch, row)))
            }
            Role::A | Role::Up => {
                let i = c.branch;
                if i > k || (c.role == Role::Up && c.offset == 0) {
                    return Err(MdpError::unknown(s));
                }
                let o = c.offset;
                if ri {
                    let len = b.ri_path(n, i as u32) - (tree - 1);
                    if c.role != Role::A || o + 1 > len {
                        return Err(MdpError::unknown(s));
                    }
                    let target = if o + 1 < len { g(n, Role::A, i, o + 1, row) } else { self.c(n).with_row(row) };
                    return Ok((StateKind::Random, vec![OutEdge::random(target, Rational::zero(), one())]));
                }
                if (c.role == Role::A && o != 0) || o >= b.up {
                    return Err(MdpError::unknown(s));
                }
                let reward = if self.spec.flags.bounded {
                    if BigInt::from(o) < BigInt::from(i) * &b.m { int(1) } else { int(0) }
                } else {
                    Rational::from_integer(BigInt::from(i) * &b.m)
                };
                let target = if o + 1 < b.up { g(n, Role::Up, i, o + 1, row) } else { self.c(n).with_row(row) };
                Ok((StateKind::Random, vec![OutEdge::random(target, reward, one())]))
            }
            Role::C => Ok((StateKind::Controlled, self.control_fan(n, b, 0, 0, row))),
            Role::Tc => {
                if c.offset == 0 || c.offset >= tree || c.branch > k {
                    return Err(MdpError::unknown(s));
                }
                Ok((StateKind::Controlled, self.control_fan(n, b, c.offset as u32, c.branch, row)))
            }
            Role::B => {
                let j = c.branch;
                if ri || j > k || c.offset != 0 {
                    return Err(MdpError::unknown(s));
                }
                let total = b.down + b.pad;
                let target = if total == 1 { self.s(n + 1).with_row(row) } else { g(n, Role::Dn, j, 1, row) };
                let reward = if self.spec.flags.bounded {
                    if j > 0 && !b.m.is_zero() { int(-1) } else { int(0) }
                } else {
                    -Rational::from_integer(BigInt::from(j) * &b.m)
                };
                let eps = &b.eps[j as usize];
                let mut out = vec![OutEdge::random(target, reward, eps.one_minus())];
                if eps.is_positive() {
                    let r = if self.spec.variant.is_restart() { -Rational::from_integer(b.penalty.clone()) } else { Rational::zero() };
                    out.push(OutEdge::random(self.escape_target(n, row), r, eps.clone()));
                }
                Ok((StateKind::Random, out))
            }
            Role::Dn => {
                let j = c.branch;
                let total = b.down + b.pad;
                if ri || j > k || c.offset == 0 || c.offset >= total {
                    return Err(MdpError::unknown(s));
                }
                let o = c.offset;
                let reward = if self.spec.flags.bounded && o < b.down && BigInt::from(o) < BigInt::from(j) * &b.m {
                    int(-1)
                } else {
                    int(0)
                };
                let target = if o + 1 < total { g(n, Role::Dn, j, o + 1, row) } else { self.s(n + 1).with_row(row) };
                Ok((StateKind::Random, vec![OutEdge::random(target, reward, one())]))
            }
            Role::Q => {
                let j = c.branch;
                if !ri || j > k || c.offset != 0 {
                    return Err(MdpError::unknown(s));
                }
                let back = Rational::from_integer(b.mpow[j as usize].clone());
                let eps = &b.eps[j as usize];
                let mut out = vec![OutEdge::random(self.s(n + 1).with_row(row), back.clone(), eps.one_minus())];
                if eps.is_positive() {
                    let r = if self.spec.variant.is_restart() { &back - Rational::from_integer(b.penalty.clone()) } else { back };
                    out.push(OutEdge::random(self.escape_target(n, row), r, eps.clone()));
                }
                Ok((StateKind::Random, out))
            }
            Role::Rst if self.spec.variant.is_restart() && c.branch == 0 => {
                Ok((StateKind::Random, self.restart_edges(n, c.offset, row)?))
            }
            _ => Err(MdpError::unknown(s)),
        }
    }

    /// Mean-payoff dip at q(n,j) after random branch i, along the shortest and longest histories.
    pub fn ri_dip(&self, n: u64, i: u32, j: u32) -> Result<(Rational, Rational), MdpError> {
        let b = self.block(n)?;
        if !self.spec.variant.is_reward_implicit() {
            return Err(MdpError::Invalid("dip analysis needs a reward-implicit chain".into()));
        }
        let path = b.ri_path(n, i) + b.h as u64;
        let total = -Rational::from_integer(b.mpow[j as usize].clone());
        let short = big(self.min_depth(n) + path);
        let long = big(b.depth + path);
        Ok((&total / short, &total / long))
    }
}

trait WithRow {
    fn with_row(self, row: u32) -> StateId;
}

impl WithRow for StateId {
    fn with_row(self, row: u32) -> StateId {
        match self {
            StateId::Gadget(c) => StateId::Gadget(c.in_row(row)),
            other => other,
        }
    }
}

impl CountableMdp for GadgetChain {
    fn initial(&self) -> StateId {
        StateId::gadget(self.n_star, Role::W, self.n_star, 0)
    }

    fn kind(&self, s: &StateId) -> Result<StateKind, MdpError> {
        let c = s.coord().ok_or_else(|| MdpError::unknown(s))?;
        Ok(match c.role {
            Role::C | Role::Tc => StateKind::Controlled,
            Role::W if c.offset == 0 => StateKind::Controlled,
            _ => self.edges(s)?.0,
        })
    }

    fn degree(&self, s: &StateId) -> Result<Degree, MdpError> {
        Ok(Degree::Finite(self.edges(s)?.1.len()))
    }

    fn successors(&self, s: &StateId, limit: usize) -> Result<Vec<OutEdge>, MdpError> {
        let mut e = self.edges(s)?.1;
        e.truncate(limit);
        Ok(e)
    }
}

/// Bad event on a transition of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChainEvent {
    Sink,
    Restart,
    /// Controlled choice above the random branch: the mean drops.
    Dip,
}

impl ChainEvent {
    pub fn code(self) -> &'static str {
        match self {
            ChainEvent::Sink => "sink",
            ChainEvent::Restart => "restart",
            ChainEvent::Dip => "dip",
        }
    }
}

impl GadgetChain {
    /// Updates the remembered random branch and reports a bad event on entering `tgt`.
    pub fn observe(&self, src: &StateId, tgt: &StateId, tag: &mut u64) -> Option<ChainEvent> {
        let c = tgt.coord()?;
        match c.role {
            Role::A if c.offset == 0 => {
                *tag = c.branch;
                None
            }
            Role::B | Role::Q if c.branch > *tag => Some(ChainEvent::Dip),
            Role::Bot if src.role() != Some(Role::Bot) => Some(ChainEvent::Sink),
            Role::Rst if c.offset == 0 => Some(ChainEvent::Restart),
            _ => None,
        }
    }
}

/// Picks a leaf index at a fan node: the child whose range contains `target`.
fn navigate(chain: &GadgetChain, s: &StateId, target: u64) -> usize {
    let Some(c) = s.coord() else { return 0 };
    let Ok(b) = chain.block(c.n) else { return 0 };
    let target = target.min(b.k as u64);
    match c.role {
        Role::C if b.h == 1 => target as usize,
        Role::C | Role::Tc => {
            let level = if c.role == Role::C { 0 } else { c.offset as u32 };
            let lo = if c.role == Role::C { 0 } else { c.branch };
            let half = 1u64 << (b.h - level - 1);
            usize::from(target >= lo + half)
        }
        _ => 0,
    }
}

fn max_modes(chain: &GadgetChain) -> u32 {
    chain.table.iter().map(|b| b.k).max().unwrap_or(1) + 1
}

/// Mimic as a finite-memory machine: remember the random branch, replay it at the controlled fan.
/// `enter_from` is the first block the skip column enters.
fn mimic_machine(chain: &GadgetChain, enter_from: u64) -> FrMachine {
    let modes = max_modes(chain);
    let ch = chain.clone();
    FrMachine::new(
        modes,
        0,
        move |mode, s| match s.role() {
            Some(Role::W) => point(usize::from(s.coord().is_some_and(|c| c.n < enter_from))),
            _ => point(navigate(&ch, s, mode as u64)),
        },
        move |mode, _, _, tgt| match tgt.coord() {
            Some(c) if c.role == Role::A && c.offset == 0 => point(c.branch as u32),
            _ => point(mode),
        },
    )
}

/// A finite-memory machine for chains given by two tables: the mode adopted on observing random
/// branch i (`observe[min(i, len-1)]`) and the branch distribution played in each mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchMachine {
    pub modes: u32,
    pub initial: u32,
    /// First block the skip column enters.
    pub enter_from: u64,
    pub observe: Vec<Dist<u32>>,
    pub act: Vec<Dist<u64>>,
}

impl BranchMachine {
    pub fn validate(&self) -> Result<(), GadgetError> {
        let bad = |m: String| Err(GadgetError::Unsupported(m));
        if self.modes == 0 || self.initial >= self.modes {
            return bad(format!("initial mode {} outside {} modes", self.initial, self.modes));
        }
        if self.observe.is_empty() || self.act.len() != self.modes as usize {
            return bad(format!("need at least one observation row and exactly {} action rows", self.modes));
        }
        for d in &self.observe {
            if d.iter().any(|(m, _)| *m >= self.modes) {
                return bad("observation targets a mode out of range".into());
            }
        }
        for d in self.observe.iter().map(|d| d.iter().map(|x| &x.1).collect::<Vec<_>>()).chain(
            self.act.iter().map(|d| d.iter().map(|x| &x.1).collect::<Vec<_>>()),
        ) {
            let total: Rational = d.iter().map(|p| (*p).clone()).sum();
            if total != Rational::one() || d.iter().any(|p| p.is_negative()) {
                return bad("a distribution does not sum to 1".into());
            }
        }
        Ok(())
    }

    pub fn strategy(&self, chain: &GadgetChain) -> Result<Strategy, GadgetError> {
        self.validate()?;
        let (ch, act, observe, from) = (chain.clone(), self.act.clone(), self.observe.clone(), self.enter_from);
        let machine = FrMachine::new(
            self.modes,
            self.initial,
            move |mode, s| match s.role() {
                Some(Role::W) => point(usize::from(s.coord().is_some_and(|c| c.n < from))),
                Some(Role::C) | Some(Role::Tc) => fan_choice(&ch, s, &act[mode as usize]),
                _ => point(0),
            },
            move |mode, _, _, tgt| match tgt.coord() {
                Some(c) if c.role == Role::A && c.offset == 0 => observe[(c.branch as usize).min(observe.len() - 1)].clone(),
                _ => point(mode),
            },
        );
        Ok(make_fr(machine)?.with_label(format!("fr({})", self.modes)))
    }
}

/// Splits a branch distribution over the children of a fan node, conditioned on the node's range.
fn fan_choice(chain: &GadgetChain, s: &StateId, dist: &Dist<u64>) -> Dist<usize> {
    let Some(c) = s.coord() else { return point(0) };
    let Ok(b) = chain.block(c.n) else { return point(0) };
    let k = b.k as u64;
    let level = if c.role == Role::C { 0 } else { c.offset as u32 };
    let lo = if c.role == Role::C { 0 } else { c.branch };
    let children = GadgetChain::fan_children(b, level, lo);
    let weight = |a: u64, z: u64| -> Rational { dist.iter().filter(|(j, _)| (a..z).contains(&(*j).min(k))).map(|x| x.1.clone()).sum() };
    let (plo, phi) = if level == 0 && b.h == 1 { (0, k + 1) } else { GadgetChain::tree_range(b.h, level, lo, b.k) };
    let total = weight(plo, phi);
    if total.is_zero() {
        return point(0);
    }
    let out: Dist<usize> = children
        .iter()
        .enumerate()
        .map(|(idx, (a, z))| (idx, weight(*a, *z) / &total))
        .filter(|(_, p)| !p.is_zero())
        .collect();
    if out.is_empty() {
        point(0)
    } else {
        out
    }
}

/// Mimic realised with finite memory; equal to the counter-based mimic on every history.
pub fn mimic_fr(chain: &GadgetChain) -> Result<Strategy, GadgetError> {
    Ok(make_fr(mimic_machine(chain, 0))?.with_label("mimic-fr"))
}

/// The canonical mimic: a reward counter on step-implicit chains, a step counter on reward-implicit ones.
pub fn mimic(chain: &GadgetChain) -> Result<Strategy, GadgetError> {
    let ch = chain.clone();
    match chain.variant() {
        Variant::StepImplicit | Variant::Restart => Ok(make_reward_counter(move |s, total| match s.role() {
            Some(Role::C) | Some(Role::Tc) => {
                let n = s.coord().map_or(0, |c| c.n);
                let m = ch.m(n).unwrap_or_else(|_| BigInt::one());
                // branch i is the nearest multiple of m_n; earlier blocks contribute less than m_n / 2
                let q = (total / Rational::from_integer(m)).round().to_integer();
                let i = if q.is_negative() { 0 } else { q.to_u64().unwrap_or(u64::MAX) };
                navigate(&ch, s, i)
            }
            _ => 0,
        })
        .with_label("mimic-rc")),
        Variant::RewardImplicit => Ok(make_markov(move |s, step| match s.role() {
            Some(Role::C) | Some(Role::Tc) => {
                let c = s.coord().expect("gadget state");
                let (n, level) = (c.n, if c.role == Role::C { 0 } else { c.offset });
                let k = ch.k(n).unwrap_or(0);
                let lowest = ch.min_depth(n);
                // largest branch whose path still fits after the shortest history
                let i = (0..=k)
                    .rev()
                    .find(|&i| ch.ri_path(n, i).is_ok_and(|p| step >= p + level && step - p - level >= lowest))
                    .unwrap_or(0);
                navigate(&ch, s, i as u64)
            }
            _ => 0,
        })
        .with_label("mimic-sc")),
        Variant::RestartRewardImplicit => Err(GadgetError::VariantMismatch(
            "the step-counter mimic is defined on reward-implicit chains without restarts".into(),
        )),
    }
}

/// Skip to block N_ε (an absolute index), then mimic. Returns the strategy and N_ε.
pub fn skip_then_mimic(chain: &GadgetChain, eps: f64) -> Result<(Strategy, u64), GadgetError> {
    let n_eps = chain.schedule().skip_index(eps)?;
    let s = make_fr(mimic_machine(chain, n_eps))?.with_label(format!("skip-then-mimic({eps})"));
    Ok((s, n_eps))
}

/// skip_then_mimic(1/2) played anew in every restart row.
pub fn concat_half(chain: &GadgetChain) -> Result<(Strategy, u64), GadgetError> {
    if !chain.variant().is_restart() {
        return Err(GadgetError::VariantMismatch("concat_half needs a restart chain".into()));
    }
    let (s, n) = skip_then_mimic(chain, 0.5)?;
    Ok((s.with_label("concat-half"), n))
}

/// Exact §6-style step bound β_n for an error i -> i+1 in block n of a reward-implicit chain, and
/// whether β_n <= 2 m_n^{i+1}.
pub fn padded_dip_check(schedule: &Schedule, n: u64) -> Result<Vec<(u32, BigInt, BigInt, bool)>, GadgetError> {
    let ms = schedule.m_table(n);
    let n_star = schedule.n_star();
    let lg = |l: u64| BigInt::from(2 * ceil_log2(schedule.k(l) as u64 + 1));
    let mut prefix = BigInt::zero();
    for l in n_star..n {
        prefix += lg(l) + BigInt::from(2) * num_traits::pow(ms[(l - n_star) as usize].clone(), schedule.k(l) as usize);
    }
    let m = ms[(n - n_star) as usize].clone();
    let k = schedule.k(n);
    let mut out = Vec::new();
    for i in 0..k {
        let beta = &prefix + lg(n) + num_traits::pow(m.clone(), i as usize) + num_traits::pow(m.clone(), i as usize + 1);
        let bound = BigInt::from(2) * num_traits::pow(m.clone(), i as usize + 1);
        let ok = beta <= bound;
        out.push((i, beta, bound, ok));
    }
    Ok(out)
}

/// Controlled hub s with infinitely many choices i >= 1 leading to r_i; r_i falls to t with probability 2^-i.
#[derive(Debug, Clone, Copy, Default)]
pub struct InfiniteBranching;

impl InfiniteBranching {
    pub fn hub() -> StateId {
        StateId::gadget(0, Role::S, 0, 0)
    }

    pub fn r(i: u64) -> StateId {
        StateId::gadget(0, Role::R, i, 0)
    }

    pub fn t() -> StateId {
        StateId::gadget(0, Role::T, 0, 0)
    }

    /// Edge index at the hub for branch i.
    pub fn index_of(i: u64) -> usize {
        (i - 1) as usize
    }
}

fn half_pow(i: u64) -> Rational {
    Rational::new(BigInt::one(), BigInt::one() << i as usize)
}

impl CountableMdp for InfiniteBranching {
    fn initial(&self) -> StateId {
        Self::hub()
    }

    fn kind(&self, s: &StateId) -> Result<StateKind, MdpError> {
        match s.role() {
            Some(Role::S) => Ok(StateKind::Controlled),
            Some(Role::R) | Some(Role::T) => Ok(StateKind::Random),
            _ => Err(MdpError::unknown(s)),
        }
    }

    fn degree(&self, s: &StateId) -> Result<Degree, MdpError> {
        match s.role() {
            Some(Role::S) => Ok(Degree::Infinite),
            Some(Role::R) => Ok(Degree::Finite(2)),
            Some(Role::T) => Ok(Degree::Finite(1)),
            _ => Err(MdpError::unknown(s)),
        }
    }

    fn successors(&self, s: &StateId, limit: usize) -> Result<Vec<OutEdge>, MdpError> {
        let c = s.coord().ok_or_else(|| MdpError::unknown(s))?;
        let mut out = match c.role {
            Role::S => (1..=limit as u64).map(|i| OutEdge::choice(Self::r(i), Rational::zero())).collect(),
            Role::R if c.branch >= 1 => {
                let p = half_pow(c.branch);
                vec![
                    OutEdge::random(Self::t(), int(-1), Prob::Exact(p.clone())),
                    OutEdge::random(Self::hub(), Rational::zero(), Prob::Exact(Rational::one() - p)),
                ]
            }
            Role::T => vec![OutEdge::random(Self::hub(), int(1), Prob::one())],
            _ => return Err(MdpError::unknown(s)),
        };
        out.truncate(limit);
        Ok(out)
    }
}

/// The hub with a zero self-loop and +1 choices r_i that fall into ⊥ with probability 2^-i.
#[derive(Debug, Clone, Copy, Default)]
pub struct GrowingMemory;

impl GrowingMemory {
    pub fn hub() -> StateId {
        StateId::gadget(0, Role::S, 0, 0)
    }

    pub fn r(i: u64) -> StateId {
        StateId::gadget(0, Role::R, i, 0)
    }

    pub fn facts() -> StructuralFacts {
        StructuralFacts::losing_role(Role::Bot)
    }
}

impl CountableMdp for GrowingMemory {
    fn initial(&self) -> StateId {
        Self::hub()
    }

    fn kind(&self, s: &StateId) -> Result<StateKind, MdpError> {
        match s.role() {
            Some(Role::S) => Ok(StateKind::Controlled),
            Some(Role::R) | Some(Role::Bot) => Ok(StateKind::Random),
            _ => Err(MdpError::unknown(s)),
        }
    }

    fn degree(&self, s: &StateId) -> Result<Degree, MdpError> {
        match s.role() {
            Some(Role::S) => Ok(Degree::Infinite),
            Some(Role::R) => Ok(Degree::Finite(2)),
            Some(Role::Bot) => Ok(Degree::Finite(1)),
            _ => Err(MdpError::unknown(s)),
        }
    }

    fn successors(&self, s: &StateId, limit: usize) -> Result<Vec<OutEdge>, MdpError> {
        let c = s.coord().ok_or_else(|| MdpError::unknown(s))?;
        let mut out = match c.role {
            Role::S => {
                let mut v = vec![OutEdge::choice(Self::hub(), Rational::zero())];
                v.extend((1..limit as u64).map(|i| OutEdge::choice(Self::r(i), int(1))));
                v
            }
            Role::R if c.branch >= 1 => {
                let p = half_pow(c.branch);
                vec![
                    OutEdge::random(bot(), Rational::zero(), Prob::Exact(p.clone())),
                    OutEdge::random(Self::hub(), Rational::zero(), Prob::Exact(Rational::one() - p)),
                ]
            }
            Role::Bot => vec![OutEdge::random(bot(), int(-1), Prob::one())],
            _ => return Err(MdpError::unknown(s)),
        };
        out.truncate(limit);
        Ok(out)
    }
}

/// Deterministic controlled chain s_1, s_2, ... with self-loops of reward -1/k and advance reward -1.
#[derive(Debug, Clone, Copy, Default)]
pub struct Puterman;

impl Puterman {
    pub fn s(k: u64) -> StateId {
        StateId::gadget(k, Role::S, 0, 0)
    }

    /// ceil(exp(exp(k))) when it is certified from f64 enclosures.
    pub fn loops(k: u64) -> Option<BigInt> {
        let v = Interval::point(k as f64).exp().exp();
        if !v.hi().is_finite() || v.hi() > 9.0e15 {
            return None;
        }
        let (lo, hi) = (libm::ceil(v.lo()), libm::ceil(v.hi()));
        (lo == hi).then(|| BigInt::from(lo as u64))
    }

    /// Enclosure of ln(loops(k)) = exp(k) up to the ceiling.
    fn ln_loops(k: u64) -> Interval {
        Interval::point(k as f64).exp()
    }

    /// Strategy that loops loops(k) times at s_k, reading the step counter.
    pub fn strategy(max_k: u64) -> Result<Strategy, GadgetError> {
        let mut exits = Vec::new();
        let mut t = 0u64;
        for k in 1..=max_k {
            let l = Self::loops(k).and_then(|l| l.to_u64()).ok_or_else(|| {
                GadgetError::Unsupported(format!("loop count at s_{k} is beyond a 64-bit step counter"))
            })?;
            t += l;
            exits.push(t);
            t += 1;
        }
        Ok(make_markov(move |s, step| {
            let k = s.coord().map_or(1, |c| c.n) as usize;
            match exits.get(k - 1) {
                Some(&exit) if step >= exit => 1,
                Some(_) => 0,
                None => 0,
            }
        })
        .with_label("puterman-loop"))
    }

    /// Exact mean right after leaving s_k (k advances taken), for certified loop counts.
    pub fn exit_mean_exact(k: u64) -> Option<Rational> {
        let mut total = Rational::zero();
        let mut steps = BigInt::zero();
        for l in 1..=k {
            let loops = Self::loops(l)?;
            total -= Rational::new(loops.clone(), BigInt::from(l)) + Rational::one();
            steps += loops + BigInt::one();
        }
        Some(total / Rational::from_integer(steps))
    }

    /// Enclosure of the mean right after leaving s_k, computed relative to the dominant loop count.
    pub fn exit_mean(k: u64) -> Interval {
        let top = Self::ln_loops(k);
        let mut num = Interval::point(0.0);
        let mut den = Interval::point(0.0);
        for l in 1..=k {
            // loops(l) / loops(k) in [e^{a - B}, e^{a - A} + e^{-A}] with ln loops in [a, a + tiny]
            let ratio_lo = (Self::ln_loops(l) - Interval::point(top.hi())).exp().lo();
            let ratio_hi = ((Self::ln_loops(l) - Interval::point(top.lo())).exp() + (-top).exp()).hi();
            let r = Interval::new(ratio_lo.min(1.0), ratio_hi);
            let unit = (-top).exp();
            num = num + r / Interval::point(l as f64) + unit;
            den = den + r + unit;
        }
        -(num / den)
    }

    /// Lower bound on the running mean while looping at s_{k+1}: the mean on entering it.
    pub fn dip_bound(k: u64) -> Interval {
        Self::exit_mean(k)
    }
}

impl CountableMdp for Puterman {
    fn initial(&self) -> StateId {
        Self::s(1)
    }

    fn kind(&self, s: &StateId) -> Result<StateKind, MdpError> {
        match s.role() {
            Some(Role::S) if s.coord().is_some_and(|c| c.n >= 1) => Ok(StateKind::Controlled),
            _ => Err(MdpError::unknown(s)),
        }
    }

    fn degree(&self, s: &StateId) -> Result<Degree, MdpError> {
        self.kind(s)?;
        Ok(Degree::Finite(2))
    }

    fn successors(&self, s: &StateId, limit: usize) -> Result<Vec<OutEdge>, MdpError> {
        self.kind(s)?;
        let k = s.coord().expect("checked").n;
        let mut out = vec![
            OutEdge::choice(Self::s(k), rat(-1, k as i64)),
            OutEdge::choice(Self::s(k + 1), int(-1)),
        ];
        out.truncate(limit);
        Ok(out)
    }
}

/// Checks every edge between states of blocks up to `last` against the declared depths.
/// Returns the number of edges audited.
pub fn audit_depths(chain: &GadgetChain, last: u64) -> Result<usize, String> {
    let mut seen = alloc::collections::BTreeSet::new();
    let mut stack = vec![chain.initial()];
    let mut edges = 0;
    while let Some(s) = stack.pop() {
        if !seen.insert(s.clone()) {
            continue;
        }
        let Some(d) = chain.declared_depth(&s) else { return Err(format!("{s} has no declared depth")) };
        for e in chain.all_successors(&s).map_err(|e| e.to_string())? {
            if e.target.role() == Some(Role::Bot) {
                continue;
            }
            let dt = chain.declared_depth(&e.target).ok_or_else(|| format!("{} has no declared depth", e.target))?;
            if dt != d + 1 {
                return Err(format!("edge {s} -> {} goes from depth {d} to {dt}", e.target));
            }
            edges += 1;
            if e.target.coord().is_some_and(|c| c.n <= last) {
                stack.push(e.target);
            }
        }
    }
    Ok(edges)
}

/// Checks every edge between reward-implicit states of blocks up to `last` against the declared totals.
pub fn audit_totals(chain: &GadgetChain, last: u64) -> Result<usize, String> {
    let mut seen = alloc::collections::BTreeSet::new();
    let mut stack = vec![(chain.initial(), Rational::zero())];
    let mut checked = 0;
    while let Some((s, total)) = stack.pop() {
        if let Some(t) = chain.declared_total(&s) {
            if t != total {
                return Err(format!("{s} reached with total {total}, declared {t}"));
            }
            checked += 1;
        }
        if !seen.insert(s.clone()) && chain.declared_total(&s).is_some() {
            continue;
        }
        if matches!(s.role(), Some(Role::Bot) | Some(Role::Rst)) || s.coord().is_some_and(|c| c.n > last || c.row > 0) {
            continue;
        }
        for e in chain.all_successors(&s).map_err(|e| e.to_string())? {
            stack.push((e.target, &total + &e.reward));
        }
    }
    Ok(checked)
}

/// Leaf probabilities of the random fan of block n, multiplied down the tree.
pub fn leaf_probabilities(chain: &GadgetChain, n: u64) -> Result<Vec<(u64, Prob)>, MdpError> {
    let mut out = Vec::new();
    let mut stack = vec![(chain.s(n), Prob::one())];
    while let Some((s, p)) = stack.pop() {
        if s.role() == Some(Role::A) {
            out.push((s.coord().expect("gadget").branch, p));
            continue;
        }
        for e in chain.all_successors(&s)? {
            stack.push((e.target, p.mul(e.prob.as_ref().expect("random fan"))));
        }
    }
    out.sort_by_key(|x| x.0);
    Ok(out)
}

/// Reward from s_n to s_{n+1} along random branch i and controlled branch j, avoiding ⊥.
pub fn block_total(chain: &GadgetChain, n: u64, i: u64, j: u64) -> Result<Rational, MdpError> {
    let mut s = chain.s(n);
    let mut total = Rational::zero();
    let target = chain.s(n + 1);
    let mut guard = 0u64;
    while s != target {
        let edges = chain.all_successors(&s)?;
        let c = s.coord().expect("gadget").clone();
        let pick = match c.role {
            Role::S | Role::Tr => edges.iter().position(|e| leaf_range_contains(chain, &e.target, i)),
            Role::C | Role::Tc => Some(navigate(chain, &s, j)),
            _ => Some(0),
        }
        .ok_or_else(|| MdpError::Invalid(format!("no edge towards branch {i} at {s}")))?;
        total += &edges[pick].reward;
        s = edges[pick].target.clone();
        guard += 1;
        if guard > 1 << 32 {
            return Err(MdpError::Invalid("block walk does not terminate".into()));
        }
    }
    Ok(total)
}

fn leaf_range_contains(chain: &GadgetChain, s: &StateId, i: u64) -> bool {
    let Some(c) = s.coord() else { return false };
    match c.role {
        Role::A => c.branch == i,
        Role::Tr => {
            let Ok(b) = chain.block(c.n) else { return false };
            let (lo, hi) = GadgetChain::tree_range(b.h, c.offset as u32, c.branch, b.k);
            lo <= i && i < hi
        }
        _ => false,
    }
}

/// Enclosure of ∏_{k>=from} (1 - 2^-k) from a log-sum with a geometric tail bound.
pub fn halving_product(from: u64, terms: u64) -> Interval {
    let mut acc = Interval::point(0.0);
    for k in from..from + terms {
        let x = Interval::point(libm::ldexp(1.0, -(k as i32)));
        acc = acc + x.ln_one_minus();
    }
    // |Σ_{k>=K} ln(1-2^-k)| <= Σ 2·2^-k = 2^{2-K}
    let tail = libm::ldexp(1.0, 2 - (from + terms) as i32);
    let lo = (acc - Interval::point(tail)).exp();
    Interval::new(lo.lo(), acc.exp().hi())
}

/// Structure of a chain for manifests and `describe`.
pub fn chain_summary(chain: &GadgetChain) -> String {
    let mut out = format!(
        "{} chain, {} blocks from N*={} on schedule {} ({})",
        chain.variant(),
        chain.spec().blocks,
        chain.n_star(),
        chain.schedule().name(),
        chain.flags()
    );
    if let Ok(b) = chain.block(chain.n_star()) {
        out.push_str(&format!(", first block k={} m={}", b.k, b.m));
    }
    out.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitor::bfs_depths;

    fn chain(variant: Variant, flags: Flags) -> GadgetChain {
        GadgetChain::build(&Schedule::accel_mimic(), ChainSpec { variant, flags, blocks: 6 }).unwrap()
    }

    #[test]
    fn block_structure() {
        let ch = chain(Variant::StepImplicit, Flags::default());
        let n = 4;
        assert_eq!(ch.k(n).unwrap(), 2);
        let s = ch.all_successors(&ch.s(n)).unwrap();
        assert_eq!(s.len(), 3);
        let c = ch.all_successors(&ch.c(n)).unwrap();
        assert_eq!(c.len(), 3);
        let m = Rational::from_integer(ch.m(n).unwrap());
        let ups: Vec<Rational> = (0..3).map(|i| ch.all_successors(&s[i].target).unwrap()[0].reward.clone()).collect();
        assert_eq!(ups, vec![Rational::zero(), m.clone(), &m * int(2)]);
        let down = ch.all_successors(&c[2].target).unwrap();
        assert_eq!(down.len(), 1);
        assert_eq!(down[0].reward, -(&m * int(2)));
    }

    #[test]
    fn depths_match_bfs() {
        for flags in [
            Flags::default(),
            Flags { binary: true, ..Flags::default() },
            Flags { bounded: true, ..Flags::default() },
            Flags { binary: true, bounded: true, rationalized: true },
        ] {
            let ch = chain(Variant::StepImplicit, flags);
            let limit = ch.declared_depth(&ch.s(ch.last_block())).unwrap();
            let d = bfs_depths(&ch, &ch.initial(), limit).unwrap();
            for (s, depth) in &d {
                if s.role() == Some(Role::Bot) {
                    continue;
                }
                assert_eq!(ch.declared_depth(s), Some(*depth), "{s} under {flags}");
            }
        }
    }

    #[test]
    fn restart_depths_match_bfs() {
        let ch = chain(Variant::Restart, Flags::default());
        let limit = ch.declared_depth(&ch.s(ch.last_block())).unwrap();
        let d = bfs_depths(&ch, &ch.initial(), limit).unwrap();
        assert!(d.keys().any(|s| s.coord().is_some_and(|c| c.row == 1)));
        for (s, depth) in &d {
            assert_eq!(ch.declared_depth(s), Some(*depth), "{s}");
        }
    }

    #[test]
    fn binary_leaves_keep_probabilities() {
        let ch = GadgetChain::build(
            &Schedule::accel_confusion(),
            ChainSpec { variant: Variant::StepImplicit, flags: Flags { binary: true, ..Flags::default() }, blocks: 20 },
        )
        .unwrap();
        let n = 25;
        let deltas = ch.deltas(n).unwrap();
        let mut stack = vec![(ch.s(n), Rational::one())];
        let mut leaves = Vec::new();
        while let Some((s, p)) = stack.pop() {
            if s.role() == Some(Role::A) {
                leaves.push((s.coord().unwrap().branch, p));
                continue;
            }
            let e = ch.all_successors(&s).unwrap();
            assert!(e.len() <= 2);
            for x in e {
                stack.push((x.target, &p * x.prob.unwrap().exact().unwrap()));
            }
        }
        leaves.sort();
        assert_eq!(leaves.len(), deltas.len());
        for (i, p) in leaves {
            assert_eq!(&p, deltas[i as usize].exact().unwrap());
        }
    }

    #[test]
    fn reward_implicit_totals() {
        let s = Schedule::accel_telescoping().with_recurrence(crate::schedule::Recurrence::B);
        let ch = GadgetChain::build(&s, ChainSpec::new(Variant::RewardImplicit, 5)).unwrap();
        let mut frontier = vec![(ch.initial(), Rational::zero())];
        let mut seen = 0;
        while let Some((st, total)) = frontier.pop() {
            if st.role() == Some(Role::Bot) || st.coord().is_some_and(|c| c.n > ch.n_star() + 3) {
                continue;
            }
            if let Some(t) = ch.declared_total(&st) {
                assert_eq!(t, total, "{st}");
                seen += 1;
            }
            for e in ch.all_successors(&st).unwrap() {
                frontier.push((e.target, &total + &e.reward));
            }
        }
        assert!(seen > 20);
    }

    #[test]
    fn puterman_small_counts() {
        assert_eq!(Puterman::loops(1), Some(BigInt::from(16)));
        assert_eq!(Puterman::loops(2), Some(BigInt::from(1619)));
        let exact = Puterman::exit_mean_exact(2).unwrap();
        assert!(Puterman::exit_mean(2).contains(crate::numeric::to_f64(&exact)));
    }
}
