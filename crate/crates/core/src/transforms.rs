//! Encodings that fold the step counter and/or the accumulated reward into the state, and the pull-back of
//! memoryless strategies on an encoding to counter-based strategies on the original MDP.

use alloc::boxed::Box;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigInt;
use num_traits::Zero;

use crate::mdp::{CountableMdp, Degree, MdpError, OutEdge, Prob, StateId, StateKind};
use crate::numeric::Rational;
use crate::strategy::{make_markov, make_reward_counter, make_sc_rc, Memory, Strategy, StrategyClass, StrategyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    /// States carry the step counter.
    Step,
    /// States carry the total so far; each edge is rewarded with the new total.
    Reward,
    /// States carry both; each edge is rewarded with the new mean.
    Mean,
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::Step => "S",
            Encoding::Reward => "R",
            Encoding::Mean => "A",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Encoded<M> {
    inner: M,
    encoding: Encoding,
}

pub fn encode_step<M: CountableMdp>(mdp: M) -> Encoded<M> {
    Encoded { inner: mdp, encoding: Encoding::Step }
}

pub fn encode_reward<M: CountableMdp>(mdp: M) -> Encoded<M> {
    Encoded { inner: mdp, encoding: Encoding::Reward }
}

pub fn encode_mean<M: CountableMdp>(mdp: M) -> Encoded<M> {
    Encoded { inner: mdp, encoding: Encoding::Mean }
}

impl<M: CountableMdp> Encoded<M> {
    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    /// Encoded counterpart of a base state reached after `step` steps with accumulated `total`.
    pub fn wrap(&self, base: StateId, step: u64, total: Rational) -> StateId {
        match self.encoding {
            Encoding::Step => StateId::Step(Box::new(base), step),
            Encoding::Reward => StateId::Reward(Box::new(base), total),
            Encoding::Mean => StateId::Mean(Box::new(base), step, total),
        }
    }

    fn split<'a>(&self, s: &'a StateId) -> Result<(&'a StateId, u64, Rational), MdpError> {
        match (self.encoding, s) {
            (Encoding::Step, StateId::Step(b, n)) => Ok((b, *n, Rational::zero())),
            (Encoding::Reward, StateId::Reward(b, r)) => Ok((b, 0, r.clone())),
            (Encoding::Mean, StateId::Mean(b, n, r)) => Ok((b, *n, r.clone())),
            _ => Err(MdpError::unknown(s)),
        }
    }
}

impl<M: CountableMdp> CountableMdp for Encoded<M> {
    fn initial(&self) -> StateId {
        self.wrap(self.inner.initial(), 0, Rational::zero())
    }

    fn kind(&self, s: &StateId) -> Result<StateKind, MdpError> {
        self.inner.kind(self.split(s)?.0)
    }

    fn degree(&self, s: &StateId) -> Result<Degree, MdpError> {
        self.inner.degree(self.split(s)?.0)
    }

    fn successors(&self, s: &StateId, limit: usize) -> Result<Vec<OutEdge>, MdpError> {
        let (base, step, total) = self.split(s)?;
        let edges = self.inner.successors(base, limit)?;
        Ok(edges
            .into_iter()
            .map(|e| {
                let new_total = &total + &e.reward;
                let reward = match self.encoding {
                    Encoding::Step => e.reward.clone(),
                    Encoding::Reward => new_total.clone(),
                    Encoding::Mean => &new_total / Rational::from_integer(BigInt::from(step + 1)),
                };
                OutEdge { target: self.wrap(e.target, step + 1, new_total), reward, prob: e.prob }
            })
            .collect())
    }

    fn tail_mass(&self, s: &StateId, probed: usize) -> Result<Option<Prob>, MdpError> {
        self.inner.tail_mass(self.split(s)?.0, probed)
    }
}

/// Strategy on the original MDP that reproduces `strategy` played on the `encoding` of it:
/// MD on S gives Markov, MD on R gives RC, Markov on R or MD on A gives SC+RC.
pub fn pull_back(strategy: &Strategy, encoding: Encoding) -> Result<Strategy, StrategyError> {
    let class = strategy.class();
    let s = strategy.clone();
    let first = |d: crate::strategy::Dist<usize>| d.first().map(|x| x.0).unwrap_or(0);
    let at = |mode: u64| Memory { mode, step: 0, total: Rational::zero() };
    let pulled = match (encoding, class) {
        (Encoding::Step, StrategyClass::Md) | (Encoding::Step, StrategyClass::Markov) => {
            let reads_step = class == StrategyClass::Markov;
            make_markov(move |base, step| {
                let mut m = at(0);
                if reads_step {
                    m.step = step;
                }
                first(s.act_raw(&m, &StateId::Step(Box::new(base.clone()), step)))
            })
        }
        (Encoding::Reward, StrategyClass::Md) => {
            make_reward_counter(move |base, total| first(s.act_raw(&at(0), &StateId::Reward(Box::new(base.clone()), total.clone()))))
        }
        (Encoding::Reward, StrategyClass::Markov) => make_sc_rc(move |base, step, total| {
            let m = Memory { mode: 0, step, total: Rational::zero() };
            first(s.act_raw(&m, &StateId::Reward(Box::new(base.clone()), total.clone())))
        }),
        (Encoding::Mean, StrategyClass::Md) => make_sc_rc(move |base, step, total| {
            first(s.act_raw(&at(0), &StateId::Mean(Box::new(base.clone()), step, total.clone())))
        }),
        _ => {
            return Err(StrategyError::ClassTooRich {
                class: class.to_string(),
                target: alloc::format!("a counter strategy via the {encoding} encoding"),
            })
        }
    };
    Ok(pulled.with_label(alloc::format!("pullback-{encoding}({})", strategy.label())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{FiniteMdp, RngStream};
    use crate::numeric::{int, rat};
    use crate::strategy::{make_fr, make_md, point, FrMachine};

    fn loop_mdp() -> FiniteMdp {
        let mut m = FiniteMdp::new();
        let a = m.add_state(StateKind::Controlled);
        let b = m.add_state(StateKind::Random);
        m.add_edge(a, b, int(2), None);
        m.add_edge(a, a, int(-1), None);
        m.add_edge(b, a, rat(1, 2), Some(rat(1, 3)));
        m.add_edge(b, b, int(-3), Some(rat(2, 3)));
        m
    }

    #[test]
    fn reward_encoding_reports_totals() {
        let r = encode_reward(loop_mdp());
        let e = r.edge(&r.initial(), 0).unwrap();
        assert_eq!(e.reward, int(2));
        let e2 = r.edge(&e.target, 1).unwrap();
        assert_eq!(e2.reward, int(-1));
        assert_eq!(e2.target.to_string(), "p1@r=-1");
    }

    #[test]
    fn mean_encoding_reports_means() {
        let a = encode_mean(loop_mdp());
        let e = a.edge(&a.initial(), 0).unwrap();
        let e2 = a.edge(&e.target, 1).unwrap();
        assert_eq!(e2.reward, rat(-1, 2));
    }

    #[test]
    fn pull_back_classes() {
        let md = make_md(|_| 0);
        assert_eq!(pull_back(&md, Encoding::Step).unwrap().class(), StrategyClass::Markov);
        assert_eq!(pull_back(&md, Encoding::Reward).unwrap().class(), StrategyClass::RewardCounter);
        assert_eq!(pull_back(&md, Encoding::Mean).unwrap().class(), StrategyClass::StepReward);
        let fr = make_fr(FrMachine::new(2, 0, |_, _| point(0), |m, _, _, _| point(m))).unwrap();
        assert!(matches!(pull_back(&fr, Encoding::Reward), Err(StrategyError::ClassTooRich { .. })));
    }

    #[test]
    fn encoded_random_mdp_keeps_distributions() {
        let mut rng = RngStream::new(3, 1);
        let m = FiniteMdp::random(&mut rng, 5, 3, 2);
        let enc = encode_mean(&m);
        let s = enc.initial();
        let base = m.all_successors(&m.initial()).unwrap();
        let wrapped = enc.all_successors(&s).unwrap();
        assert_eq!(base.len(), wrapped.len());
        for (x, y) in base.iter().zip(&wrapped) {
            assert_eq!(x.prob, y.prob);
            assert_eq!(y.target.base(), &x.target);
        }
    }
}
