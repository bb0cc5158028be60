//! Text forms of schedules, chain manifests and FR machines (TOML).

use cmdp_core::gadgets::{BranchMachine, ChainSpec, Flags, GadgetChain, Variant};
use cmdp_core::numeric::{parse_rational, Rational};
use cmdp_core::schedule::{Accelerated, Family, KGrowth, PowerTerm, Recurrence, Schedule};
use cmdp_core::strategy::Dist;
use num_rational::Ratio;
use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::LabError;

/// Either a named preset or an explicit accelerated table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recurrence: Option<String>,
    /// (first block, k) pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_steps: Option<Vec<(u64, u32)>>,
    /// Terms written `c / n^p`, meaning c / ceil(n^p).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Vec<String>>,
}

fn parse_recurrence(s: &str) -> Result<Recurrence, LabError> {
    match s {
        "A" | "a" => Ok(Recurrence::A),
        "B" | "b" => Ok(Recurrence::B),
        other => Err(LabError::ConfigInvalid(format!("unknown recurrence `{other}` (use A or B)"))),
    }
}

fn recurrence_code(r: Recurrence) -> &'static str {
    match r {
        Recurrence::A => "A",
        Recurrence::B => "B",
    }
}

fn parse_ratio(s: &str) -> Result<Ratio<i64>, LabError> {
    let bad = || LabError::ConfigInvalid(format!("bad exponent `{s}`"));
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
        None => (s.trim().parse().map_err(|_| bad())?, 1),
    };
    if d == 0 {
        return Err(bad());
    }
    Ok(Ratio::new(n, d))
}

pub fn parse_term(s: &str) -> Result<PowerTerm, LabError> {
    let (c, p) = s
        .split_once("/ n^")
        .ok_or_else(|| LabError::ConfigInvalid(format!("term `{s}` is not of the form `c / n^p`")))?;
    let coeff = parse_rational(c.trim()).map_err(|e| LabError::ConfigInvalid(format!("term `{s}`: {e}")))?;
    Ok(PowerTerm::new(coeff, parse_ratio(p)?))
}

pub fn format_term(t: &PowerTerm) -> String {
    format!("{} / n^{}", t.coeff, t.exponent)
}

impl ScheduleSpec {
    pub fn preset(name: &str) -> Self {
        ScheduleSpec { preset: Some(name.to_string()), ..Default::default() }
    }

    pub fn to_schedule(&self) -> Result<Schedule, LabError> {
        let recurrence = self.recurrence.as_deref().map(parse_recurrence).transpose()?;
        let base = match &self.preset {
            Some(p) => {
                if self.delta.is_some() || self.epsilon.is_some() || self.k_steps.is_some() {
                    return Err(LabError::ConfigInvalid("a preset schedule takes no explicit tables".into()));
                }
                Schedule::preset(p).ok_or_else(|| {
                    LabError::ConfigInvalid(format!("unknown schedule `{p}`; presets: {}", Schedule::preset_names().join(", ")))
                })?
            }
            None => {
                let need = |x: &Option<Vec<String>>, what: &str| {
                    x.clone().ok_or_else(|| LabError::ConfigInvalid(format!("custom schedule lacks `{what}`")))
                };
                let delta = need(&self.delta, "delta")?.iter().map(|t| parse_term(t)).collect::<Result<_, _>>()?;
                let epsilon = need(&self.epsilon, "epsilon")?.iter().map(|t| parse_term(t)).collect::<Result<_, _>>()?;
                let steps = self.k_steps.clone().ok_or_else(|| LabError::ConfigInvalid("custom schedule lacks `k_steps`".into()))?;
                Schedule::accelerated(Accelerated {
                    name: self.name.clone().unwrap_or_else(|| "custom".into()),
                    k_growth: KGrowth::new(steps)?,
                    delta,
                    epsilon,
                    recurrence: recurrence.unwrap_or(Recurrence::A),
                })?
            }
        };
        Ok(match recurrence {
            Some(r) => base.with_recurrence(r),
            None => base,
        })
    }

    pub fn from_schedule(s: &Schedule) -> Self {
        if let Some(p) = Schedule::preset(s.name()) {
            if p == *s {
                return ScheduleSpec::preset(s.name());
            }
            if p.with_recurrence(s.recurrence()) == *s {
                return ScheduleSpec { recurrence: Some(recurrence_code(s.recurrence()).into()), ..ScheduleSpec::preset(s.name()) };
            }
        }
        match s.family() {
            Family::Accelerated(a) => ScheduleSpec {
                preset: None,
                name: Some(a.name.clone()),
                recurrence: Some(recurrence_code(a.recurrence).into()),
                k_steps: Some(a.k_growth.steps().to_vec()),
                delta: Some(a.delta.iter().map(format_term).collect()),
                epsilon: Some(a.epsilon.iter().map(format_term).collect()),
            },
            _ => ScheduleSpec::preset(s.name()),
        }
    }

    pub fn parse(text: &str) -> Result<Self, LabError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_text(&self) -> Result<String, LabError> {
        Ok(toml::to_string(self)?)
    }
}

/// Variant, schedule reference and flags of a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainManifest {
    pub variant: String,
    pub blocks: u64,
    #[serde(default)]
    pub binary: bool,
    #[serde(default)]
    pub rationalized: bool,
    #[serde(default)]
    pub bounded: bool,
    pub schedule: ScheduleSpec,
}

impl ChainManifest {
    pub fn spec(&self) -> Result<ChainSpec, LabError> {
        let variant: Variant = self.variant.parse()?;
        Ok(ChainSpec {
            variant,
            flags: Flags { binary: self.binary, rationalized: self.rationalized, bounded: self.bounded },
            blocks: self.blocks,
        })
    }

    pub fn build(&self) -> Result<GadgetChain, LabError> {
        Ok(GadgetChain::build(&self.schedule.to_schedule()?, self.spec()?)?)
    }

    pub fn from_chain(chain: &GadgetChain) -> Self {
        let f = chain.flags();
        ChainManifest {
            variant: chain.variant().code().to_string(),
            blocks: chain.spec().blocks,
            binary: f.binary,
            rationalized: f.rationalized,
            bounded: f.bounded,
            schedule: ScheduleSpec::from_schedule(chain.schedule()),
        }
    }

    pub fn parse(text: &str) -> Result<Self, LabError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_text(&self) -> Result<String, LabError> {
        Ok(toml::to_string(self)?)
    }
}

/// A finite-memory chain strategy: `observe[i]` is the mode distribution adopted after random branch i
/// (the last row covers all higher branches), `act[m]` the branch distribution played in mode m.
/// Distributions are written `value:prob value:prob ...`, or a bare value for a point mass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrMachineSpec {
    #[serde(default)]
    pub label: String,
    pub modes: u32,
    #[serde(default)]
    pub initial: u32,
    #[serde(default)]
    pub enter_from: u64,
    pub observe: Vec<String>,
    pub act: Vec<String>,
}

pub fn parse_dist(s: &str) -> Result<Dist<u64>, LabError> {
    let mut out = Vec::new();
    for part in s.split_whitespace() {
        let (v, p) = match part.split_once(':') {
            Some((v, p)) => (v, parse_rational(p).map_err(|e| LabError::ConfigInvalid(format!("`{part}`: {e}")))?),
            None => (part, Rational::one()),
        };
        let v = v.parse().map_err(|_| LabError::ConfigInvalid(format!("`{part}` is not `value:prob`")))?;
        out.push((v, p));
    }
    if out.is_empty() {
        return Err(LabError::ConfigInvalid("empty distribution".into()));
    }
    Ok(out)
}

pub fn format_dist(d: &Dist<u64>) -> String {
    if d.len() == 1 && d[0].1.is_one() {
        return d[0].0.to_string();
    }
    d.iter().map(|(v, p)| format!("{v}:{p}")).collect::<Vec<_>>().join(" ")
}

impl FrMachineSpec {
    pub fn machine(&self) -> Result<BranchMachine, LabError> {
        let observe = self
            .observe
            .iter()
            .map(|s| parse_dist(s).map(|d| d.into_iter().map(|(m, p)| (m as u32, p)).collect()))
            .collect::<Result<Vec<Dist<u32>>, _>>()?;
        let act = self.act.iter().map(|s| parse_dist(s)).collect::<Result<Vec<_>, _>>()?;
        let m = BranchMachine { modes: self.modes, initial: self.initial, enter_from: self.enter_from, observe, act };
        m.validate()?;
        Ok(m)
    }

    pub fn from_machine(label: &str, m: &BranchMachine) -> Self {
        FrMachineSpec {
            label: label.to_string(),
            modes: m.modes,
            initial: m.initial,
            enter_from: m.enter_from,
            observe: m.observe.iter().map(|d| format_dist(&d.iter().map(|(x, p)| (*x as u64, p.clone())).collect())).collect(),
            act: m.act.iter().map(format_dist).collect(),
        }
    }

    pub fn is_randomized(&self) -> bool {
        self.observe.iter().chain(&self.act).any(|s| s.contains(':'))
    }

    pub fn parse(text: &str) -> Result<Self, LabError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_text(&self) -> Result<String, LabError> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_round_trip() {
        for name in Schedule::preset_names() {
            let s = Schedule::preset(name).unwrap();
            let text = ScheduleSpec::from_schedule(&s).to_text().unwrap();
            assert_eq!(ScheduleSpec::parse(&text).unwrap().to_schedule().unwrap(), s);
        }
        let b = Schedule::accel_confusion().with_recurrence(Recurrence::B);
        let text = ScheduleSpec::from_schedule(&b).to_text().unwrap();
        assert_eq!(ScheduleSpec::parse(&text).unwrap().to_schedule().unwrap(), b);
    }

    #[test]
    fn custom_schedule_text() {
        let text = r#"
name = "halves"
recurrence = "A"
k_steps = [[1, 1]]
delta = ["1 / n^1"]
epsilon = ["1 / n^1"]
"#;
        let s = ScheduleSpec::parse(text).unwrap().to_schedule().unwrap();
        assert_eq!(s, Schedule::accelerated(match Schedule::accel_telescoping().family() {
            Family::Accelerated(a) => Accelerated { name: "halves".into(), ..a.clone() },
            _ => unreachable!(),
        }).unwrap());
        let again = ScheduleSpec::from_schedule(&s).to_text().unwrap();
        assert_eq!(ScheduleSpec::parse(&again).unwrap().to_schedule().unwrap(), s);
    }

    #[test]
    fn divergent_loss_is_rejected() {
        let text = r#"
k_steps = [[1, 1]]
delta = ["1 / n^0"]
epsilon = ["1/2 / n^1/2"]
"#;
        let err = ScheduleSpec::parse(text).unwrap().to_schedule().unwrap_err();
        assert!(matches!(err, LabError::HypothesisViolated(_)), "{err}");
    }

    #[test]
    fn machine_round_trip() {
        let text = r#"
label = "buckets"
modes = 3
observe = ["0", "1", "2:2/3 1:1/3"]
act = ["0", "1", "2"]
"#;
        let spec = FrMachineSpec::parse(text).unwrap();
        let m = spec.machine().unwrap();
        assert!(spec.is_randomized());
        let back = FrMachineSpec::from_machine("buckets", &m);
        assert_eq!(back.machine().unwrap(), m);
        assert!(FrMachineSpec::parse(&back.to_text().unwrap()).is_ok());
    }

    #[test]
    fn chain_manifest_round_trip() {
        let m = ChainManifest {
            variant: "restart".into(),
            blocks: 12,
            binary: true,
            rationalized: false,
            bounded: false,
            schedule: ScheduleSpec::preset("accel-mimic"),
        };
        let chain = m.build().unwrap();
        let back = ChainManifest::from_chain(&chain);
        assert_eq!(back, m);
        assert_eq!(ChainManifest::parse(&back.to_text().unwrap()).unwrap(), m);
    }
}
