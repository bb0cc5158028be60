//! Checks on config, schedule, chain and machine files.

use cmdp_core::gadgets::chain_summary;
use cmdp_core::schedule::{classify, describe, Schedule};

use crate::formats::{ChainManifest, FrMachineSpec, ScheduleSpec};
use crate::{find, ExperimentConfig, LabError};

/// What a text file turned out to be, and what was checked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validation {
    pub kind: &'static str,
    pub lines: Vec<String>,
}

pub fn validate_schedule(s: &Schedule) -> Result<Vec<String>, LabError> {
    let mut lines = vec![describe(s)];
    if s.is_faithful() {
        for i in 0..3 {
            let (d, e) = (s.delta_term(i).expect("faithful"), s.epsilon_term(i).expect("faithful"));
            lines.push(format!("Σδ_{i}: {:?}, Σδ_{i}ε_{i}: {:?}", classify(&d), classify(&d.mul(&e))));
        }
    }
    let probes = [s.n_star(), s.n_star() + 1, s.n_star() + 10, s.n_star() + 100, 1 << 20];
    for n in probes {
        if !s.well_defined_at(n)? {
            return Err(LabError::HypothesisViolated(format!("branch probabilities exceed 1 at n = {n}")));
        }
        let sum = s.delta_sum(s.k(n), n)?;
        lines.push(format!("n = {n}: k = {}, Σδ = {}", s.k(n), sum.interval()));
    }
    Ok(lines)
}

pub fn validate_text(text: &str) -> Result<Validation, LabError> {
    let table: toml::Table = toml::from_str(text)?;
    if table.contains_key("experiment") {
        let cfg = ExperimentConfig::parse(text)?;
        let e = find(&cfg.experiment).ok_or_else(|| LabError::UnknownExperiment(cfg.experiment.clone()))?;
        let mut lines = vec![format!("experiment {} (criterion {})", e.id, e.criterion)];
        if let Some(c) = &cfg.chain {
            let chain = c.build()?;
            lines.push(chain_summary(&chain));
            lines.extend(validate_schedule(chain.schedule())?);
        }
        for m in &cfg.machines {
            m.machine()?;
            lines.push(format!("machine `{}`: {} modes{}", m.label, m.modes, if m.is_randomized() { ", randomized" } else { "" }));
        }
        return Ok(Validation { kind: "experiment", lines });
    }
    if table.contains_key("variant") {
        let chain = ChainManifest::parse(text)?.build()?;
        let mut lines = vec![chain_summary(&chain)];
        lines.extend(validate_schedule(chain.schedule())?);
        return Ok(Validation { kind: "chain", lines });
    }
    if table.contains_key("modes") {
        let m = FrMachineSpec::parse(text)?;
        let machine = m.machine()?;
        return Ok(Validation { kind: "machine", lines: vec![format!("{} modes, {} observation rows", machine.modes, machine.observe.len())] });
    }
    let s = ScheduleSpec::parse(text)?.to_schedule()?;
    Ok(Validation { kind: "schedule", lines: validate_schedule(&s)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn faithful_preset_validates() {
        let v = validate_text("preset = \"faithful-a\"\n").unwrap();
        assert_eq!(v.kind, "schedule");
        assert!(v.lines.iter().any(|l| l.contains("Σδ_0ε_0: Convergent")));
    }

    #[test]
    fn divergent_loss_is_a_hypothesis_violation() {
        let text = "k_steps = [[1, 1]]\ndelta = [\"1/2 / n^1/2\"]\nepsilon = [\"1/2 / n^1/4\"]\n";
        assert!(matches!(validate_text(text), Err(LabError::HypothesisViolated(_))));
    }

    #[test]
    fn machine_and_chain_files() {
        assert_eq!(validate_text("modes = 2\nobserve = [\"0\", \"1\"]\nact = [\"0\", \"1\"]\n").unwrap().kind, "machine");
        let chain = "variant = \"step-implicit\"\nblocks = 5\n[schedule]\npreset = \"accel-mimic\"\n";
        assert_eq!(validate_text(chain).unwrap().kind, "chain");
        assert!(validate_text("modes = 2\nobserve = [\"0\"]\nact = [\"0\"]\n").is_err());
    }
}
