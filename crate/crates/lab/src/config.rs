use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::io_err;
use crate::formats::{ChainManifest, FrMachineSpec, ScheduleSpec};
use crate::LabError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default = "default_blocks")]
    pub horizon_blocks: u64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_unknown: Option<f64>,
}

fn default_seed() -> u64 {
    1
}
fn default_trials() -> u64 {
    1000
}
fn default_blocks() -> u64 {
    50
}
fn default_confidence() -> f64 {
    0.99
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            seed: default_seed(),
            trials: default_trials(),
            horizon_blocks: default_blocks(),
            confidence: default_confidence(),
            max_unknown: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
}

fn default_dir() -> String {
    "results".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_dir() }
    }
}

/// Everything a run depends on besides the code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainManifest>,
    #[serde(default)]
    pub params: toml::Table,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub machines: Vec<FrMachineSpec>,
}

/// Command-line overrides, applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub horizon_blocks: Option<u64>,
    /// A preset name or a path to a schedule file.
    pub schedule: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub confidence: Option<f64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, LabError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        Self::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_text(&self) -> Result<String, LabError> {
        Ok(toml::to_string(self)?)
    }

    fn check(&self) -> Result<(), LabError> {
        let p = &self.plan;
        if p.trials == 0 || p.horizon_blocks == 0 {
            return Err(LabError::ConfigInvalid("trials and horizon_blocks must be positive".into()));
        }
        if !(p.confidence > 0.0 && p.confidence < 1.0) {
            return Err(LabError::ConfigInvalid(format!("confidence {} outside (0,1)", p.confidence)));
        }
        if let Some(u) = p.max_unknown {
            if !(0.0..=1.0).contains(&u) {
                return Err(LabError::ConfigInvalid(format!("max_unknown {u} outside [0,1]")));
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), LabError> {
        if let Some(s) = o.seed {
            self.plan.seed = s;
        }
        if let Some(t) = o.trials {
            self.plan.trials = t;
        }
        if let Some(h) = o.horizon_blocks {
            self.plan.horizon_blocks = h;
        }
        if let Some(c) = o.confidence {
            self.plan.confidence = c;
        }
        if let Some(d) = &o.out_dir {
            self.output.dir = d.display().to_string();
        }
        if let Some(s) = &o.schedule {
            let spec = load_schedule_arg(s)?;
            spec.to_schedule()?;
            match &mut self.chain {
                Some(c) => c.schedule = spec,
                None => {
                    return Err(LabError::ConfigInvalid(format!("experiment `{}` has no chain to take a schedule", self.experiment)))
                }
            }
        }
        self.check()
    }

    pub fn chain(&self) -> Result<&ChainManifest, LabError> {
        self.chain.as_ref().ok_or_else(|| LabError::ConfigInvalid(format!("`{}` needs a [chain] table", self.experiment)))
    }

    fn param(&self, key: &str) -> Result<&toml::Value, LabError> {
        self.params.get(key).ok_or_else(|| LabError::ConfigInvalid(format!("missing params.{key}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, LabError> {
        match self.param(key)? {
            toml::Value::Float(x) => Ok(*x),
            toml::Value::Integer(i) => Ok(*i as f64),
            v => Err(LabError::ConfigInvalid(format!("params.{key} = {v} is not a number"))),
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64, LabError> {
        match self.param(key)? {
            toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
            v => Err(LabError::ConfigInvalid(format!("params.{key} = {v} is not a non-negative integer"))),
        }
    }

    pub fn string(&self, key: &str) -> Result<String, LabError> {
        match self.param(key)? {
            toml::Value::String(s) => Ok(s.clone()),
            v => Err(LabError::ConfigInvalid(format!("params.{key} = {v} is not a string"))),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, LabError> {
        self.list(key)?
            .iter()
            .map(|v| match v {
                toml::Value::Float(x) => Ok(*x),
                toml::Value::Integer(i) => Ok(*i as f64),
                v => Err(LabError::ConfigInvalid(format!("params.{key} holds {v}, not a number"))),
            })
            .collect()
    }

    pub fn u64_list(&self, key: &str) -> Result<Vec<u64>, LabError> {
        self.list(key)?
            .iter()
            .map(|v| match v {
                toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                v => Err(LabError::ConfigInvalid(format!("params.{key} holds {v}, not a non-negative integer"))),
            })
            .collect()
    }

    fn list(&self, key: &str) -> Result<&Vec<toml::Value>, LabError> {
        match self.param(key)? {
            toml::Value::Array(a) => Ok(a),
            v => Err(LabError::ConfigInvalid(format!("params.{key} = {v} is not a list"))),
        }
    }
}

/// Leading `#` lines of a config file.
pub fn header(text: &str) -> String {
    text.lines()
        .take_while(|l| l.trim_start().starts_with('#'))
        .map(|l| l.trim_start().trim_start_matches('#').trim())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn load_schedule_arg(arg: &str) -> Result<ScheduleSpec, LabError> {
    let p = Path::new(arg);
    if p.is_file() {
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        ScheduleSpec::parse(&text)
    } else {
        Ok(ScheduleSpec::preset(arg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"# checks something
# over two lines
experiment = "mimic-attainment"

[plan]
seed = 7
trials = 10

[chain]
variant = "step-implicit"
blocks = 20

[chain.schedule]
preset = "accel-mimic"

[params]
eps = [0.5, 0.1]
extra = 3
"#;

    #[test]
    fn parse_and_override() {
        let mut c = ExperimentConfig::parse(TEXT).unwrap();
        assert_eq!(c.plan.seed, 7);
        assert_eq!(c.plan.horizon_blocks, 50);
        assert_eq!(c.f64_list("eps").unwrap(), vec![0.5, 0.1]);
        assert_eq!(c.u64("extra").unwrap(), 3);
        assert!(c.u64("missing").is_err());
        c.apply(&Overrides { seed: Some(9), schedule: Some("accel-telescoping".into()), ..Default::default() }).unwrap();
        assert_eq!(c.plan.seed, 9);
        assert_eq!(c.chain().unwrap().schedule.preset.as_deref(), Some("accel-telescoping"));
        let again = ExperimentConfig::parse(&c.to_text().unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(header(TEXT), "checks something\nover two lines");
    }

    #[test]
    fn bad_values_rejected() {
        assert!(ExperimentConfig::parse("experiment = \"x\"\n[plan]\nconfidence = 1.5\n").is_err());
        assert!(ExperimentConfig::parse("experiment = \"x\"\nbogus = 1\n").is_err());
        let mut c = ExperimentConfig::parse("experiment = \"x\"\n").unwrap();
        assert!(c.apply(&Overrides { schedule: Some("accel-mimic".into()), ..Default::default() }).is_err());
    }
}
