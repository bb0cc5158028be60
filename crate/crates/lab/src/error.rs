use cmdp_core::gadgets::GadgetError;
use cmdp_core::numeric::ParseRationalError;
use cmdp_core::schedule::ScheduleError;
use cmdp_core::sim::SimError;
use cmdp_core::strategy::StrategyError;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error(transparent)]
    Schedule(ScheduleError),
    #[error(transparent)]
    Gadget(GadgetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Rational(#[from] ParseRationalError),
    #[error("toml: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("toml: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl From<ScheduleError> for LabError {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::HypothesisViolated(m) => LabError::HypothesisViolated(m),
            ScheduleError::DivergentLoss => LabError::HypothesisViolated(e.to_string()),
            e => LabError::Schedule(e),
        }
    }
}

impl From<GadgetError> for LabError {
    fn from(e: GadgetError) -> Self {
        match e {
            GadgetError::Schedule(s) => s.into(),
            e => LabError::Gadget(e),
        }
    }
}

impl From<cmdp_core::mdp::MdpError> for LabError {
    fn from(e: cmdp_core::mdp::MdpError) -> Self {
        LabError::Gadget(GadgetError::Mdp(e))
    }
}

pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> LabError + '_ {
    move |source| LabError::Io { path: path.display().to_string(), source }
}
