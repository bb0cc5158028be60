//! Configured experiments over the counter-strategy constructions, with CSV/JSONL artifacts.

pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;
pub mod report;
pub mod validate;

pub use config::{ExperimentConfig, Overrides};
pub use error::LabError;
pub use experiments::{find, registry, run_config, Experiment};
pub use report::{Outcome, Row};
