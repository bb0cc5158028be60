use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cmdp_lab::config::header;
use cmdp_lab::report::write_artifacts;
use cmdp_lab::validate::validate_text;
use cmdp_lab::{find, registry, run_config, ExperimentConfig, LabError, Overrides};

#[derive(Parser)]
#[command(name = "cmdp", about = "Configured experiments on counter strategies for countable MDPs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run experiments from config files or by name (looked up in --configs).
    Run(RunArgs),
    /// Check config, schedule, chain or machine files (a bare name is taken as a schedule preset).
    Validate { files: Vec<String> },
    /// List the registered experiments.
    List,
    /// Show the claim behind an experiment and its config header.
    Describe {
        id: String,
        #[arg(long, default_value = "configs")]
        configs: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    targets: Vec<String>,
    /// Run every registered experiment.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value = "configs")]
    configs: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    horizon_blocks: Option<u64>,
    /// Schedule preset name or schedule file, replacing the config's chain schedule.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    confidence: Option<f64>,
}

fn config_path(target: &str, dir: &Path) -> PathBuf {
    let p = PathBuf::from(target);
    if p.is_file() {
        p
    } else {
        dir.join(format!("{target}.toml"))
    }
}

fn run(args: RunArgs) -> Result<bool, LabError> {
    let mut targets = args.targets.clone();
    if args.all {
        targets.extend(registry().iter().map(|e| e.id.to_string()));
    }
    if targets.is_empty() {
        return Err(LabError::ConfigInvalid("nothing to run: give config files, experiment names or --all".into()));
    }
    let overrides = Overrides {
        seed: args.seed,
        trials: args.trials,
        horizon_blocks: args.horizon_blocks,
        schedule: args.schedule.clone(),
        out_dir: args.out_dir.clone(),
        confidence: args.confidence,
    };
    let mut all_pass = true;
    for t in &targets {
        let mut cfg = ExperimentConfig::load(&config_path(t, &args.configs))?;
        cfg.apply(&overrides)?;
        let outcome = run_config(&cfg)?;
        let files = write_artifacts(Path::new(&cfg.output.dir), &outcome, &cfg.to_text()?)?;
        println!("{}", outcome.line());
        for f in files {
            println!("  wrote {}", f.display());
        }
        all_pass &= outcome.pass;
    }
    Ok(all_pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => run(args),
        Cmd::Validate { files } => {
            let mut ok = true;
            for f in files {
                let p = Path::new(&f);
                let text = if p.is_file() { std::fs::read_to_string(p).map_err(|e| e.to_string()) } else { Ok(format!("preset = \"{f}\"\n")) };
                match text.map_err(LabError::ConfigInvalid).and_then(|t| validate_text(&t)) {
                    Ok(v) => {
                        println!("{f}: valid {}", v.kind);
                        for l in v.lines {
                            println!("  {l}");
                        }
                    }
                    Err(e) => {
                        println!("{f}: {e}");
                        ok = false;
                    }
                }
            }
            Ok(ok)
        }
        Cmd::List => {
            for e in registry() {
                println!("{:<24} criterion {:>2}  {}", e.id, e.criterion, e.claim);
            }
            Ok(true)
        }
        Cmd::Describe { id, configs } => match find(&id) {
            Some(e) => {
                println!("{} (criterion {})\n{}", e.id, e.criterion, e.claim);
                let p = configs.join(format!("{id}.toml"));
                if let Ok(text) = std::fs::read_to_string(&p) {
                    println!("\n{}:\n{}", p.display(), header(&text));
                }
                Ok(true)
            }
            None => Err(LabError::UnknownExperiment(id)),
        },
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
