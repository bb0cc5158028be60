//! One experiment per checked claim. Each reads its parameters from an [`ExperimentConfig`].

use crate::{ExperimentConfig, LabError, Outcome};

mod analytic;
mod chains;
mod oracles;
mod strengthening;
mod transforms;

pub struct Experiment {
    pub id: &'static str,
    pub criterion: u8,
    pub claim: &'static str,
    pub run: fn(&ExperimentConfig) -> Result<Outcome, LabError>,
}

const REGISTRY: &[Experiment] = &[
    Experiment {
        id: "series-classification",
        criterion: 1,
        claim: "The lexicographic Bertrand rule classifies the loss and confusion series of the faithful schedule, and agrees with a condensation oracle on random log-power terms.",
        run: analytic::series_classification,
    },
    Experiment {
        id: "well-definedness",
        criterion: 2,
        claim: "Branch probabilities of the faithful schedule sum to at most 1 once n passes Tower(k+1), and the rationalized schedule stays within 2^-n above it.",
        run: analytic::well_definedness,
    },
    Experiment {
        id: "transform-equivalence",
        criterion: 3,
        claim: "Memoryless strategies on the step, total and mean encodings produce the same payoff sequences as their pulled-back counter strategies.",
        run: transforms::transform_equivalence,
    },
    Experiment {
        id: "mimic-attainment",
        criterion: 4,
        claim: "The mimicking counter strategy loses only through the escape edges, with probability one minus the survival product.",
        run: chains::mimic_attainment,
    },
    Experiment {
        id: "skip-index",
        criterion: 5,
        claim: "Skipping to block N_eps and then mimicking wins with probability at least 1 - eps.",
        run: chains::skip_index,
    },
    Experiment {
        id: "fr-defeat",
        criterion: 6,
        claim: "Finite-memory strategies with k modes survive a chain whose branching exceeds k+1 with probability at most the confusion product, which tends to 0.",
        run: chains::fr_defeat,
    },
    Experiment {
        id: "restart-almost-sure",
        criterion: 7,
        claim: "With restarts, the concatenated skip-then-mimic strategy restarts at least i times with probability at most 2^-i, while finite memory still loses.",
        run: chains::restart_almost_sure,
    },
    Experiment {
        id: "reward-implicit",
        criterion: 8,
        claim: "On reward-implicit chains the mimic's mean never dips below -1/n, while a wrong high choice forces a dip of at least 1/2 under padding.",
        run: strengthening::reward_implicit,
    },
    Experiment {
        id: "infinite-branching",
        criterion: 9,
        claim: "With infinitely many choices, the increasing-index strategy avoids the target with probability prod(1-2^-k) and any fixed index hits it almost surely.",
        run: analytic::infinite_branching,
    },
    Experiment {
        id: "strengthening",
        criterion: 10,
        claim: "Binary fans, rationalized probabilities and bounded corridors keep branch probabilities, block totals, depth determinism and exact values.",
        run: strengthening::strengthening,
    },
    Experiment {
        id: "puterman-trajectory",
        criterion: 11,
        claim: "Looping exp(exp k) times at s_k drives the running mean to 0 from below along the exit times.",
        run: analytic::puterman_trajectory,
    },
];

pub fn registry() -> &'static [Experiment] {
    REGISTRY
}

pub fn find(id: &str) -> Option<&'static Experiment> {
    REGISTRY.iter().find(|e| e.id == id)
}

pub fn run_config(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let e = find(&cfg.experiment).ok_or_else(|| LabError::UnknownExperiment(cfg.experiment.clone()))?;
    let mut out = (e.run)(cfg)?;
    out.criterion = e.criterion;
    Ok(out)
}

/// Shortest decimal prefix shared by both ends of an enclosure.
pub(crate) fn common_digits(lo: f64, hi: f64) -> String {
    let (a, b) = (format!("{lo:.15}"), format!("{hi:.15}"));
    let n = a.bytes().zip(b.bytes()).take_while(|(x, y)| x == y).count();
    a[..n].to_string()
}
