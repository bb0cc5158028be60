use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cmdp_core::sim::EstimateReport;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::io_err;
use crate::LabError;

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub experiment: String,
    #[serde(rename = "n_or_N")]
    pub n_or_big_n: String,
    pub analytic_lo: Option<f64>,
    pub analytic_hi: Option<f64>,
    pub mc_lo: Option<f64>,
    pub mc_hi: Option<f64>,
    /// Exact value as a fraction, when one was computed.
    pub exact: Option<String>,
    pub verdict: String,
}

impl Row {
    pub fn new(experiment: &str, n: impl ToString, pass: bool) -> Self {
        Row {
            experiment: experiment.to_string(),
            n_or_big_n: n.to_string(),
            analytic_lo: None,
            analytic_hi: None,
            mc_lo: None,
            mc_hi: None,
            exact: None,
            verdict: verdict(pass).into(),
        }
    }

    pub fn analytic(mut self, lo: f64, hi: f64) -> Self {
        self.analytic_lo = Some(lo);
        self.analytic_hi = Some(hi);
        self
    }

    pub fn mc(mut self, r: &EstimateReport) -> Self {
        self.mc_lo = Some(r.lo);
        self.mc_hi = Some(r.hi);
        self
    }

    pub fn mc_bracket(mut self, lo: f64, hi: f64) -> Self {
        self.mc_lo = Some(lo);
        self.mc_hi = Some(hi);
        self
    }

    pub fn exact(mut self, x: impl ToString) -> Self {
        self.exact = Some(x.to_string());
        self
    }
}

pub fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "fail"
    }
}

/// Result of one experiment: table rows, extra JSON records and the acceptance verdict.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub experiment: String,
    pub criterion: u8,
    pub pass: bool,
    pub summary: String,
    pub rows: Vec<Row>,
    pub records: Vec<Value>,
}

impl Outcome {
    pub fn new(experiment: &str, criterion: u8) -> Self {
        Outcome { experiment: experiment.into(), criterion, pass: true, summary: String::new(), rows: Vec::new(), records: Vec::new() }
    }

    /// Adds a row and folds its verdict into the overall one.
    pub fn push(&mut self, row: Row) {
        self.pass &= row.verdict == "pass";
        self.rows.push(row);
    }

    pub fn record(&mut self, v: Value) {
        self.records.push(v);
    }

    pub fn estimate(&mut self, label: &str, r: &EstimateReport) {
        self.records.push(estimate_json(&self.experiment, label, r));
    }

    pub fn fail(&mut self, why: impl Into<String>) {
        self.pass = false;
        let why = why.into();
        if !self.summary.is_empty() {
            self.summary.push_str("; ");
        }
        self.summary.push_str(&why);
    }

    pub fn note(&mut self, s: impl Into<String>) {
        if !self.summary.is_empty() {
            self.summary.push_str("; ");
        }
        self.summary.push_str(&s.into());
    }

    pub fn line(&self) -> String {
        format!("{} criterion {} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.criterion, self.experiment, self.summary)
    }

    pub fn jsonl(&self) -> Result<String, LabError> {
        let mut out = String::new();
        for r in &self.rows {
            let mut v = serde_json::to_value(r)?;
            v["kind"] = json!("row");
            out.push_str(&serde_json::to_string(&v)?);
            out.push('\n');
        }
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        let done = json!({"kind": "verdict", "experiment": self.experiment, "pass": self.pass, "summary": self.summary});
        out.push_str(&serde_json::to_string(&done)?);
        out.push('\n');
        Ok(out)
    }

    pub fn csv(&self) -> Result<String, LabError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["experiment", "n_or_N", "analytic_lo", "analytic_hi", "mc_lo", "mc_hi", "exact", "verdict"])?;
        }
        let bytes = w.into_inner().map_err(|e| LabError::ConfigInvalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// EstimateReport as a JSON record with its field names.
pub fn estimate_json(experiment: &str, label: &str, r: &EstimateReport) -> Value {
    let c = &r.counts;
    json!({
        "kind": "estimate",
        "experiment": experiment,
        "label": label,
        "trials": c.trials,
        "cert_win": c.cert_win,
        "cert_lose": c.cert_lose,
        "unknown": c.unknown,
        "sinks": c.sinks,
        "dips": c.dips,
        "restarts": c.restarts,
        "steps": c.steps,
        "lo": r.lo,
        "hi": r.hi,
        "lose_lo": r.lose_lo,
        "lose_hi": r.lose_hi,
        "confidence": r.confidence,
        "seed": r.seed,
        "rng": r.rng,
        "wall_clock_s": r.wall_clock_s,
    })
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), LabError> {
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("out")));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// `<dir>/<experiment>.csv`, `.jsonl` and the resolved `.config.toml`.
pub fn write_artifacts(dir: &Path, outcome: &Outcome, resolved_config: &str) -> Result<Vec<PathBuf>, LabError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = [
        (dir.join(format!("{}.csv", outcome.experiment)), outcome.csv()?),
        (dir.join(format!("{}.jsonl", outcome.experiment)), outcome.jsonl()?),
        (dir.join(format!("{}.config.toml", outcome.experiment)), resolved_config.to_string()),
    ];
    for (p, text) in &files {
        write_atomic(p, text.as_bytes())?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_empty_cells() {
        let mut o = Outcome::new("demo", 0);
        o.push(Row::new("demo", 5, true).analytic(0.25, 0.5).exact("1/3"));
        let text = o.csv().unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "experiment,n_or_N,analytic_lo,analytic_hi,mc_lo,mc_hi,exact,verdict");
        assert_eq!(lines.next().unwrap(), "demo,5,0.25,0.5,,,1/3,pass");
        assert!(o.pass);
        o.push(Row::new("demo", 6, false));
        assert!(!o.pass);
    }

    #[test]
    fn jsonl_lines_parse() {
        let mut o = Outcome::new("demo", 0);
        o.push(Row::new("demo", 1, true));
        o.record(json!({"kind": "note"}));
        for line in o.jsonl().unwrap().lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            assert!(v["kind"].is_string());
        }
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
