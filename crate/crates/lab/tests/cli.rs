use std::path::PathBuf;
use std::process::{Command, Output};

fn cmdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmdp")).args(args).current_dir(root()).output().expect("spawn cmdp")
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn list_names_every_experiment() {
    let o = cmdp(&["list"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 11);
    assert!(text.contains("fr-defeat"));
}

#[test]
fn describe_prints_the_config_header() {
    let o = cmdp(&["describe", "puterman-trajectory"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("Loop-and-exit trajectory."));
    assert_eq!(cmdp(&["describe", "no-such"]).status.code(), Some(2));
}

#[test]
fn validate_presets_and_files() {
    let o = cmdp(&["validate", "faithful-b", "configs/mimic-attainment.toml"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("divergent.toml");
    std::fs::write(&bad, "name = \"bad\"\nk_steps = [[1, 1]]\ndelta = [\"1/2 / n^1/2\"]\nepsilon = [\"1/2 / n^1/4\"]\n").unwrap();
    let o = cmdp(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("hypothesis"), "{}", stdout(&o));
}

#[test]
fn run_writes_csv_jsonl_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = cmdp(&["run", "puterman-trajectory", "--seed", "5", "--out-dir", out]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("PASS criterion 11"));
    let csv = std::fs::read_to_string(dir.path().join("puterman-trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "experiment,n_or_N,analytic_lo,analytic_hi,mc_lo,mc_hi,exact,verdict");
    let jsonl = std::fs::read_to_string(dir.path().join("puterman-trajectory.jsonl")).unwrap();
    for line in jsonl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("kind").is_some());
    }
    let cfg = std::fs::read_to_string(dir.path().join("puterman-trajectory.config.toml")).unwrap();
    assert!(cfg.contains("seed = 5"));
}

#[test]
fn schedule_override_needs_a_chain() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmdp(&["run", "puterman-trajectory", "--schedule", "accel-mimic", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn skip_index_runs_on_an_override_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmdp(&["run", "skip-index", "--schedule", "accel-telescoping", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = std::fs::read_to_string(dir.path().join("skip-index.config.toml")).unwrap();
    assert!(cfg.contains("accel-telescoping"));
}
