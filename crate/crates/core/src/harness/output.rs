//! Result files: one CSV row per trial plus a JSON summary, each written to
//! a temporary file in the target directory and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{failure_label, ExperimentSpec, HarnessError, MultiRun, ResultTable, SingleRun};

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::IoFailure(format!("{}: {e}", path.display()))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.flush().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

pub fn single_csv(run: &SingleRun) -> Vec<u8> {
    let rows = run
        .records
        .iter()
        .map(|r| {
            vec![
                r.variant.clone(),
                r.needle.to_string(),
                r.direction.label().to_string(),
                r.config.label(),
                r.seed.to_string(),
                r.success.to_string(),
                failure_label(r.failure),
                r.steps.to_string(),
                format!("{:.2}", r.sim_time),
                r.detail.clone(),
            ]
        })
        .collect();
    let header = ["variant", "needle", "direction", "config", "seed", "success", "failure", "steps", "sim_time_s", "detail"];
    csv_bytes(&header, rows)
}

pub fn multi_csv(run: &MultiRun) -> Vec<u8> {
    let rows = run
        .records
        .iter()
        .map(|r| {
            vec![
                r.variant.clone(),
                r.needle.to_string(),
                format!("{:?}", r.start_face).to_lowercase(),
                r.seed.to_string(),
                r.handovers.to_string(),
                format!("{:.2}", r.mean_time),
                failure_label(r.failure),
                r.detail.clone(),
            ]
        })
        .collect();
    csv_bytes(&["variant", "needle", "start_face", "seed", "handovers", "mean_time_s", "failure", "detail"], rows)
}

#[derive(Serialize)]
struct SpecEcho<'a> {
    mode: String,
    needle: u8,
    direction: &'a str,
    trials_per_config: usize,
    n_max_handoffs: usize,
    multi_config: String,
    fault: String,
    policy: &'a str,
    seeds: &'a [u64],
    config: &'a super::ExperimentConfig,
}

impl<'a> SpecEcho<'a> {
    fn new(spec: &'a ExperimentSpec) -> Self {
        SpecEcho {
            mode: format!("{:?}", spec.mode),
            needle: spec.needle.get(),
            direction: spec.direction.label(),
            trials_per_config: spec.trials_per_config,
            n_max_handoffs: spec.n_max_handoffs,
            multi_config: format!("{:?}", spec.multi_config),
            fault: format!("{:?}", spec.fault),
            policy: spec.policy.name(),
            seeds: &spec.seeds,
            config: &spec.config,
        }
    }
}

#[derive(Serialize)]
struct SingleSummary<'a> {
    table: &'a ResultTable,
    spec: SpecEcho<'a>,
}

#[derive(Serialize)]
struct MultiSummary<'a> {
    mean_handovers: f64,
    runs: usize,
    reached_cap: usize,
    spec: SpecEcho<'a>,
}

fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.csv")), dir.join(format!("{stem}.json")))
}

fn json(value: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("summary serializes");
    bytes.push(b'\n');
    bytes
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`; returns their paths.
pub fn emit_single(dir: &Path, stem: &str, run: &SingleRun, spec: &ExperimentSpec) -> Result<(PathBuf, PathBuf), HarnessError> {
    let (csv_path, json_path) = paths(dir, stem);
    write_atomic(&csv_path, &single_csv(run))?;
    write_atomic(&json_path, &json(&SingleSummary { table: &run.table, spec: SpecEcho::new(spec) }))?;
    Ok((csv_path, json_path))
}

pub fn emit_multi(dir: &Path, stem: &str, run: &MultiRun, spec: &ExperimentSpec) -> Result<(PathBuf, PathBuf), HarnessError> {
    let (csv_path, json_path) = paths(dir, stem);
    write_atomic(&csv_path, &multi_csv(run))?;
    let summary = MultiSummary {
        mean_handovers: run.mean_handovers,
        runs: run.records.len(),
        reached_cap: run.records.iter().filter(|r| r.failure.is_none()).count(),
        spec: SpecEcho::new(spec),
    };
    write_atomic(&json_path, &json(&summary))?;
    Ok((csv_path, json_path))
}
