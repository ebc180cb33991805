//! Offline assessment of a recorded trace.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use safespec_core::semantics::{EpisodeTrace, PamReport, TraceError};
use safespec_core::TaskSpec;

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("{path}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("trace has no column for state variable `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: `{value}` is not a number")]
    BadValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Reads the columns named by the task's state variables, in the task's
/// order. Other columns are ignored.
pub fn read_trace(path: &Path, task: &TaskSpec) -> Result<EpisodeTrace, MonitorError> {
    let csv_err = |source| MonitorError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(String::from)
        .collect();
    let idx = task
        .state_vars()
        .iter()
        .map(|v| {
            header
                .iter()
                .position(|h| h == v)
                .ok_or_else(|| MonitorError::MissingColumn(v.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut states = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let state = idx
            .iter()
            .map(|j| {
                let cell = rec.get(*j).unwrap_or("");
                cell.parse::<f64>().map_err(|_| MonitorError::BadValue {
                    row: row + 1,
                    column: header[*j].clone(),
                    value: cell.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        states.push(state);
    }
    Ok(EpisodeTrace::new(states, idx.len())?)
}

pub fn monitor(task: &TaskSpec, trace: &EpisodeTrace) -> PamReport {
    PamReport::evaluate(task, trace)
}

fn bit(b: bool) -> u8 {
    u8::from(b)
}

/// Human-readable report followed by nothing else; see [`csv_row`].
pub fn render(task: &TaskSpec, trace: &EpisodeTrace, r: &PamReport) -> String {
    let mut out = String::new();
    writeln!(out, "task {} over {} steps", task.name(), trace.len()).unwrap();
    for (i, req) in task.requirements().iter().enumerate() {
        writeln!(
            out,
            "  {:<9} {:<6} {:<28} sigma = {}  time_avg = {:.4}",
            req.kind.keyword(),
            req.predicate.name,
            format!("{} >= 0", req.predicate.expr.display(task.state_vars())),
            bit(r.satisfied[i]),
            r.time_avg[i]
        )
        .unwrap();
    }
    writeln!(
        out,
        "sigma_S = {}  sigma_T = {}  sigma_avg = {:.4}  F = {:.4}",
        bit(r.safety),
        bit(r.target),
        r.comfort_avg,
        r.score
    )
    .unwrap();
    for (req, step) in &r.safety_violations {
        let p = &task.requirements()[*req].predicate;
        writeln!(
            out,
            "safety violation: {} ({} >= 0) first fails at step {step}",
            p.name,
            p.expr.display(task.state_vars())
        )
        .unwrap();
    }
    out
}

pub const CSV_HEADER: &str = "steps,sigma_safety,sigma_target,sigma_avg,pam";

pub fn csv_row(trace: &EpisodeTrace, r: &PamReport) -> String {
    format!(
        "{},{},{},{},{}",
        trace.len(),
        bit(r.safety),
        bit(r.target),
        r.comfort_avg,
        r.score
    )
}
