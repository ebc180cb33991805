//! CSV outputs of a training run.
//!
//! Per seed `s` the runner writes `metrics_seed{s}.csv` (one row per epoch),
//! `gates_seed{s}.csv` (one row per gate and constraint),
//! `pam_seed{s}.csv` (one row per episode) and `timing_seed{s}.csv`
//! (wall-clock, kept apart so the other files are reproducible byte for
//! byte). `aggregate.csv` holds the across-seed mean and sample standard
//! deviation of the numeric metrics and is recomputable from the per-seed
//! files alone.

use std::fs::File;
use std::path::{Path, PathBuf};

use safespec_core::spi::{EpochRecord, Outcome};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{path}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {message}")]
    Content { path: PathBuf, message: String },
    #[error("no per-seed metrics files in {0}")]
    NoSeeds(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Floats in shortest round-trip form.
fn num(x: f64) -> String {
    format!("{x}")
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_seed{seed}.csv"))
}

pub fn gates_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("gates_seed{seed}.csv"))
}

pub fn pam_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("pam_seed{seed}.csv"))
}

pub fn timing_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("timing_seed{seed}.csv"))
}

pub fn aggregate_path(dir: &Path) -> PathBuf {
    dir.join("aggregate.csv")
}

pub fn metrics_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = ["epoch", "episodes", "steps", "return_mean", "return_std"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=k).map(|i| format!("cost_mean_{i}")));
    h.extend((1..=k).map(|i| format!("cost_bound_{i}")));
    h.extend(
        [
            "violation_rate",
            "pam_mean",
            "outcome",
            "accepted_round",
            "changed",
            "gates",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h.extend((1..=k).map(|i| format!("lambda_{i}")));
    h.push("model_holdout_nll".into());
    h
}

pub fn metrics_row(r: &EpochRecord, k: usize) -> Vec<String> {
    let mut row = vec![
        r.epoch.to_string(),
        r.episodes.to_string(),
        r.steps.to_string(),
        num(r.return_mean),
        num(r.return_std),
    ];
    row.extend(r.cost_mean.iter().map(|c| num(*c)));
    row.extend(r.rho_plus.iter().map(|c| num(*c)));
    let (outcome, round) = match r.outcome {
        Outcome::Unchanged => ("unchanged", String::new()),
        Outcome::Accepted { round } => ("accepted", round.to_string()),
        Outcome::Ungated => ("ungated", String::new()),
    };
    row.extend([
        num(r.violation_rate),
        num(r.pam_mean()),
        outcome.to_string(),
        round,
        r.changed.to_string(),
        r.gates.len().to_string(),
    ]);
    for i in 0..k {
        row.push(r.lambdas.get(i).map(|l| num(*l)).unwrap_or_default());
    }
    row.push(
        r.fit
            .as_ref()
            .and_then(|f| f.holdout_nll)
            .map(num)
            .unwrap_or_default(),
    );
    row
}

pub const GATES_HEADER: [&str; 13] = [
    "epoch",
    "round",
    "pass",
    "failure",
    "constraint",
    "n",
    "mean",
    "std",
    "delta",
    "upper_bound",
    "threshold",
    "constraint_pass",
    "effective_sample_size",
];

pub fn gate_rows(r: &EpochRecord) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for g in &r.gates {
        let d = &g.decision;
        let head = [
            r.epoch.to_string(),
            g.round.to_string(),
            d.pass.to_string(),
            d.failure
                .as_ref()
                .map(|f| f.to_string())
                .unwrap_or_default(),
        ];
        if d.estimates.is_empty() {
            let mut row = head.to_vec();
            row.resize(GATES_HEADER.len(), String::new());
            rows.push(row);
        }
        for e in &d.estimates {
            let mut row = head.to_vec();
            row.extend([
                (e.constraint + 1).to_string(),
                e.n.to_string(),
                num(e.mean),
                num(e.std),
                num(e.delta),
                num(e.upper_bound),
                num(e.threshold),
                e.pass.to_string(),
                num(e.effective_sample_size),
            ]);
            rows.push(row);
        }
    }
    rows
}

/// Writers for one seed's files, flushed after every epoch so an
/// interrupted run keeps what it finished.
pub struct SeedWriters {
    k: usize,
    metrics: (PathBuf, csv::Writer<File>),
    gates: (PathBuf, csv::Writer<File>),
    pam: (PathBuf, csv::Writer<File>),
    timing: (PathBuf, csv::Writer<File>),
}

fn open(path: PathBuf, header: &[String]) -> Result<(PathBuf, csv::Writer<File>), MetricsError> {
    let csv_err = |source| MetricsError::Csv {
        path: path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    Ok((path, w))
}

fn put(
    (path, w): &mut (PathBuf, csv::Writer<File>),
    rows: &[Vec<String>],
) -> Result<(), MetricsError> {
    let csv_err = |source| MetricsError::Csv {
        path: path.clone(),
        source,
    };
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

impl SeedWriters {
    pub fn create(dir: &Path, seed: u64, k: usize) -> Result<Self, MetricsError> {
        let strings = |h: &[&str]| h.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Ok(SeedWriters {
            k,
            metrics: open(metrics_path(dir, seed), &metrics_header(k))?,
            gates: open(gates_path(dir, seed), &strings(&GATES_HEADER))?,
            pam: open(pam_path(dir, seed), &strings(&["epoch", "episode", "pam"]))?,
            timing: open(timing_path(dir, seed), &strings(&["epoch", "seconds"]))?,
        })
    }

    pub fn record(&mut self, r: &EpochRecord, seconds: f64) -> Result<(), MetricsError> {
        put(&mut self.metrics, &[metrics_row(r, self.k)])?;
        put(&mut self.gates, &gate_rows(r))?;
        let pam: Vec<Vec<String>> = r
            .pam
            .iter()
            .enumerate()
            .map(|(i, f)| vec![r.epoch.to_string(), i.to_string(), num(*f)])
            .collect();
        put(&mut self.pam, &pam)?;
        put(&mut self.timing, &[vec![r.epoch.to_string(), num(seconds)]])
    }
}

/// Numeric columns of one metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    /// `rows[epoch][column]`.
    pub rows: Vec<Vec<f64>>,
}

impl MetricsTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Columns that are averaged across seeds.
pub fn aggregated_columns(header: &[String]) -> Vec<String> {
    header
        .iter()
        .filter(|c| {
            c.as_str() == "return_mean"
                || c.starts_with("cost_mean_")
                || c.starts_with("cost_bound_")
                || c.as_str() == "violation_rate"
                || c.as_str() == "pam_mean"
        })
        .cloned()
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<MetricsTable, MetricsError> {
    let csv_err = |source| MetricsError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(String::from)
        .collect();
    let columns = aggregated_columns(&header);
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| header.iter().position(|h| h == c).unwrap())
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = idx
            .iter()
            .map(|j| {
                rec[*j].parse::<f64>().map_err(|_| MetricsError::Content {
                    path: path.to_path_buf(),
                    message: format!("`{}` is not a number", &rec[*j]),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(MetricsTable { columns, rows })
}

/// Mean and sample standard deviation, summed in seed order.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregate CSV text over the epochs every table has.
pub fn aggregate(tables: &[MetricsTable]) -> String {
    let columns = &tables[0].columns;
    let epochs = tables.iter().map(|t| t.rows.len()).min().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["epoch".to_string(), "seeds".to_string()];
    for c in columns {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_std"));
    }
    w.write_record(&header).unwrap();
    for e in 0..epochs {
        let mut row = vec![e.to_string(), tables.len().to_string()];
        for j in 0..columns.len() {
            let vals: Vec<f64> = tables.iter().map(|t| t.rows[e][j]).collect();
            let (m, s) = mean_std(&vals);
            row.push(num(m));
            row.push(num(s));
        }
        w.write_record(&row).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Rebuilds the aggregate from the per-seed files of `seeds` in `dir`.
pub fn aggregate_dir(dir: &Path, seeds: &[u64]) -> Result<String, MetricsError> {
    if seeds.is_empty() {
        return Err(MetricsError::NoSeeds(dir.to_path_buf()));
    }
    let tables = seeds
        .iter()
        .map(|s| read_metrics(&metrics_path(dir, *s)))
        .collect::<Result<Vec<_>, _>>()?;
    if tables.iter().any(|t| t.columns != tables[0].columns) {
        return Err(MetricsError::Content {
            path: dir.to_path_buf(),
            message: "per-seed files have different columns".into(),
        });
    }
    Ok(aggregate(&tables))
}

/// Seeds with a metrics file in `dir`, ascending.
pub fn seeds_in(dir: &Path) -> Result<Vec<u64>, MetricsError> {
    let mut seeds: Vec<u64> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("metrics_seed")?
                .strip_suffix(".csv")?
                .parse()
                .ok()
        })
        .collect();
    seeds.sort_unstable();
    Ok(seeds)
}
