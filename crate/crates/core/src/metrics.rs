//! Round reports, communication accounting and report emission.
//!
//! An uploaded class-weight vector costs `n * bytes_per_weight` plus a
//! 4-byte class id and a 4-byte client id. A cluster broadcast carries the
//! vector and its class id and is counted once per cluster, not per member.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ID_BYTES: u64 = 4;
pub const DEFAULT_BYTES_PER_WEIGHT: usize = 4;

/// Bytes uploaded per round: `M * (n * bpw + 8)`.
pub fn account_upload(clients: usize, clauses: usize, bytes_per_weight: usize) -> u64 {
    clients as u64 * (clauses as u64 * bytes_per_weight as u64 + 2 * ID_BYTES)
}

/// Bytes downloaded per round: `K * (n * bpw + 4)`.
pub fn account_download(clusters: usize, clauses: usize, bytes_per_weight: usize) -> u64 {
    clusters as u64 * (clauses as u64 * bytes_per_weight as u64 + ID_BYTES)
}

/// Global averaging uploads the whole `C x n` matrix plus the client id.
pub fn account_full_upload(
    clients: usize,
    classes: usize,
    clauses: usize,
    bytes_per_weight: usize,
) -> u64 {
    clients as u64 * ((classes * clauses * bytes_per_weight) as u64 + ID_BYTES)
}

/// Global averaging broadcasts one `C x n` matrix.
pub fn account_full_download(classes: usize, clauses: usize, bytes_per_weight: usize) -> u64 {
    (classes * clauses * bytes_per_weight) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based.
    pub round: usize,
    pub mean_accuracy: f64,
    pub per_client_accuracy: Vec<f64>,
    /// Cluster class -> member client ids, ascending.
    pub clusters: BTreeMap<usize, Vec<usize>>,
    pub upload_bytes: u64,
    pub download_bytes: u64,
    /// Aggregator iterations over received client updates.
    pub client_iterations: usize,
    /// Aggregator iterations over clusters when averaging.
    pub cluster_iterations: usize,
}

impl RoundReport {
    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }
}

/// Arithmetic mean, 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: u8,
    pub final_mean_accuracy: f64,
    pub cumulative_upload_bytes: u64,
    pub cumulative_download_bytes: u64,
    pub accuracy_trajectory: Vec<f64>,
}

impl ExperimentSummary {
    pub fn from_reports(experiment: u8, reports: &[RoundReport]) -> Self {
        ExperimentSummary {
            experiment,
            final_mean_accuracy: reports.last().map_or(0.0, |r| r.mean_accuracy),
            cumulative_upload_bytes: reports.iter().map(|r| r.upload_bytes).sum(),
            cumulative_download_bytes: reports.iter().map(|r| r.download_bytes).sum(),
            accuracy_trajectory: reports.iter().map(|r| r.mean_accuracy).collect(),
        }
    }
}

/// All rounds of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub experiment: u8,
    pub reports: Vec<RoundReport>,
}

impl ExperimentRun {
    pub fn summary(&self) -> ExperimentSummary {
        ExperimentSummary::from_reports(self.experiment, &self.reports)
    }
}

#[derive(Serialize)]
struct RoundLine<'a> {
    experiment: u8,
    #[serde(flatten)]
    report: &'a RoundReport,
}

pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ACCURACY_CSV: &str = "accuracy_vs_round.csv";
pub const COMM_CSV: &str = "comm_costs.csv";

/// Formats one JSON line for `rounds.jsonl`.
pub fn round_line(experiment: u8, report: &RoundReport) -> Result<String> {
    Ok(serde_json::to_string(&RoundLine { experiment, report })?)
}

/// Writes `rounds.jsonl`, `summary.json`, `accuracy_vs_round.csv` and
/// `comm_costs.csv` into `out_dir`, returning their paths.
pub fn emit_reports(runs: &[ExperimentRun], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths: Vec<PathBuf> = [ROUNDS_FILE, SUMMARY_FILE, ACCURACY_CSV, COMM_CSV]
        .iter()
        .map(|f| out_dir.join(f))
        .collect();

    let create = |path: &Path| {
        File::create(path)
            .map(BufWriter::new)
            .map_err(|e| Error::io(path, e))
    };

    let mut rounds = create(&paths[0])?;
    for run in runs {
        for report in &run.reports {
            writeln!(rounds, "{}", round_line(run.experiment, report)?)
                .map_err(|e| Error::io(&paths[0], e))?;
        }
    }
    rounds.flush().map_err(|e| Error::io(&paths[0], e))?;

    let summaries: Vec<ExperimentSummary> = runs.iter().map(ExperimentRun::summary).collect();
    let mut summary = serde_json::to_string_pretty(&summaries)?;
    summary.push('\n');
    fs::write(&paths[1], summary).map_err(|e| Error::io(&paths[1], e))?;

    let csv_writer = |path: &Path| -> Result<csv::Writer<File>> {
        Ok(csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?)
    };

    let mut acc = csv_writer(&paths[2])?;
    acc.write_record(["experiment", "round", "mean_accuracy"])?;
    let mut comm = csv_writer(&paths[3])?;
    comm.write_record(["experiment", "round", "upload_bytes", "download_bytes"])?;
    for run in runs {
        for r in &run.reports {
            acc.serialize((run.experiment, r.round, r.mean_accuracy))?;
            comm.serialize((run.experiment, r.round, r.upload_bytes, r.download_bytes))?;
        }
    }
    acc.flush().map_err(|e| Error::io(&paths[2], e))?;
    comm.flush().map_err(|e| Error::io(&paths[3], e))?;
    Ok(paths)
}
