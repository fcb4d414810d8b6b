//! Run-output serialization: the per-epoch records CSV, the per-class
//! diagnostics CSV, the per-epoch statistics log (JSON lines), and the
//! final result JSON.
//!
//! Floats use Rust's shortest round-trip formatting, so identical runs
//! serialize byte-identically.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::engine::{DiagRow, EpochRecord, EvalSummary, StatsSnapshot};

/// Renders the records CSV: one row per epoch, columns in record order,
/// with the histogram packed as `;`-joined counts.
pub fn records_csv_string(records: &[EpochRecord]) -> String {
    let mut out = String::from(
        "epoch,eta,supervised_loss,unsupervised_loss,val_auc,val_mca,pseudo_label_histogram,frobenius_distance\n",
    );
    for r in records {
        let hist = r
            .pseudo_label_histogram
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.eta,
            r.supervised_loss,
            r.unsupervised_loss,
            r.val_auc,
            r.val_mca,
            hist,
            r.frobenius_distance
        ));
    }
    out
}

pub fn write_records_csv(path: impl AsRef<Path>, records: &[EpochRecord]) -> io::Result<()> {
    fs::write(path, records_csv_string(records))
}

/// Parses one records CSV back into epoch records (used by plot export).
pub fn read_records_csv(path: impl AsRef<Path>) -> io::Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("records line {}: bad {what}", i + 1),
            )
        };
        if fields.len() != 8 {
            return Err(bad("field count"));
        }
        let histogram = if fields[6].is_empty() {
            Vec::new()
        } else {
            fields[6]
                .split(';')
                .map(|t| t.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("histogram"))?
        };
        out.push(EpochRecord {
            epoch: fields[0].parse().map_err(|_| bad("epoch"))?,
            eta: fields[1].parse().map_err(|_| bad("eta"))?,
            supervised_loss: fields[2].parse().map_err(|_| bad("supervised_loss"))?,
            unsupervised_loss: fields[3].parse().map_err(|_| bad("unsupervised_loss"))?,
            val_auc: fields[4].parse().map_err(|_| bad("val_auc"))?,
            val_mca: fields[5].parse().map_err(|_| bad("val_mca"))?,
            pseudo_label_histogram: histogram,
            frobenius_distance: fields[7].parse().map_err(|_| bad("frobenius_distance"))?,
        });
    }
    Ok(out)
}

/// Renders the diagnostics CSV: one row per epoch per class carrying both
/// the alignment distances and the queue occupancy columns.
pub fn diagnostics_csv_string(rows: &[DiagRow]) -> String {
    let mut out = String::from("epoch,class,distance,frobenius_total,capacity,occupancy,tau\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.class, r.distance, r.frobenius_total, r.capacity, r.occupancy, r.tau
        ));
    }
    out
}

pub fn write_diagnostics_csv(path: impl AsRef<Path>, rows: &[DiagRow]) -> io::Result<()> {
    fs::write(path, diagnostics_csv_string(rows))
}

/// Writes the per-epoch statistics snapshots as JSON lines.
pub fn write_stats_log(path: impl AsRef<Path>, snapshots: &[StatsSnapshot]) -> io::Result<()> {
    let mut out = String::new();
    for snap in snapshots {
        out.push_str(&serde_json::to_string(snap).expect("stats serialize"));
        out.push('\n');
    }
    fs::write(path, out)
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[String]) -> io::Result<()> {
    let mut out = String::new();
    for line in trace {
        out.push_str(line);
        out.push('\n');
    }
    fs::write(path, out)
}

/// Final per-seed result: metrics, the exact configuration echo, and
/// fixed metadata describing metric conventions.
#[derive(Debug, Clone, Serialize)]
pub struct RunResultJson {
    pub seed: u64,
    pub final_test: EvalSummary,
    pub final_val: EvalSummary,
    pub epochs_run: usize,
    pub wall_time_secs: f64,
    pub config_echo: BTreeMap<String, String>,
    pub metadata: RunMetadata,
}

/// Conventions fixed by this implementation and recorded with every run.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    /// AUC averaging across classes.
    pub auc_averaging: &'static str,
    /// Which marginals enter the Frobenius distance diagnostic.
    pub frobenius_marginals: &'static str,
}

impl Default for RunMetadata {
    fn default() -> Self {
        Self {
            auc_averaging: "macro-unweighted",
            frobenius_marginals: "unscaled",
        }
    }
}

pub fn write_result_json(path: impl AsRef<Path>, result: &RunResultJson) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(result).expect("result serialize");
    text.push('\n');
    fs::write(path, text)
}
