//! Plot-data export: turns a finished run directory (single run or a
//! multi-seed battery) into tidy CSVs any plotting tool can consume.

use std::fs;
use std::path::{Path, PathBuf};

use align_core::engine::EpochRecord;
use align_core::report::read_records_csv;

use crate::CliError;

/// Locates `(seed, records)` pairs: either `records.csv` directly in the
/// directory, or one per `seed-*/` subdirectory.
fn collect_records(dir: &Path) -> Result<Vec<(u64, Vec<EpochRecord>)>, CliError> {
    let direct = dir.join("records.csv");
    if direct.is_file() {
        let seed = read_seed(dir).unwrap_or(0);
        return Ok(vec![(seed, read_records_csv(&direct)?)]);
    }
    let mut found: Vec<(u64, PathBuf)> = Vec::new();
    if dir.is_dir() {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(tail) = name.strip_prefix("seed-") {
                let path = entry.path().join("records.csv");
                if let (Ok(seed), true) = (tail.parse::<u64>(), path.is_file()) {
                    found.push((seed, path));
                }
            }
        }
    }
    if found.is_empty() {
        return Err(CliError::Runtime(format!(
            "no records.csv under {}",
            dir.display()
        )));
    }
    found.sort_by_key(|(seed, _)| *seed);
    found
        .into_iter()
        .map(|(seed, path)| Ok((seed, read_records_csv(&path)?)))
        .collect()
}

fn read_seed(dir: &Path) -> Option<u64> {
    let text = fs::read_to_string(dir.join("result.json")).ok()?;
    let value: serde_json::Value = serde_json::from_str(&text).ok()?;
    value.get("seed")?.as_u64()
}

/// Writes `auc_vs_epoch.csv`, `frobenius_vs_epoch.csv`, and
/// `pseudo_histogram_vs_epoch.csv` into the run directory.
pub fn export_plots(dir: &Path) -> Result<(), CliError> {
    let batteries = collect_records(dir)?;

    let mut auc = String::from("seed,epoch,val_auc\n");
    let mut frobenius = String::from("seed,epoch,frobenius_distance\n");
    let mut histogram = String::from("seed,epoch,class,count\n");
    for (seed, records) in &batteries {
        for r in records {
            auc.push_str(&format!("{seed},{},{}\n", r.epoch, r.val_auc));
            frobenius.push_str(&format!("{seed},{},{}\n", r.epoch, r.frobenius_distance));
            for (class, count) in r.pseudo_label_histogram.iter().enumerate() {
                histogram.push_str(&format!("{seed},{},{class},{count}\n", r.epoch));
            }
        }
    }
    fs::write(dir.join("auc_vs_epoch.csv"), auc)?;
    fs::write(dir.join("frobenius_vs_epoch.csv"), frobenius)?;
    fs::write(dir.join("pseudo_histogram_vs_epoch.csv"), histogram)?;
    Ok(())
}
