//! Executes resolved configurations: one directory per sweep point, one
//! subdirectory per seed, a summary per point. Runs never share mutable
//! state, so seeds and sweep points parallelize freely.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use align_core::data::{self, Dataset, DatasetSplit};
use align_core::engine::{self, EvalSummary};
use align_core::model;
use align_core::report::{self, RunMetadata, RunResultJson};
use align_core::seeding::{derive_seed, stream};

use crate::config::{DataSource, RunConfig, SweepPoint};
use crate::CliError;

/// Environment variable overriding the output root: when set, the
/// config's `out` path is joined under it.
pub const OUT_ENV: &str = "ALIGN_LAB_OUT";

pub fn resolve_out_root(configured: &Path) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(root) => PathBuf::from(root).join(configured),
        None => configured.to_path_buf(),
    }
}

fn build_split(config: &RunConfig, seed: u64) -> Result<DatasetSplit, CliError> {
    let dataset: Dataset = match &config.source {
        DataSource::Synthetic(s) => {
            let spec = data::SynthSpec {
                n_classes: s.classes,
                dim: s.dim,
                priors: align_core::prob::ProbVec::new(s.priors.clone())
                    .map_err(|e| CliError::Config(format!("data.synthetic.priors: {e}")))?,
                mean_scale: s.mean_scale,
                noise_sigma: s.noise_sigma,
                total: s.total,
                seed: derive_seed(s.seed.wrapping_add(seed), stream::DATA),
            };
            data::gen_synthetic(&spec)?
        }
        DataSource::Csv(path) => data::load_csv(path)?,
    };
    let split = data::split(
        &dataset,
        config.labeled,
        config.val_per_class,
        config.test_per_class,
        derive_seed(seed, stream::SPLIT),
    )?;
    Ok(if config.reveal_unlabeled {
        split.reveal_unlabeled()
    } else {
        split
    })
}

/// Runs one seed of one point and writes its artifacts. Returns the final
/// test metrics for the summary.
fn run_one(
    config: &RunConfig,
    seed: u64,
    dir: &Path,
    echo: &BTreeMap<String, String>,
) -> Result<(EvalSummary, EvalSummary), CliError> {
    let started = Instant::now();
    let split = build_split(config, seed)?;
    let schedule = config.schedule(derive_seed(seed, stream::TRAIN));
    let out = engine::self_train(&split, &schedule, &config.vcq, &config.engine_options())?;

    fs::create_dir_all(dir)?;
    report::write_records_csv(dir.join("records.csv"), &out.records)?;
    report::write_diagnostics_csv(dir.join("diagnostics.csv"), &out.diagnostics)?;
    report::write_stats_log(dir.join("stats.jsonl"), &out.stats_log)?;
    report::write_trace(dir.join("trace.log"), &out.trace)?;
    model::save_two_stream(&out.model, dir.join("model.bin"))?;

    let result = RunResultJson {
        seed,
        final_test: out.final_test.clone(),
        final_val: out.final_val.clone(),
        epochs_run: out.records.len(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        config_echo: echo.clone(),
        metadata: RunMetadata::default(),
    };
    report::write_result_json(dir.join("result.json"), &result)?;
    Ok((out.final_test, result.final_val))
}

#[derive(Debug, Serialize)]
struct Aggregate {
    mean: f64,
    std: f64,
    per_seed: BTreeMap<String, f64>,
}

fn aggregate(values: &[(u64, f64)]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().map(|(_, v)| v).sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|(_, v)| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Aggregate {
        mean,
        std,
        per_seed: values
            .iter()
            .map(|(s, v)| (s.to_string(), *v))
            .collect(),
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    seeds: Vec<u64>,
    final_auc: Aggregate,
    final_mca: Aggregate,
}

/// Executes every (point, seed) job, up to `jobs` in parallel, and writes
/// one `summary.json` per point. Returns the list of run directories.
pub fn execute(
    points: &[SweepPoint],
    jobs: usize,
    seed_override: Option<u64>,
) -> Result<Vec<PathBuf>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;

    let mut tasks = Vec::new();
    for point in points {
        let out_root = resolve_out_root(&point.config.out);
        let point_dir = match &point.label {
            Some(label) => out_root.join(label),
            None => out_root,
        };
        let seeds = match seed_override {
            Some(s) => vec![s],
            None => point.config.seeds.clone(),
        };
        // Echo the point's exact configuration with the effective seeds,
        // so feeding the echo back reproduces this point bit for bit.
        let mut echo_config = point.config.clone();
        echo_config.seeds = seeds.clone();
        let echo = echo_config.echo();
        for seed in seeds {
            tasks.push((point_dir.clone(), point.config.clone(), seed, echo.clone()));
        }
    }

    let results: Vec<Result<(PathBuf, u64, EvalSummary), CliError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(point_dir, config, seed, echo)| {
                let dir = point_dir.join(format!("seed-{seed}"));
                let (test, _) = run_one(config, *seed, &dir, echo)?;
                Ok((point_dir.clone(), *seed, test))
            })
            .collect()
    });

    let mut by_point: BTreeMap<PathBuf, Vec<(u64, EvalSummary)>> = BTreeMap::new();
    for result in results {
        let (point_dir, seed, test) = result?;
        by_point.entry(point_dir).or_default().push((seed, test));
    }

    let mut dirs = Vec::new();
    for (point_dir, mut rows) in by_point {
        rows.sort_by_key(|(seed, _)| *seed);
        let summary = Summary {
            seeds: rows.iter().map(|(s, _)| *s).collect(),
            final_auc: aggregate(
                &rows.iter().map(|(s, t)| (*s, t.auc)).collect::<Vec<_>>(),
            ),
            final_mca: aggregate(
                &rows.iter().map(|(s, t)| (*s, t.mca)).collect::<Vec<_>>(),
            ),
        };
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serialize");
        text.push('\n');
        fs::write(point_dir.join("summary.json"), text)?;
        dirs.push(point_dir);
    }
    Ok(dirs)
}

/// Prints the fully resolved configuration of every point without
/// training. Output is written in one shot with errors ignored so a
/// closed pipe (`... | head`) is not a failure.
pub fn dry_run(points: &[SweepPoint], seed_override: Option<u64>) {
    use std::io::Write;
    let mut text = String::new();
    for point in points {
        let out_root = resolve_out_root(&point.config.out);
        let dir = match &point.label {
            Some(label) => out_root.join(label),
            None => out_root,
        };
        text.push_str(&format!("# run directory: {}\n", dir.display()));
        let mut config = point.config.clone();
        if let Some(s) = seed_override {
            config.seeds = vec![s];
        }
        for (key, value) in config.echo() {
            text.push_str(&format!("{key} = {value}\n"));
        }
        text.push('\n');
    }
    let _ = std::io::stdout().write_all(text.as_bytes());
}
