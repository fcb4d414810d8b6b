//! Synthetic long-tailed dataset generation, CSV ingestion, stratified
//! splitting, and feature-space jitter augmentation.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::prob::ProbVec;

/// Label value marking a sample as unlabeled.
pub const UNLABELED: i64 = -1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unknown label {label}")]
    UnknownLabel { line: usize, label: i64 },
    #[error("dataset needs at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A feature matrix with integer labels; `-1` marks unlabeled rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<i64>,
    pub n_classes: usize,
    pub dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Recipe for a synthetic Gaussian-mixture dataset with long-tailed class
/// priors. Class means are seeded random unit vectors scaled by
/// `mean_scale`; samples add isotropic noise of standard deviation
/// `noise_sigma`. Imbalance (priors) and difficulty (`mean_scale` vs
/// `noise_sigma`) are therefore controlled independently.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub priors: ProbVec,
    pub mean_scale: f64,
    pub noise_sigma: f64,
    pub total: usize,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<(), DataError> {
        if self.n_classes < 2 {
            return Err(DataError::InvalidSpec(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.priors.dim() != self.n_classes {
            return Err(DataError::InvalidSpec(format!(
                "priors dimension {} does not match {} classes",
                self.priors.dim(),
                self.n_classes
            )));
        }
        if self.dim == 0 {
            return Err(DataError::InvalidSpec("feature dimension is zero".into()));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(DataError::InvalidSpec(format!(
                "noise sigma {} must be positive",
                self.noise_sigma
            )));
        }
        if !self.mean_scale.is_finite() || self.mean_scale < 0.0 {
            return Err(DataError::InvalidSpec(format!(
                "mean scale {} must be finite and nonnegative",
                self.mean_scale
            )));
        }
        if self.total < self.n_classes {
            return Err(DataError::InvalidSpec(format!(
                "total {} below class count {}",
                self.total, self.n_classes
            )));
        }
        Ok(())
    }
}

/// Splits `total` into per-class counts matching `priors` exactly by
/// largest-remainder rounding (ties to the lowest class index).
pub fn largest_remainder_counts(priors: &ProbVec, total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = priors.values().iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Generates the synthetic dataset; deterministic for a fixed seed.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let counts = largest_remainder_counts(&spec.priors, spec.total);

    // Class means: random directions of unit norm, scaled.
    let mut means = Vec::with_capacity(spec.n_classes);
    for _ in 0..spec.n_classes {
        let raw: Vec<f64> = (0..spec.dim)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        means.push(raw.into_iter().map(|x| spec.mean_scale * x / norm).collect::<Vec<f64>>());
    }

    let mut features = Vec::with_capacity(spec.total);
    let mut labels = Vec::with_capacity(spec.total);
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let row: Vec<f64> = means[class]
                .iter()
                .map(|m| {
                    m + spec.noise_sigma
                        * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                })
                .collect();
            features.push(row);
            labels.push(class as i64);
        }
    }
    Ok(Dataset {
        features,
        labels,
        n_classes: spec.n_classes,
        dim: spec.dim,
    })
}

/// Labeled / unlabeled / validation / test partition. The true labels of
/// the unlabeled pool are retained privately for oracle diagnostics and
/// the upper-bound configuration; they are not part of the training
/// interface.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub n_classes: usize,
    pub dim: usize,
    pub labeled_features: Vec<Vec<f64>>,
    pub labeled_labels: Vec<usize>,
    pub unlabeled_features: Vec<Vec<f64>>,
    hidden_unlabeled_labels: Vec<usize>,
    pub val_features: Vec<Vec<f64>>,
    pub val_labels: Vec<usize>,
    pub test_features: Vec<Vec<f64>>,
    pub test_labels: Vec<usize>,
}

impl DatasetSplit {
    /// Ground-truth labels of the unlabeled pool, for diagnostics only.
    pub fn oracle_unlabeled_labels(&self) -> &[usize] {
        &self.hidden_unlabeled_labels
    }

    /// The upper-bound configuration: every unlabeled sample rejoins the
    /// labeled set with its true label.
    pub fn reveal_unlabeled(&self) -> DatasetSplit {
        let mut out = self.clone();
        out.labeled_features
            .extend(self.unlabeled_features.iter().cloned());
        out.labeled_labels
            .extend(self.hidden_unlabeled_labels.iter().copied());
        out.unlabeled_features.clear();
        out.hidden_unlabeled_labels.clear();
        out
    }
}

/// Stratified split: `test_per_class` and `val_per_class` samples per class
/// first, then `labeled_count` labeled samples drawn from the remainder
/// proportionally to class frequency with a floor of one per class. All
/// leftover training samples become the unlabeled pool.
pub fn split(
    ds: &Dataset,
    labeled_count: usize,
    val_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<DatasetSplit, DataError> {
    let n = ds.n_classes;
    if n < 2 {
        return Err(DataError::TooFewClasses(n));
    }
    if labeled_count < n {
        return Err(DataError::InfeasibleSplit(format!(
            "labeled count {labeled_count} below class count {n}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (idx, &label) in ds.labels.iter().enumerate() {
        if label == UNLABELED {
            return Err(DataError::InfeasibleSplit(
                "cannot split a dataset that already contains unlabeled rows".into(),
            ));
        }
        by_class[label as usize].push(idx);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = Vec::new();
    let mut val = Vec::new();
    let mut pools: Vec<Vec<usize>> = Vec::with_capacity(n);
    for (class, indices) in by_class.iter_mut().enumerate() {
        let needed = test_per_class + val_per_class + 1;
        if indices.len() < needed {
            return Err(DataError::InfeasibleSplit(format!(
                "class {class} has {} samples, needs at least {needed}",
                indices.len()
            )));
        }
        indices.shuffle(&mut rng);
        test.extend(indices[..test_per_class].iter().copied());
        val.extend(indices[test_per_class..test_per_class + val_per_class].iter().copied());
        pools.push(indices[test_per_class + val_per_class..].to_vec());
    }

    let allocation = allocate_labeled(&pools, labeled_count)?;
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (pool, &take) in pools.iter().zip(&allocation) {
        labeled.extend(pool[..take].iter().copied());
        unlabeled.extend(pool[take..].iter().copied());
    }

    let gather = |idxs: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (
            idxs.iter().map(|&i| ds.features[i].clone()).collect(),
            idxs.iter().map(|&i| ds.labels[i] as usize).collect(),
        )
    };
    let (labeled_features, labeled_labels) = gather(&labeled);
    let (unlabeled_features, hidden_unlabeled_labels) = gather(&unlabeled);
    let (val_features, val_labels) = gather(&val);
    let (test_features, test_labels) = gather(&test);

    Ok(DatasetSplit {
        n_classes: n,
        dim: ds.dim,
        labeled_features,
        labeled_labels,
        unlabeled_features,
        hidden_unlabeled_labels,
        val_features,
        val_labels,
        test_features,
        test_labels,
    })
}

/// Splits `labeled_count` across class pools proportionally to pool size,
/// flooring at one per class and capping at the pool size.
fn allocate_labeled(pools: &[Vec<usize>], labeled_count: usize) -> Result<Vec<usize>, DataError> {
    let n = pools.len();
    let pool_total: usize = pools.iter().map(|p| p.len()).sum();
    if labeled_count > pool_total {
        return Err(DataError::InfeasibleSplit(format!(
            "labeled count {labeled_count} exceeds available pool of {pool_total}"
        )));
    }
    let quotas: Vec<f64> = pools
        .iter()
        .map(|p| labeled_count as f64 * p.len() as f64 / pool_total as f64)
        .collect();
    let mut alloc: Vec<usize> = quotas
        .iter()
        .zip(pools)
        .map(|(q, p)| (q.floor() as usize).clamp(1, p.len()))
        .collect();
    // Largest-remainder correction toward the exact total, respecting the
    // floor of 1 and each pool's size.
    loop {
        let assigned: usize = alloc.iter().sum();
        if assigned == labeled_count {
            break;
        }
        if assigned < labeled_count {
            let candidate = (0..n)
                .filter(|&i| alloc[i] < pools[i].len())
                .max_by(|&a, &b| {
                    let ra = quotas[a] - alloc[a] as f64;
                    let rb = quotas[b] - alloc[b] as f64;
                    ra.partial_cmp(&rb).unwrap().then(b.cmp(&a))
                });
            match candidate {
                Some(i) => alloc[i] += 1,
                None => {
                    return Err(DataError::InfeasibleSplit(
                        "cannot place all labeled samples".into(),
                    ))
                }
            }
        } else {
            let candidate = (0..n).filter(|&i| alloc[i] > 1).min_by(|&a, &b| {
                let ra = quotas[a] - alloc[a] as f64;
                let rb = quotas[b] - alloc[b] as f64;
                ra.partial_cmp(&rb).unwrap().then(a.cmp(&b))
            });
            match candidate {
                Some(i) => alloc[i] -= 1,
                None => {
                    return Err(DataError::InfeasibleSplit(
                        "labeled count below one per class".into(),
                    ))
                }
            }
        }
    }
    Ok(alloc)
}

/// Loads a dataset from CSV with header `f0,...,f{d-1},label`. Labels are
/// integers in `[0, n)` or `-1` for unlabeled rows; the class count is
/// inferred as `max(label) + 1`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    // lines() keeps a trailing \r from CRLF files.
    let columns: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if columns.len() < 2 || columns[columns.len() - 1] != "label" {
        return Err(DataError::Parse {
            line: 1,
            message: "header must be f0,...,f{d-1},label".into(),
        });
    }
    let dim = columns.len() - 1;
    for (i, col) in columns[..dim].iter().enumerate() {
        if *col != format!("f{i}") {
            return Err(DataError::Parse {
                line: 1,
                message: format!("unexpected header column {col:?}, expected \"f{i}\""),
            });
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut max_label: i64 = -1;
    for (zero_based, raw) in lines {
        let line = zero_based + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(DataError::RaggedRow {
                line,
                expected: dim + 1,
                found: fields.len(),
            });
        }
        let mut row = Vec::with_capacity(dim);
        for field in &fields[..dim] {
            let value: f64 = field.trim().parse().map_err(|e| DataError::Parse {
                line,
                message: format!("bad feature {field:?}: {e}"),
            })?;
            row.push(value);
        }
        let label: i64 = fields[dim].trim().parse().map_err(|e| DataError::Parse {
            line,
            message: format!("bad label {:?}: {e}", fields[dim]),
        })?;
        if label < UNLABELED {
            return Err(DataError::UnknownLabel { line, label });
        }
        max_label = max_label.max(label);
        features.push(row);
        labels.push(label);
    }
    // A file may legitimately label only class 0 (everything else
    // unlabeled); two classes is the smallest usable space.
    let n_classes = ((max_label + 1).max(2)) as usize;
    Ok(Dataset {
        features,
        labels,
        n_classes,
        dim,
    })
}

/// Writes a dataset in the same CSV layout `load_csv` reads. Floats use
/// Rust's shortest round-trip formatting, so a write/load cycle reproduces
/// them exactly.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = String::new();
    for i in 0..ds.dim {
        out.push_str(&format!("f{i},"));
    }
    out.push_str("label\n");
    for (row, label) in ds.features.iter().zip(&ds.labels) {
        for value in row {
            out.push_str(&format!("{value},"));
        }
        out.push_str(&format!("{label}\n"));
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma_aug` to each
/// coordinate. `sigma_aug = 0` returns the input unchanged without
/// consuming randomness.
pub fn jitter<R: Rng>(x: &[f64], sigma_aug: f64, rng: &mut R) -> Vec<f64> {
    debug_assert!(sigma_aug >= 0.0);
    if sigma_aug == 0.0 {
        return x.to_vec();
    }
    let noise = Normal::new(0.0, sigma_aug).expect("finite positive sigma");
    x.iter().map(|v| v + noise.sample(rng)).collect()
}
