//! Evaluation metrics: macro one-vs-rest AUC, mean class accuracy, and
//! confusion matrices.

use thiserror::Error;

use crate::prob::{self, ProbVec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty evaluation set")]
    EmptyEvalSet,
    #[error("scores and truth lengths differ: {scores} vs {truth}")]
    LengthMismatch { scores: usize, truth: usize },
    #[error("row {row} has {found} scores, expected {expected}")]
    RaggedScores {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("truth label {label} out of range for {n} classes")]
    ClassOutOfRange { label: usize, n: usize },
    #[error("no class has both a positive and a negative example")]
    NoEligibleClass,
}

/// A score matrix (one row per sample, one column per class) with true
/// labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBatch {
    scores: Vec<Vec<f64>>,
    truth: Vec<usize>,
    n: usize,
}

impl EvalBatch {
    /// Builds a batch from model predictions; rows are validated
    /// probability vectors.
    pub fn new(predictions: Vec<ProbVec>, truth: Vec<usize>) -> Result<Self, MetricsError> {
        let scores = predictions.into_iter().map(|p| p.into_values()).collect();
        Self::from_raw_scores(scores, truth)
    }

    /// Builds a batch from raw score rows (shape-checked only), for score
    /// matrices that are rankings rather than probabilities.
    pub fn from_raw_scores(scores: Vec<Vec<f64>>, truth: Vec<usize>) -> Result<Self, MetricsError> {
        if scores.is_empty() {
            return Err(MetricsError::EmptyEvalSet);
        }
        if scores.len() != truth.len() {
            return Err(MetricsError::LengthMismatch {
                scores: scores.len(),
                truth: truth.len(),
            });
        }
        let n = scores[0].len();
        for (row, s) in scores.iter().enumerate() {
            if s.len() != n {
                return Err(MetricsError::RaggedScores {
                    row,
                    expected: n,
                    found: s.len(),
                });
            }
        }
        for &label in &truth {
            if label >= n {
                return Err(MetricsError::ClassOutOfRange { label, n });
            }
        }
        Ok(Self { scores, truth, n })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.n
    }
}

/// One-vs-rest AUC of a single score column via rank statistics. Ties
/// contribute one half (the Mann-Whitney convention). Returns `None` when
/// the class lacks positives or negatives.
fn auc_one_class(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let p = positives.iter().filter(|&&b| b).count();
    let n = positives.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Walk tie groups assigning the average rank, which is always an exact
    // half-integer, so the rank sum stays exact in f64.
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks are 1-based: this group spans ranks start+1 ..= end.
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            if positives[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        start = end;
    }
    let numerator = rank_sum_pos - (p * (p + 1)) as f64 / 2.0;
    Some(numerator / (p as f64 * n as f64))
}

/// Unweighted mean of per-class one-vs-rest AUCs over every class with at
/// least one positive and one negative example.
pub fn auc_macro(e: &EvalBatch) -> Result<f64, MetricsError> {
    let per_class = auc_per_class(e);
    let eligible: Vec<f64> = per_class.into_iter().flatten().collect();
    if eligible.is_empty() {
        return Err(MetricsError::NoEligibleClass);
    }
    Ok(eligible.iter().sum::<f64>() / eligible.len() as f64)
}

/// Per-class AUCs; `None` marks classes without both positives and
/// negatives.
pub fn auc_per_class(e: &EvalBatch) -> Vec<Option<f64>> {
    (0..e.n)
        .map(|class| {
            let column: Vec<f64> = e.scores.iter().map(|row| row[class]).collect();
            let positives: Vec<bool> = e.truth.iter().map(|&t| t == class).collect();
            auc_one_class(&column, &positives)
        })
        .collect()
}

/// Mean class accuracy: the unweighted mean of per-class recall over
/// classes present in the truth. Predictions are row argmaxes with the
/// lowest-index tie-break.
pub fn mca(e: &EvalBatch) -> f64 {
    let mut correct = vec![0usize; e.n];
    let mut count = vec![0usize; e.n];
    for (row, &label) in e.scores.iter().zip(&e.truth) {
        count[label] += 1;
        if prob::argmax_slice(row) == label {
            correct[label] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0usize;
    for (c, t) in correct.iter().zip(&count) {
        if *t > 0 {
            sum += *c as f64 / *t as f64;
            present += 1;
        }
    }
    sum / present as f64
}

/// Confusion matrix indexed `[true][predicted]`.
pub fn confusion(e: &EvalBatch) -> Vec<Vec<usize>> {
    let mut matrix = vec![vec![0usize; e.n]; e.n];
    for (row, &label) in e.scores.iter().zip(&e.truth) {
        matrix[label][prob::argmax_slice(row)] += 1;
    }
    matrix
}

/// Mean class accuracy recomputed from a confusion matrix.
pub fn mca_from_confusion(matrix: &[Vec<usize>]) -> f64 {
    let mut sum = 0.0;
    let mut present = 0usize;
    for (i, row) in matrix.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total > 0 {
            sum += row[i] as f64 / total as f64;
            present += 1;
        }
    }
    sum / present as f64
}

/// Shannon entropy (nats) of a count histogram; zero when fewer than two
/// nonzero bins or when the histogram is empty.
pub fn histogram_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}
