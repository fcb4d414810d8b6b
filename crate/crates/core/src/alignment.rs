//! Distribution alignment of model predictions on unlabeled data.
//!
//! CSDA rescales a prediction `q` by the ratio of the labeled to the
//! unlabeled marginal of `q`'s own MAP class (with the labeled side
//! temperature-flattened), then renormalizes. Vanilla DA is the special
//! case using one class-agnostic marginal pair for every prediction.

use crate::prob::{self, ProbVec, ProbError};
use crate::tracker::ClassStats;

/// How the labeled marginal is flattened before entering the ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TemperatureMode {
    /// Per-class temperature `clamp(1 - labeled_conf[i], t_min, 1)`.
    Adaptive { t_min: f64 },
    /// One fixed temperature in (0, 1] for every class.
    Constant(f64),
}

/// An aligned label guess: the rescaled prediction, the MAP class of the
/// raw prediction that selected the marginal pair, and the raw prediction
/// itself.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedGuess {
    pub q_tilde: ProbVec,
    pub source_class: usize,
    pub raw: ProbVec,
}

/// Class-specific distribution alignment with the adaptive temperature.
pub fn align_csda(
    q: &ProbVec,
    stats: &ClassStats,
    eps: f64,
    t_min: f64,
) -> Result<AlignedGuess, ProbError> {
    align_csda_with(q, stats, eps, TemperatureMode::Adaptive { t_min })
}

/// Class-specific distribution alignment with an explicit temperature mode.
pub fn align_csda_with(
    q: &ProbVec,
    stats: &ClassStats,
    eps: f64,
    temperature: TemperatureMode,
) -> Result<AlignedGuess, ProbError> {
    if q.dim() != stats.n() {
        return Err(ProbError::DimensionMismatch {
            left: q.dim(),
            right: stats.n(),
        });
    }
    let source_class = prob::argmax_class(q);
    let labeled = match temperature {
        TemperatureMode::Adaptive { t_min } => stats.scaled_labeled_marginal(source_class, t_min),
        TemperatureMode::Constant(t) => prob::temp_scale(stats.labeled_marginal(source_class), t)?,
    };
    let ratio = prob::hadamard_div(&labeled, stats.unlabeled_marginal(source_class), eps)?;
    let product = prob::hadamard_mul(q, &ratio)?;
    Ok(AlignedGuess {
        q_tilde: prob::normalize(&product)?,
        source_class,
        raw: q.clone(),
    })
}

/// Vanilla distribution alignment over class-agnostic marginals.
pub fn align_da(
    q: &ProbVec,
    labeled_global: &ProbVec,
    unlabeled_global: &ProbVec,
    eps: f64,
) -> Result<ProbVec, ProbError> {
    let ratio = prob::hadamard_div(labeled_global, unlabeled_global, eps)?;
    let product = prob::hadamard_mul(q, &ratio)?;
    prob::normalize(&product)
}

/// Per-class Euclidean distances between the labeled and unlabeled
/// marginals, with their Frobenius aggregate (the Frobenius norm of the
/// matrix whose rows are the differences). Distances are computed on the
/// raw stored marginals, without temperature scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistances {
    pub per_class: Vec<f64>,
    pub frobenius: f64,
}

pub fn class_distance_matrix(stats: &ClassStats) -> ClassDistances {
    let mut per_class = Vec::with_capacity(stats.n());
    let mut total = 0.0;
    for i in 0..stats.n() {
        let sq: f64 = stats
            .labeled_marginal(i)
            .values()
            .iter()
            .zip(stats.unlabeled_marginal(i).values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        per_class.push(sq.sqrt());
        total += sq;
    }
    ClassDistances {
        per_class,
        frobenius: total.sqrt(),
    }
}
