//! Probability-vector primitives: normalization, Hadamard product and
//! division, temperature scaling, and deterministic argmax.
//!
//! All arithmetic is plain `f64`. Operations are pure functions on
//! immutable inputs and safe to call concurrently.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for "entries sum to one" validation.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Default floor applied to denominators in [`hadamard_div`].
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("entry {index} is {value}, expected nonnegative")]
    NegativeEntry { index: usize, value: f64 },
    #[error("entry {index} is not finite")]
    NonFiniteEntry { index: usize },
    #[error("entries sum to {sum}, expected a positive sum")]
    ZeroSum { sum: f64 },
    #[error("entries sum to {sum}, expected 1 within {SUM_TOLERANCE}")]
    NotNormalized { sum: f64 },
    #[error("vector has {0} entries, need at least 2")]
    TooFewEntries(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("temperature {0} outside (0, 1]")]
    InvalidTemperature(f64),
}

/// Read-only access to the underlying entries, shared by [`ProbVec`] and
/// [`RawVec`] so Hadamard operations compose.
pub trait Values {
    fn values(&self) -> &[f64];

    fn dim(&self) -> usize {
        self.values().len()
    }
}

/// A vector of at least two nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVec {
    values: Vec<f64>,
}

impl ProbVec {
    /// Validates and wraps `values` as a probability vector.
    pub fn new(values: Vec<f64>) -> Result<Self, ProbError> {
        if values.len() < 2 {
            return Err(ProbError::TooFewEntries(values.len()));
        }
        check_nonnegative(&values)?;
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ProbError::NotNormalized { sum });
        }
        Ok(Self { values })
    }

    /// The uniform distribution over `n` classes.
    pub fn uniform(n: usize) -> Result<Self, ProbError> {
        if n < 2 {
            return Err(ProbError::TooFewEntries(n));
        }
        Ok(Self {
            values: vec![1.0 / n as f64; n],
        })
    }

    /// Point mass on `class`.
    pub fn one_hot(n: usize, class: usize) -> Result<Self, ProbError> {
        if n < 2 {
            return Err(ProbError::TooFewEntries(n));
        }
        assert!(class < n, "class {class} out of range for {n} classes");
        let mut values = vec![0.0; n];
        values[class] = 1.0;
        Ok(Self { values })
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Constructs without validation; caller guarantees the invariants.
    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        debug_assert!(values.len() >= 2);
        debug_assert!(values.iter().all(|v| *v >= 0.0));
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
        Self { values }
    }
}

impl Values for ProbVec {
    fn values(&self) -> &[f64] {
        &self.values
    }
}

impl TryFrom<Vec<f64>> for ProbVec {
    type Error = ProbError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<ProbVec> for Vec<f64> {
    fn from(p: ProbVec) -> Self {
        p.values
    }
}

/// A nonnegative vector that is not necessarily normalized, the
/// intermediate form produced by Hadamard operations. Nonnegativity is
/// enforced when the vector reaches [`normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawVec {
    values: Vec<f64>,
}

impl RawVec {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl Values for RawVec {
    fn values(&self) -> &[f64] {
        &self.values
    }
}

impl From<ProbVec> for RawVec {
    fn from(p: ProbVec) -> Self {
        Self { values: p.values }
    }
}

fn check_nonnegative(values: &[f64]) -> Result<(), ProbError> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(ProbError::NonFiniteEntry { index });
        }
        if value < 0.0 {
            return Err(ProbError::NegativeEntry { index, value });
        }
    }
    Ok(())
}

fn check_same_dim(left: usize, right: usize) -> Result<(), ProbError> {
    if left != right {
        return Err(ProbError::DimensionMismatch { left, right });
    }
    Ok(())
}

/// Divides every entry by the total so the result sums to one.
pub fn normalize(v: &RawVec) -> Result<ProbVec, ProbError> {
    if v.dim() < 2 {
        return Err(ProbError::TooFewEntries(v.dim()));
    }
    check_nonnegative(v.values())?;
    let sum: f64 = v.values().iter().sum();
    if sum <= 0.0 {
        return Err(ProbError::ZeroSum { sum });
    }
    Ok(ProbVec::from_normalized(
        v.values().iter().map(|x| x / sum).collect(),
    ))
}

/// Elementwise product.
pub fn hadamard_mul(a: &impl Values, b: &impl Values) -> Result<RawVec, ProbError> {
    check_same_dim(a.dim(), b.dim())?;
    Ok(RawVec::new(
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x * y)
            .collect(),
    ))
}

/// Elementwise division with the denominator floored at `eps`, keeping the
/// result finite when the denominator holds zeros.
pub fn hadamard_div(a: &impl Values, b: &impl Values, eps: f64) -> Result<RawVec, ProbError> {
    debug_assert!(eps > 0.0, "eps must be positive");
    check_same_dim(a.dim(), b.dim())?;
    Ok(RawVec::new(
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x / y.max(eps))
            .collect(),
    ))
}

/// Raises every entry to the power `t` (with `0^t = 0`) and renormalizes.
/// `t` must lie in (0, 1]; smaller `t` flattens the distribution toward
/// uniform while preserving the argmax.
pub fn temp_scale(p: &ProbVec, t: f64) -> Result<ProbVec, ProbError> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(ProbError::InvalidTemperature(t));
    }
    if t == 1.0 {
        return Ok(p.clone());
    }
    let powered = RawVec::new(p.values().iter().map(|x| x.powf(t)).collect());
    normalize(&powered)
}

/// Index of the largest entry; ties break to the smallest index.
pub fn argmax_class(p: &ProbVec) -> usize {
    argmax_slice(p.values())
}

/// Argmax with the same lowest-index tie-break, for raw score rows.
pub(crate) fn argmax_slice(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pv(values: &[f64]) -> ProbVec {
        ProbVec::new(values.to_vec()).unwrap()
    }

    #[test]
    fn normalize_symmetric_pair() {
        let out = normalize(&RawVec::new(vec![2.0, 2.0])).unwrap();
        assert_eq!(out.values(), &[0.5, 0.5]);
    }

    #[test]
    fn normalize_already_normalized_is_identity() {
        let out = normalize(&RawVec::new(vec![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(out.values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_hand_arithmetic() {
        // 0.375 / 1.375 = 3/11, 1.0 / 1.375 = 8/11
        let out = normalize(&RawVec::new(vec![0.375, 1.0])).unwrap();
        assert_abs_diff_eq!(out.get(0), 3.0 / 11.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.get(1), 8.0 / 11.0, epsilon = 1e-15);
    }

    #[test]
    fn normalize_rejects_zero_sum_and_negatives() {
        assert!(matches!(
            normalize(&RawVec::new(vec![0.0, 0.0])),
            Err(ProbError::ZeroSum { .. })
        ));
        assert!(matches!(
            normalize(&RawVec::new(vec![1.0, -0.5])),
            Err(ProbError::NegativeEntry { index: 1, .. })
        ));
    }

    #[test]
    fn hadamard_mul_examples() {
        let out = hadamard_mul(&pv(&[0.5, 0.5]), &pv(&[0.5, 0.5])).unwrap();
        assert_eq!(out.values(), &[0.25, 0.25]);

        let out = hadamard_mul(&pv(&[1.0, 0.0]), &pv(&[0.3, 0.7])).unwrap();
        assert_eq!(out.values(), &[0.3, 0.0]);

        let out = hadamard_mul(&pv(&[0.6, 0.4]), &pv(&[0.5, 0.5])).unwrap();
        assert_abs_diff_eq!(out.values()[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(out.values()[1], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn hadamard_mul_dimension_mismatch() {
        let a = pv(&[0.5, 0.5]);
        let b = pv(&[0.4, 0.3, 0.3]);
        assert!(matches!(
            hadamard_mul(&a, &b),
            Err(ProbError::DimensionMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn hadamard_div_examples() {
        let out = hadamard_div(&pv(&[0.5, 0.5]), &pv(&[0.5, 0.5]), DEFAULT_EPS).unwrap();
        assert_eq!(out.values(), &[1.0, 1.0]);

        let out = hadamard_div(&pv(&[0.6, 0.4]), &pv(&[0.8, 0.2]), DEFAULT_EPS).unwrap();
        assert_abs_diff_eq!(out.values()[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(out.values()[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn hadamard_div_floors_zero_denominator() {
        let out = hadamard_div(&pv(&[0.5, 0.5]), &pv(&[0.0, 1.0]), 1e-8).unwrap();
        assert_eq!(out.values(), &[5e7, 0.5]);
    }

    #[test]
    fn temp_scale_identity_at_one() {
        let p = pv(&[0.7, 0.2, 0.1]);
        assert_eq!(temp_scale(&p, 1.0).unwrap(), p);
    }

    #[test]
    fn temp_scale_uniform_fixed_point() {
        let p = ProbVec::uniform(4).unwrap();
        let out = temp_scale(&p, 0.3).unwrap();
        for &v in out.values() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn temp_scale_square_root_case() {
        // Elementwise sqrt then renormalize, frozen to four decimals.
        let out = temp_scale(&pv(&[0.7, 0.2, 0.1]), 0.5).unwrap();
        assert_abs_diff_eq!(out.get(0), 0.5229, epsilon = 1e-4);
        assert_abs_diff_eq!(out.get(1), 0.2795, epsilon = 1e-4);
        assert_abs_diff_eq!(out.get(2), 0.1976, epsilon = 1e-4);
    }

    #[test]
    fn temp_scale_keeps_zero_entries_zero() {
        let out = temp_scale(&pv(&[0.0, 0.3, 0.7]), 0.25).unwrap();
        assert_eq!(out.get(0), 0.0);
    }

    #[test]
    fn temp_scale_rejects_bad_temperature() {
        let p = pv(&[0.5, 0.5]);
        assert!(matches!(
            temp_scale(&p, 0.0),
            Err(ProbError::InvalidTemperature(_))
        ));
        assert!(matches!(
            temp_scale(&p, 1.5),
            Err(ProbError::InvalidTemperature(_))
        ));
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_class(&pv(&[0.1, 0.9])), 1);
        assert_eq!(argmax_class(&pv(&[0.5, 0.5])), 0);
        let aligned = normalize(&RawVec::new(vec![0.375, 1.0])).unwrap();
        assert_eq!(argmax_class(&aligned), 1);
    }

    #[test]
    fn serde_round_trip_validates() {
        let p = pv(&[0.25, 0.75]);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "[0.25,0.75]");
        let back: ProbVec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<ProbVec>("[0.9,0.9]").is_err());
    }

    fn arb_raw(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..10.0, n..=n)
            .prop_filter("needs positive sum", |v| v.iter().sum::<f64>() > 1e-6)
    }

    fn arb_prob(n: usize) -> impl Strategy<Value = ProbVec> {
        arb_raw(n).prop_map(|v| normalize(&RawVec::new(v)).unwrap())
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in arb_raw(5)) {
            let once = normalize(&RawVec::new(v)).unwrap();
            let twice = normalize(&RawVec::from(once.clone())).unwrap();
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn temp_scale_preserves_argmax(p in arb_prob(6), t in 0.001f64..=1.0) {
            let scaled = temp_scale(&p, t).unwrap();
            prop_assert_eq!(argmax_class(&scaled), argmax_class(&p));
        }

        #[test]
        fn temp_scale_flattens(v in proptest::collection::vec(0.01f64..10.0, 5), t1 in 0.01f64..0.99, dt in 0.001f64..0.5) {
            // For strictly positive p and t1 < t2, the max/min spread at t1
            // is no larger than at t2.
            let p = normalize(&RawVec::new(v)).unwrap();
            let t2 = (t1 + dt).min(1.0);
            let spread = |q: &ProbVec| {
                let max = q.values().iter().cloned().fold(f64::MIN, f64::max);
                let min = q.values().iter().cloned().fold(f64::MAX, f64::min);
                max / min
            };
            let s1 = spread(&temp_scale(&p, t1).unwrap());
            let s2 = spread(&temp_scale(&p, t2).unwrap());
            prop_assert!(s1 <= s2 * (1.0 + 1e-12));
        }

        #[test]
        fn self_division_is_all_ones(v in proptest::collection::vec(0.01f64..10.0, 4)) {
            let p = normalize(&RawVec::new(v)).unwrap();
            prop_assume!(p.values().iter().all(|&x| x >= DEFAULT_EPS));
            let out = hadamard_div(&p, &p, DEFAULT_EPS).unwrap();
            for &x in out.values() {
                prop_assert!((x - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn mul_by_self_ratio_recovers_input(a in arb_prob(4), v in proptest::collection::vec(0.01f64..10.0, 4)) {
            let b = normalize(&RawVec::new(v)).unwrap();
            prop_assume!(b.values().iter().all(|&x| x >= DEFAULT_EPS));
            let ones = hadamard_div(&b, &b, DEFAULT_EPS).unwrap();
            let product = hadamard_mul(&a, &ones).unwrap();
            let out = normalize(&product).unwrap();
            for (x, y) in out.values().iter().zip(a.values()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
