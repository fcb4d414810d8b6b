//! EMA tracking of per-class marginal predictions and mean class
//! confidences on the labeled and unlabeled streams.
//!
//! For each class `i` the tracker keeps a labeled and an unlabeled marginal
//! prediction vector plus the corresponding confidence (the marginal's own
//! `i`-th entry). Updates are convex EMA blends with momentum `omega`.
//! Classes absent from an unlabeled batch fall back to an estimate scaled
//! over from the labeled side, so minority classes never freeze.

use serde::Serialize;
use thiserror::Error;

use crate::prob::{self, ProbVec, RawVec, ProbError};

/// EMA momentum used throughout.
pub const DEFAULT_OMEGA: f64 = 0.95;

/// Lower clamp for the adaptive temperature `1 - labeled_conf`.
pub const DEFAULT_T_MIN: f64 = 0.05;

/// Floor guarding the confidence-ratio division in the absent-class
/// fallback.
pub const CONF_RATIO_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("omega {0} outside (0, 1)")]
    InvalidOmega(f64),
    #[error("class count {0} below 2")]
    InvalidClassCount(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("class {class} out of range for {n} classes")]
    ClassOutOfRange { class: usize, n: usize },
    #[error("confidence {value} for class {class} outside [0, 1]")]
    InvalidConfidence { class: usize, value: f64 },
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// One model prediction together with its class: the true label on the
/// labeled stream, the MAP class of the prediction on the unlabeled one.
#[derive(Debug, Clone)]
pub struct BatchPrediction {
    pub prediction: ProbVec,
    pub class: usize,
}

impl BatchPrediction {
    /// Pairs a prediction with its own MAP class.
    pub fn from_map(prediction: ProbVec) -> Self {
        let class = prob::argmax_class(&prediction);
        Self { prediction, class }
    }
}

/// Per-class EMA state. Serializes as the four arrays
/// `labeled_marginal`, `unlabeled_marginal`, `labeled_conf`,
/// `unlabeled_conf` for the per-epoch run log.
#[derive(Debug, Clone, Serialize)]
pub struct ClassStats {
    #[serde(skip)]
    n: usize,
    #[serde(skip)]
    omega: f64,
    labeled_marginal: Vec<ProbVec>,
    unlabeled_marginal: Vec<ProbVec>,
    labeled_conf: Vec<f64>,
    unlabeled_conf: Vec<f64>,
}

impl ClassStats {
    /// Uniform initialization: every marginal is `1/n` everywhere and every
    /// confidence is `1/n`, the maximum-entropy starting point.
    pub fn new(n: usize, omega: f64) -> Result<Self, TrackerError> {
        if n < 2 {
            return Err(TrackerError::InvalidClassCount(n));
        }
        if !(omega > 0.0 && omega < 1.0) {
            return Err(TrackerError::InvalidOmega(omega));
        }
        let uniform = ProbVec::uniform(n)?;
        Ok(Self {
            n,
            omega,
            labeled_marginal: vec![uniform.clone(); n],
            unlabeled_marginal: vec![uniform; n],
            labeled_conf: vec![1.0 / n as f64; n],
            unlabeled_conf: vec![1.0 / n as f64; n],
        })
    }

    /// Rebuilds a tracker from explicit state, validating dimensions and
    /// confidence ranges.
    pub fn from_parts(
        labeled_marginal: Vec<ProbVec>,
        unlabeled_marginal: Vec<ProbVec>,
        labeled_conf: Vec<f64>,
        unlabeled_conf: Vec<f64>,
        omega: f64,
    ) -> Result<Self, TrackerError> {
        let n = labeled_marginal.len();
        if n < 2 {
            return Err(TrackerError::InvalidClassCount(n));
        }
        if !(omega > 0.0 && omega < 1.0) {
            return Err(TrackerError::InvalidOmega(omega));
        }
        if unlabeled_marginal.len() != n || labeled_conf.len() != n || unlabeled_conf.len() != n {
            return Err(TrackerError::InvalidClassCount(n));
        }
        for m in labeled_marginal.iter().chain(unlabeled_marginal.iter()) {
            if m.dim() != n {
                return Err(ProbError::DimensionMismatch {
                    left: m.dim(),
                    right: n,
                }
                .into());
            }
        }
        for (class, &value) in labeled_conf.iter().chain(unlabeled_conf.iter()).enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(TrackerError::InvalidConfidence {
                    class: class % n,
                    value,
                });
            }
        }
        Ok(Self {
            n,
            omega,
            labeled_marginal,
            unlabeled_marginal,
            labeled_conf,
            unlabeled_conf,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn labeled_marginal(&self, class: usize) -> &ProbVec {
        &self.labeled_marginal[class]
    }

    pub fn unlabeled_marginal(&self, class: usize) -> &ProbVec {
        &self.unlabeled_marginal[class]
    }

    pub fn labeled_confs(&self) -> &[f64] {
        &self.labeled_conf
    }

    pub fn unlabeled_confs(&self) -> &[f64] {
        &self.unlabeled_conf
    }

    pub fn labeled_conf(&self, class: usize) -> f64 {
        self.labeled_conf[class]
    }

    pub fn unlabeled_conf(&self, class: usize) -> f64 {
        self.unlabeled_conf[class]
    }

    /// Groups a batch by class and returns the per-class mean prediction
    /// for classes with at least one member.
    fn batch_means(&self, batch: &[BatchPrediction]) -> Result<Vec<Option<ProbVec>>, TrackerError> {
        if batch.is_empty() {
            return Err(TrackerError::EmptyBatch);
        }
        let mut sums = vec![vec![0.0; self.n]; self.n];
        let mut counts = vec![0usize; self.n];
        for item in batch {
            if item.class >= self.n {
                return Err(TrackerError::ClassOutOfRange {
                    class: item.class,
                    n: self.n,
                });
            }
            if item.prediction.dim() != self.n {
                return Err(ProbError::DimensionMismatch {
                    left: item.prediction.dim(),
                    right: self.n,
                }
                .into());
            }
            for (s, &p) in sums[item.class].iter_mut().zip(item.prediction.values()) {
                *s += p;
            }
            counts[item.class] += 1;
        }
        let mut means = Vec::with_capacity(self.n);
        for (sum, &count) in sums.into_iter().zip(&counts) {
            if count == 0 {
                means.push(None);
            } else {
                means.push(Some(prob::normalize(&RawVec::new(sum))?));
            }
        }
        Ok(means)
    }

    fn ema_blend(&self, old: &ProbVec, mean: &ProbVec) -> Result<ProbVec, TrackerError> {
        let blended = RawVec::new(
            old.values()
                .iter()
                .zip(mean.values())
                .map(|(o, m)| o * self.omega + m * (1.0 - self.omega))
                .collect(),
        );
        Ok(prob::normalize(&blended)?)
    }

    /// EMA-updates the labeled marginal and confidence of every class
    /// present in the batch; classes absent from the batch are unchanged.
    /// Batch classes are true labels.
    pub fn update_labeled(&mut self, batch: &[BatchPrediction]) -> Result<(), TrackerError> {
        let means = self.batch_means(batch)?;
        for (i, mean) in means.iter().enumerate() {
            if let Some(mean) = mean {
                let updated = self.ema_blend(&self.labeled_marginal[i], mean)?;
                self.labeled_conf[i] = updated.get(i);
                self.labeled_marginal[i] = updated;
            }
        }
        Ok(())
    }

    /// EMA-updates unlabeled marginals/confidences for classes present in
    /// the batch (classes are MAP estimates). A class that is the MAP class
    /// of no batch member instead receives the scaled-over estimate
    /// `labeled_conf[i] * mean_k(prev_unlabeled_conf[k] / labeled_conf[k])`,
    /// and its marginal is the labeled marginal scaled by the same factor
    /// and renormalized. The factor uses the pre-update confidences.
    pub fn update_unlabeled(&mut self, batch: &[BatchPrediction]) -> Result<(), TrackerError> {
        let means = self.batch_means(batch)?;
        let factor = self.average_conversion_factor();
        for (i, mean) in means.iter().enumerate() {
            match mean {
                Some(mean) => {
                    let updated = self.ema_blend(&self.unlabeled_marginal[i], mean)?;
                    self.unlabeled_conf[i] = updated.get(i);
                    self.unlabeled_marginal[i] = updated;
                }
                None => {
                    // The estimate can exceed 1 when unlabeled confidences
                    // outrun labeled ones; clamp to keep it a confidence.
                    self.unlabeled_conf[i] = (self.labeled_conf[i] * factor).min(1.0);
                    let scaled = RawVec::new(
                        self.labeled_marginal[i]
                            .values()
                            .iter()
                            .map(|x| x * factor)
                            .collect(),
                    );
                    self.unlabeled_marginal[i] = prob::normalize(&scaled)?;
                }
            }
        }
        Ok(())
    }

    /// Mean over classes of `unlabeled_conf / labeled_conf`, the average
    /// factor converting a labeled confidence into an unlabeled one.
    fn average_conversion_factor(&self) -> f64 {
        let sum: f64 = self
            .unlabeled_conf
            .iter()
            .zip(&self.labeled_conf)
            .map(|(u, x)| u / x.max(CONF_RATIO_EPS))
            .sum();
        sum / self.n as f64
    }

    /// The labeled marginal flattened by the class-adaptive temperature
    /// `T = clamp(1 - labeled_conf[i], t_min, 1)`: confident (majority)
    /// classes are smoothed harder.
    pub fn scaled_labeled_marginal(&self, class: usize, t_min: f64) -> ProbVec {
        let t = (1.0 - self.labeled_conf[class]).clamp(t_min, 1.0);
        prob::temp_scale(&self.labeled_marginal[class], t)
            .expect("clamped temperature is always valid")
    }
}

/// Class-agnostic labeled/unlabeled marginal EMA, the state vanilla
/// distribution alignment runs on.
#[derive(Debug, Clone, Serialize)]
pub struct GlobalStats {
    labeled: ProbVec,
    unlabeled: ProbVec,
    #[serde(skip)]
    omega: f64,
}

impl GlobalStats {
    pub fn new(n: usize, omega: f64) -> Result<Self, TrackerError> {
        if n < 2 {
            return Err(TrackerError::InvalidClassCount(n));
        }
        if !(omega > 0.0 && omega < 1.0) {
            return Err(TrackerError::InvalidOmega(omega));
        }
        Ok(Self {
            labeled: ProbVec::uniform(n)?,
            unlabeled: ProbVec::uniform(n)?,
            omega,
        })
    }

    pub fn labeled(&self) -> &ProbVec {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &ProbVec {
        &self.unlabeled
    }

    pub fn update_labeled(&mut self, batch_mean: &ProbVec) -> Result<(), TrackerError> {
        self.labeled = blend(&self.labeled, batch_mean, self.omega)?;
        Ok(())
    }

    pub fn update_unlabeled(&mut self, batch_mean: &ProbVec) -> Result<(), TrackerError> {
        self.unlabeled = blend(&self.unlabeled, batch_mean, self.omega)?;
        Ok(())
    }
}

fn blend(old: &ProbVec, new: &ProbVec, omega: f64) -> Result<ProbVec, TrackerError> {
    let raw = RawVec::new(
        old.values()
            .iter()
            .zip(new.values())
            .map(|(o, m)| o * omega + m * (1.0 - omega))
            .collect(),
    );
    Ok(prob::normalize(&raw)?)
}

/// Mean prediction over a batch, the class-agnostic batch summary used by
/// [`GlobalStats`].
pub fn batch_mean(predictions: &[ProbVec]) -> Result<ProbVec, TrackerError> {
    if predictions.is_empty() {
        return Err(TrackerError::EmptyBatch);
    }
    let n = predictions[0].dim();
    let mut sum = vec![0.0; n];
    for p in predictions {
        if p.dim() != n {
            return Err(ProbError::DimensionMismatch {
                left: p.dim(),
                right: n,
            }
            .into());
        }
        for (s, &v) in sum.iter_mut().zip(p.values()) {
            *s += v;
        }
    }
    Ok(prob::normalize(&RawVec::new(sum))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pv(values: &[f64]) -> ProbVec {
        ProbVec::new(values.to_vec()).unwrap()
    }

    fn pred(values: &[f64], class: usize) -> BatchPrediction {
        BatchPrediction {
            prediction: pv(values),
            class,
        }
    }

    #[test]
    fn init_is_uniform() {
        let stats = ClassStats::new(2, DEFAULT_OMEGA).unwrap();
        assert_eq!(stats.labeled_marginal(0).values(), &[0.5, 0.5]);
        assert_eq!(stats.labeled_confs(), &[0.5, 0.5]);
        assert_eq!(stats.unlabeled_confs(), &[0.5, 0.5]);

        let stats = ClassStats::new(4, DEFAULT_OMEGA).unwrap();
        assert_eq!(stats.labeled_confs(), &[0.25; 4]);

        let stats = ClassStats::new(7, 0.95).unwrap();
        for i in 0..7 {
            for &v in stats.labeled_marginal(i).values() {
                assert_abs_diff_eq!(v, 1.0 / 7.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn init_rejects_bad_arguments() {
        assert!(matches!(
            ClassStats::new(1, 0.95),
            Err(TrackerError::InvalidClassCount(1))
        ));
        assert!(matches!(
            ClassStats::new(3, 1.0),
            Err(TrackerError::InvalidOmega(_))
        ));
        assert!(matches!(
            ClassStats::new(3, 0.0),
            Err(TrackerError::InvalidOmega(_))
        ));
    }

    #[test]
    fn labeled_update_fixed_point() {
        let mut stats = ClassStats::new(2, 0.95).unwrap();
        let marginal = stats.labeled_marginal(0).clone();
        stats
            .update_labeled(&[pred(marginal.values(), 0)])
            .unwrap();
        for (a, b) in stats.labeled_marginal(0).values().iter().zip(marginal.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn labeled_update_one_hot_observation() {
        // Scalar analogue: 0.5 * 0.95 + 1.0 * 0.05 = 0.525.
        let mut stats = ClassStats::new(2, 0.95).unwrap();
        stats.update_labeled(&[pred(&[1.0, 0.0], 0)]).unwrap();
        assert_abs_diff_eq!(stats.labeled_conf(0), 0.525, epsilon = 1e-12);
    }

    #[test]
    fn labeled_update_hand_arithmetic() {
        let mut stats = ClassStats::new(2, 0.95).unwrap();
        stats.update_labeled(&[pred(&[0.9, 0.1], 0)]).unwrap();
        assert_abs_diff_eq!(stats.labeled_marginal(0).get(0), 0.52, epsilon = 1e-12);
        assert_abs_diff_eq!(stats.labeled_marginal(0).get(1), 0.48, epsilon = 1e-12);
        assert_abs_diff_eq!(stats.labeled_conf(0), 0.52, epsilon = 1e-12);
        // Class 1 absent: untouched.
        assert_eq!(stats.labeled_marginal(1).values(), &[0.5, 0.5]);
    }

    #[test]
    fn labeled_update_rejects_empty_batch() {
        let mut stats = ClassStats::new(2, 0.95).unwrap();
        assert!(matches!(
            stats.update_labeled(&[]),
            Err(TrackerError::EmptyBatch)
        ));
    }

    #[test]
    fn unlabeled_fallback_worked_example() {
        // labeled conf [0.8, 0.6], previous unlabeled conf [0.4, 0.3],
        // class 1 absent: factor = (0.4/0.8 + 0.3/0.6)/2 = 0.5, so the new
        // unlabeled confidence of class 1 is 0.6 * 0.5 = 0.3.
        let mut stats = ClassStats::from_parts(
            vec![pv(&[0.8, 0.2]), pv(&[0.4, 0.6])],
            vec![pv(&[0.4, 0.6]), pv(&[0.7, 0.3])],
            vec![0.8, 0.6],
            vec![0.4, 0.3],
            0.95,
        )
        .unwrap();
        stats
            .update_unlabeled(&[pred(&[0.9, 0.1], 0)])
            .unwrap();
        assert_eq!(stats.unlabeled_conf(1), 0.3);
        // The fallback marginal is the labeled marginal rescaled by the
        // same factor then renormalized, i.e. the labeled marginal itself.
        for (a, b) in stats
            .unlabeled_marginal(1)
            .values()
            .iter()
            .zip(stats.labeled_marginal(1).values())
        {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn unlabeled_present_class_fixed_point() {
        let mut stats = ClassStats::new(3, 0.9).unwrap();
        let marginal = stats.unlabeled_marginal(1).clone();
        stats
            .update_unlabeled(&[BatchPrediction::from_map(pv(&[0.2, 0.6, 0.2]))])
            .unwrap();
        // Class 1 was present with batch mean [0.2, 0.6, 0.2], which is not
        // the fixed point; re-run with the marginal itself.
        let mut stats2 = ClassStats::new(3, 0.9).unwrap();
        stats2
            .update_unlabeled(&[pred(marginal.values(), 1)])
            .unwrap();
        for (a, b) in stats2.unlabeled_marginal(1).values().iter().zip(marginal.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        drop(stats);
    }

    #[test]
    fn scaled_marginal_identity_when_conf_zero() {
        let stats = ClassStats::from_parts(
            vec![pv(&[0.7, 0.3]), pv(&[0.5, 0.5])],
            vec![pv(&[0.5, 0.5]), pv(&[0.5, 0.5])],
            vec![0.0, 0.5],
            vec![0.5, 0.5],
            0.95,
        )
        .unwrap();
        // conf 0 gives T = 1: unchanged.
        assert_eq!(
            stats.scaled_labeled_marginal(0, DEFAULT_T_MIN).values(),
            &[0.7, 0.3]
        );
    }

    #[test]
    fn scaled_marginal_near_uniform_when_conf_one() {
        let stats = ClassStats::from_parts(
            vec![pv(&[0.9, 0.1, 0.0]), pv(&[1.0 / 3.0; 3]), pv(&[1.0 / 3.0; 3])],
            vec![pv(&[1.0 / 3.0; 3]); 3],
            vec![1.0, 0.5, 0.5],
            vec![0.5, 0.5, 0.5],
            0.95,
        )
        .unwrap();
        let out = stats.scaled_labeled_marginal(0, 0.05);
        // T clamps to 0.05: near-uniform over the support ([0.9, 0.1]
        // flattens to about [0.527, 0.473]), zeros stay zero.
        assert_eq!(out.get(2), 0.0);
        assert_abs_diff_eq!(out.get(0), 0.5274, epsilon = 1e-3);
        assert_abs_diff_eq!(out.get(1), 0.4726, epsilon = 1e-3);
        assert!(out.get(0) > out.get(1));
    }

    #[test]
    fn scaled_marginal_matches_temp_scale_at_half() {
        let stats = ClassStats::from_parts(
            vec![pv(&[0.7, 0.2, 0.1]), pv(&[1.0 / 3.0; 3]), pv(&[1.0 / 3.0; 3])],
            vec![pv(&[1.0 / 3.0; 3]); 3],
            vec![0.5, 0.5, 0.5],
            vec![0.5, 0.5, 0.5],
            0.95,
        )
        .unwrap();
        let out = stats.scaled_labeled_marginal(0, 0.05);
        assert_abs_diff_eq!(out.get(0), 0.5229, epsilon = 1e-4);
        assert_abs_diff_eq!(out.get(1), 0.2795, epsilon = 1e-4);
        assert_abs_diff_eq!(out.get(2), 0.1976, epsilon = 1e-4);
    }

    #[test]
    fn stats_serialize_as_four_arrays() {
        let stats = ClassStats::new(2, 0.95).unwrap();
        let json = serde_json::to_value(&stats).unwrap();
        let obj = json.as_object().unwrap();
        assert_eq!(obj.len(), 4);
        assert!(obj.contains_key("labeled_marginal"));
        assert!(obj.contains_key("unlabeled_marginal"));
        assert!(obj.contains_key("labeled_conf"));
        assert!(obj.contains_key("unlabeled_conf"));
    }

    fn arb_prob(n: usize) -> impl Strategy<Value = ProbVec> {
        proptest::collection::vec(0.01f64..1.0, n..=n)
            .prop_map(|v| prob::normalize(&RawVec::new(v)).unwrap())
    }

    proptest! {
        #[test]
        fn uniform_ratio_fallback_scales_labeled_conf(
            r in 0.01f64..1.0,
            cx in proptest::collection::vec(0.05f64..1.0, 3),
        ) {
            // When every unlabeled/labeled confidence ratio equals r, the
            // fallback for an absent class i returns r * labeled_conf[i].
            let cu: Vec<f64> = cx.iter().map(|x| r * x).collect();
            let marginals = vec![ProbVec::uniform(3).unwrap(); 3];
            let mut stats = ClassStats::from_parts(
                marginals.clone(),
                marginals,
                cx.clone(),
                cu,
                0.95,
            ).unwrap();
            // Batch contains classes 0 and 1; class 2 is absent.
            stats.update_unlabeled(&[
                pred(&[0.8, 0.1, 0.1], 0),
                pred(&[0.1, 0.8, 0.1], 1),
            ]).unwrap();
            prop_assert!((stats.unlabeled_conf(2) - r * cx[2]).abs() <= 1e-12);
        }

        #[test]
        fn ema_confinement(old in arb_prob(4), obs in arb_prob(4)) {
            // Confidence after an update lies between the previous value
            // and the observation.
            let mut stats = ClassStats::from_parts(
                vec![old.clone(); 4],
                vec![old.clone(); 4],
                (0..4).map(|i| old.get(i)).collect(),
                (0..4).map(|i| old.get(i)).collect(),
                0.95,
            ).unwrap();
            stats.update_labeled(&[pred(obs.values(), 1)]).unwrap();
            let prev = old.get(1);
            let seen = obs.get(1);
            let now = stats.labeled_conf(1);
            prop_assert!(now >= prev.min(seen) - 1e-12);
            prop_assert!(now <= prev.max(seen) + 1e-12);
        }

        #[test]
        fn marginals_stay_valid_and_consistent(
            batches in proptest::collection::vec(
                proptest::collection::vec((arb_prob(3), 0usize..3), 1..5),
                1..6,
            )
        ) {
            let mut stats = ClassStats::new(3, 0.95).unwrap();
            for batch in &batches {
                let preds: Vec<BatchPrediction> = batch
                    .iter()
                    .map(|(p, c)| pred(p.values(), *c))
                    .collect();
                stats.update_labeled(&preds).unwrap();
                let unl: Vec<BatchPrediction> = batch
                    .iter()
                    .map(|(p, _)| BatchPrediction::from_map(p.clone()))
                    .collect();
                stats.update_unlabeled(&unl).unwrap();
            }
            for i in 0..3 {
                // Stored marginals revalidate as probability vectors.
                prop_assert!(ProbVec::new(stats.labeled_marginal(i).values().to_vec()).is_ok());
                prop_assert!(ProbVec::new(stats.unlabeled_marginal(i).values().to_vec()).is_ok());
                // Confidence equals the marginal's own entry after labeled
                // updates.
                prop_assert_eq!(stats.labeled_conf(i), stats.labeled_marginal(i).get(i));
            }
        }

        #[test]
        fn fallback_stays_positive(
            cx in proptest::collection::vec(0.01f64..1.0, 3),
            cu in proptest::collection::vec(0.01f64..1.0, 3),
        ) {
            let marginals = vec![ProbVec::uniform(3).unwrap(); 3];
            let mut stats = ClassStats::from_parts(
                marginals.clone(),
                marginals,
                cx,
                cu,
                0.95,
            ).unwrap();
            stats.update_unlabeled(&[pred(&[0.8, 0.1, 0.1], 0)]).unwrap();
            prop_assert!(stats.unlabeled_conf(1) > 0.0);
            prop_assert!(stats.unlabeled_conf(2) > 0.0);
        }
    }
}
