//! The self-training loop: epoch scheduling, batch assembly, statistics
//! updates, alignment, queue maintenance, loss weighting, and evaluation.
//!
//! Epoch 1 trains the evaluated network on labeled data alone, then
//! initializes the statistics from a full labeled pass, aligns the whole
//! unlabeled pool, and fills the queue. Every later epoch interleaves
//! labeled batches with queue batches under the ramped loss weight, and
//! ends with: EMA coupling of the trailing encoder, full-set statistics
//! updates, re-alignment of the unlabeled pool, queue refresh, and a
//! sweep of offers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::alignment::{self, TemperatureMode};
use crate::data::DatasetSplit;
use crate::metrics::{self, EvalBatch, MetricsError};
use crate::model::{self, ModelError, TwoStream};
use crate::prob::{self, ProbError, ProbVec};
use crate::tracker::{BatchPrediction, ClassStats, GlobalStats, TrackerError};
use crate::vcq::{Vcq, VcqConfig, VcqError, QueueItem};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("labeled set is empty")]
    EmptyLabeledSet,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("epoch {epoch_t} outside 1..={epochs}")]
    OutOfRange { epoch_t: usize, epochs: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Vcq(#[from] VcqError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Epoch/batch/learning-rate plan. Epoch indices are 1-based and the
/// learning rate is multiplied by 0.1 from each decay epoch onward.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub base_lr: f64,
    pub decay_epochs: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 256,
            labeled_batch: 128,
            unlabeled_batch: 128,
            base_lr: 1e-4,
            decay_epochs: vec![50, 125],
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.epochs == 0 {
            return Err(EngineError::InvalidSchedule("epochs must be >= 1".into()));
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return Err(EngineError::InvalidSchedule(
                "batch sizes must be >= 1".into(),
            ));
        }
        if !(self.base_lr > 0.0) {
            return Err(EngineError::InvalidSchedule(format!(
                "base learning rate {} must be positive",
                self.base_lr
            )));
        }
        Ok(())
    }

    /// Learning rate at a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| epoch >= d).count();
        self.base_lr * 0.1f64.powi(decays as i32)
    }
}

/// How pseudo-label targets are produced — or `Supervised` to train on
/// labeled data alone, skipping the unlabeled machinery entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    Supervised,
    None,
    Da,
    Csda,
}

/// Knobs beyond the schedule and queue config.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineOptions {
    pub align: AlignMode,
    pub temperature: TemperatureMode,
    pub omega: f64,
    pub hidden: usize,
    pub eps: f64,
    pub t_min: f64,
    pub aug_sigma: f64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            align: AlignMode::Csda,
            temperature: TemperatureMode::Adaptive {
                t_min: crate::tracker::DEFAULT_T_MIN,
            },
            omega: crate::tracker::DEFAULT_OMEGA,
            hidden: 32,
            eps: crate::prob::DEFAULT_EPS,
            t_min: crate::tracker::DEFAULT_T_MIN,
            aug_sigma: 0.05,
        }
    }
}

impl EngineOptions {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(EngineError::InvalidOptions(format!(
                "omega {} outside (0, 1)",
                self.omega
            )));
        }
        if self.hidden == 0 {
            return Err(EngineError::InvalidOptions("hidden width is zero".into()));
        }
        if !(self.eps > 0.0) {
            return Err(EngineError::InvalidOptions("eps must be positive".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(EngineError::InvalidOptions(format!(
                "t_min {} outside (0, 1)",
                self.t_min
            )));
        }
        if !(self.aug_sigma >= 0.0) {
            return Err(EngineError::InvalidOptions(
                "augmentation sigma must be nonnegative".into(),
            ));
        }
        if let TemperatureMode::Constant(t) = self.temperature {
            if !(t > 0.0 && t <= 1.0) {
                return Err(EngineError::InvalidOptions(format!(
                    "constant temperature {t} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// One epoch of observability: losses are means over the epoch's steps,
/// the histogram counts queue admissions during the epoch's sweep, and
/// the Frobenius distance is taken after the epoch's statistics update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub eta: f64,
    pub supervised_loss: f64,
    pub unsupervised_loss: f64,
    pub val_auc: f64,
    pub val_mca: f64,
    pub pseudo_label_histogram: Vec<usize>,
    pub frobenius_distance: f64,
}

/// Per-class diagnostics row emitted once per epoch per class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagRow {
    pub epoch: usize,
    pub class: usize,
    pub distance: f64,
    pub frobenius_total: f64,
    pub capacity: usize,
    pub occupancy: usize,
    pub tau: f64,
}

/// Per-epoch snapshot of the tracked statistics for the run log.
#[derive(Debug, Clone, Serialize)]
pub struct StatsSnapshot {
    pub epoch: usize,
    #[serde(flatten)]
    pub stats: ClassStats,
}

/// Final evaluation bundle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub auc: f64,
    pub mca: f64,
    pub confusion: Vec<Vec<usize>>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SelfTrainOutput {
    pub model: TwoStream,
    pub records: Vec<EpochRecord>,
    pub final_test: EvalSummary,
    pub final_val: EvalSummary,
    pub diagnostics: Vec<DiagRow>,
    pub stats_log: Vec<StatsSnapshot>,
    pub trace: Vec<String>,
}

/// Linear ramp of the unsupervised loss weight: `epoch_t / epochs`.
pub fn eta(epoch_t: usize, epochs: usize) -> Result<f64, EngineError> {
    if epoch_t == 0 || epoch_t > epochs {
        return Err(EngineError::OutOfRange { epoch_t, epochs });
    }
    Ok(epoch_t as f64 / epochs as f64)
}

/// Scores a feature set with the evaluated network (`encoder2` + head).
fn predict_all(ts: &TwoStream, features: &[Vec<f64>]) -> Result<Vec<ProbVec>, EngineError> {
    features
        .iter()
        .map(|x| Ok(model::forward(&ts.encoder2, &ts.head, x)?))
        .collect()
}

/// AUC/MCA/confusion of the evaluated network on a labeled set.
pub fn evaluate(
    ts: &TwoStream,
    features: &[Vec<f64>],
    labels: &[usize],
) -> Result<EvalSummary, EngineError> {
    if features.is_empty() {
        return Err(EngineError::EmptyEvalSet);
    }
    let predictions = predict_all(ts, features)?;
    let batch = EvalBatch::new(predictions, labels.to_vec())?;
    Ok(EvalSummary {
        auc: metrics::auc_macro(&batch)?,
        mca: metrics::mca(&batch),
        confusion: metrics::confusion(&batch),
    })
}

/// Aligns the whole unlabeled pool under the given mode with frozen
/// statistics, returning the soft targets in pool order.
fn align_pool(
    predictions: &[ProbVec],
    mode: AlignMode,
    stats: &ClassStats,
    global: &GlobalStats,
    opts: &EngineOptions,
) -> Result<Vec<ProbVec>, EngineError> {
    let mut out = Vec::with_capacity(predictions.len());
    for q in predictions {
        let aligned = match mode {
            AlignMode::Supervised => unreachable!("supervised mode never aligns"),
            AlignMode::None => q.clone(),
            AlignMode::Da => alignment::align_da(q, global.labeled(), global.unlabeled(), opts.eps)?,
            AlignMode::Csda => {
                alignment::align_csda_with(q, stats, opts.eps, opts.temperature)?.q_tilde
            }
        };
        out.push(aligned);
    }
    Ok(out)
}

/// Runs the full self-training schedule over a data split.
pub fn self_train(
    data: &DatasetSplit,
    schedule: &TrainSchedule,
    vcq_cfg: &VcqConfig,
    opts: &EngineOptions,
) -> Result<SelfTrainOutput, EngineError> {
    schedule.validate()?;
    opts.validate()?;
    if data.labeled_features.is_empty() {
        return Err(EngineError::EmptyLabeledSet);
    }
    let n = data.n_classes;
    let dim = data.dim;
    vcq_cfg.validate(n)?;

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut ts = TwoStream::init(dim, opts.hidden, n, opts.omega, &mut rng);
    let mut stats = ClassStats::new(n, opts.omega)?;
    let mut global = GlobalStats::new(n, opts.omega)?;
    let mut vcq = Vcq::new(n);

    let mut records = Vec::with_capacity(schedule.epochs);
    let mut diagnostics = Vec::new();
    let mut stats_log = Vec::new();
    let mut trace = Vec::new();
    let mut last_val = None;

    let semi = opts.align != AlignMode::Supervised;

    for epoch in 1..=schedule.epochs {
        let eta_e = eta(epoch, schedule.epochs)?;
        let lr = schedule.lr_at(epoch);

        // ----- training steps -----
        let mut order: Vec<usize> = (0..data.labeled_features.len()).collect();
        order.shuffle(&mut rng);
        let mut sup_sum = 0.0;
        let mut unsup_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(schedule.labeled_batch) {
            let labeled_batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (data.labeled_features[i].as_slice(), data.labeled_labels[i]))
                .collect();
            let queue_batch = if semi && vcq.total_stored() > 0 {
                vcq.sample_batch(schedule.unlabeled_batch, &mut rng, opts.aug_sigma)?
            } else {
                Vec::new()
            };
            let unlabeled_batch: Vec<(&[f64], &ProbVec)> = queue_batch
                .iter()
                .map(|item| (item.features.as_slice(), &item.soft_label))
                .collect();

            // Score the labeled batch with the pre-step parameters for the
            // per-batch statistics update below.
            let batch_preds: Vec<BatchPrediction> = chunk
                .iter()
                .map(|&i| {
                    Ok(BatchPrediction {
                        prediction: model::forward(
                            &ts.encoder2,
                            &ts.head,
                            &data.labeled_features[i],
                        )?,
                        class: data.labeled_labels[i],
                    })
                })
                .collect::<Result<_, EngineError>>()?;

            let (loss, grads) = model::loss_and_grads(
                &ts.encoder2,
                &ts.head,
                &labeled_batch,
                &unlabeled_batch,
                eta_e,
            )?;
            model::sgd_step(&mut ts.encoder2, &mut ts.head, &grads, lr);

            stats.update_labeled(&batch_preds)?;
            let mean = crate::tracker::batch_mean(
                &batch_preds
                    .iter()
                    .map(|b| b.prediction.clone())
                    .collect::<Vec<_>>(),
            )?;
            global.update_labeled(&mean)?;

            sup_sum += loss.supervised;
            unsup_sum += loss.unsupervised;
            steps += 1;
            trace.push(format!(
                "epoch={epoch} step={steps} sup={} unsup={} lr={lr} queue_batch={}",
                loss.supervised,
                loss.unsupervised,
                unlabeled_batch.len()
            ));
        }

        // ----- epoch end -----
        if epoch >= 2 {
            model::ema_couple(&mut ts)?;
            trace.push(format!("epoch={epoch} ema_couple omega={}", ts.omega));
        }

        // Full labeled pass folds the epoch's state into the statistics.
        let labeled_preds = predict_all(&ts, &data.labeled_features)?;
        let full_batch: Vec<BatchPrediction> = labeled_preds
            .iter()
            .zip(&data.labeled_labels)
            .map(|(p, &y)| BatchPrediction {
                prediction: p.clone(),
                class: y,
            })
            .collect();
        stats.update_labeled(&full_batch)?;
        global.update_labeled(&crate::tracker::batch_mean(&labeled_preds)?)?;
        trace.push(format!("epoch={epoch} update_labeled_full"));

        let mut histogram = vec![0usize; n];
        let frobenius;
        if semi && !data.unlabeled_features.is_empty() {
            let pre = alignment::class_distance_matrix(&stats).frobenius;

            let unlabeled_preds = predict_all(&ts, &data.unlabeled_features)?;
            if epoch >= 2 {
                let map_batch: Vec<BatchPrediction> = unlabeled_preds
                    .iter()
                    .map(|p| BatchPrediction::from_map(p.clone()))
                    .collect();
                stats.update_unlabeled(&map_batch)?;
                global.update_unlabeled(&crate::tracker::batch_mean(&unlabeled_preds)?)?;
                trace.push(format!("epoch={epoch} update_unlabeled_full"));
            }
            let dists = alignment::class_distance_matrix(&stats);
            frobenius = dists.frobenius;
            trace.push(format!(
                "epoch={epoch} frobenius pre={pre} post={}",
                dists.frobenius
            ));

            let targets = align_pool(&unlabeled_preds, opts.align, &stats, &global, opts)?;
            trace.push(format!("epoch={epoch} align mode={:?}", opts.align));

            vcq.refresh(&stats, vcq_cfg)?;
            trace.push(format!(
                "epoch={epoch} vcq_refresh capacities={:?} taus={:?}",
                vcq.capacities(),
                vcq.thresholds()
            ));

            let mut accepted = 0usize;
            for (features, soft_label) in data.unlabeled_features.iter().zip(targets) {
                let class = prob::argmax_class(&soft_label);
                let stored = vcq.offer(QueueItem {
                    features: features.clone(),
                    soft_label,
                    enqueue_epoch: epoch,
                });
                if stored {
                    histogram[class] += 1;
                    accepted += 1;
                }
            }
            trace.push(format!(
                "epoch={epoch} sweep_offer offered={} accepted={accepted}",
                data.unlabeled_features.len()
            ));

            for (class, &d) in dists.per_class.iter().enumerate() {
                diagnostics.push(DiagRow {
                    epoch,
                    class,
                    distance: d,
                    frobenius_total: dists.frobenius,
                    capacity: vcq.capacities()[class],
                    occupancy: vcq.occupancy()[class],
                    tau: vcq.thresholds()[class],
                });
            }
        } else {
            let dists = alignment::class_distance_matrix(&stats);
            frobenius = dists.frobenius;
            for (class, &d) in dists.per_class.iter().enumerate() {
                diagnostics.push(DiagRow {
                    epoch,
                    class,
                    distance: d,
                    frobenius_total: dists.frobenius,
                    capacity: 0,
                    occupancy: 0,
                    tau: 0.0,
                });
            }
        }

        let val = evaluate(&ts, &data.val_features, &data.val_labels)?;
        trace.push(format!(
            "epoch={epoch} evaluate val_auc={} val_mca={}",
            val.auc, val.mca
        ));

        records.push(EpochRecord {
            epoch,
            eta: eta_e,
            supervised_loss: sup_sum / steps as f64,
            unsupervised_loss: unsup_sum / steps as f64,
            val_auc: val.auc,
            val_mca: val.mca,
            pseudo_label_histogram: histogram,
            frobenius_distance: frobenius,
        });
        last_val = Some(val);
        stats_log.push(StatsSnapshot {
            epoch,
            stats: stats.clone(),
        });
    }

    let final_test = evaluate(&ts, &data.test_features, &data.test_labels)?;
    Ok(SelfTrainOutput {
        model: ts,
        records,
        final_test,
        final_val: last_val.expect("at least one epoch ran"),
        diagnostics,
        stats_log,
        trace,
    })
}
