//! Variable condition queue: per-class bounded FIFO queues of
//! pseudo-labeled samples.
//!
//! Capacities follow confidence-weighted resampling (`len_i ∝ (c_i^x)^γ`
//! within a total budget `L`) and admission uses the per-class threshold
//! `τ_i = min(c_i^u, δ)` with a strict `max(q̃) > τ_i` test.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use crate::data;
use crate::prob::{self, ProbVec};
use crate::tracker::ClassStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VcqError {
    #[error("total capacity {capacity} below class count {n}")]
    CapacityTooSmall { capacity: usize, n: usize },
    #[error("gamma {0} must be nonnegative")]
    InvalidGamma(f64),
    #[error("delta {0} outside (0, 1)")]
    InvalidDelta(f64),
    #[error("all labeled confidences are zero with gamma > 0")]
    AllZeroConfidence,
    #[error("no items stored")]
    EmptyQueue,
}

/// Queue hyperparameters: total budget `L`, resampling exponent `γ`, and
/// minimum enqueue probability `δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VcqConfig {
    pub capacity: usize,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for VcqConfig {
    fn default() -> Self {
        Self {
            capacity: 512,
            gamma: 1.0,
            delta: 0.25,
        }
    }
}

impl VcqConfig {
    pub fn validate(&self, n: usize) -> Result<(), VcqError> {
        if self.capacity < n {
            return Err(VcqError::CapacityTooSmall {
                capacity: self.capacity,
                n,
            });
        }
        if !(self.gamma >= 0.0) {
            return Err(VcqError::InvalidGamma(self.gamma));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(VcqError::InvalidDelta(self.delta));
        }
        Ok(())
    }
}

/// A stored sample: input features, the aligned soft pseudo-label, and the
/// epoch the item entered the queue.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueItem {
    pub features: Vec<f64>,
    pub soft_label: ProbVec,
    pub enqueue_epoch: usize,
}

/// Per-class capacity split: `floor(L * (c_i^x)^γ / Σ_k (c_k^x)^γ)`, with
/// `0^0 = 1` so `γ = 0` degrades to the uniform split `floor(L / n)`.
pub fn compute_lengths(stats: &ClassStats, cfg: &VcqConfig) -> Result<Vec<usize>, VcqError> {
    let weights: Vec<f64> = stats
        .labeled_confs()
        .iter()
        .map(|c| c.powf(cfg.gamma))
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(VcqError::AllZeroConfidence);
    }
    Ok(weights
        .iter()
        .map(|w| (cfg.capacity as f64 * w / total).floor() as usize)
        .collect())
}

/// Admission threshold for class `i`: `min(c_i^u, δ)`.
pub fn compute_threshold(stats: &ClassStats, class: usize, cfg: &VcqConfig) -> f64 {
    stats.unlabeled_conf(class).min(cfg.delta)
}

/// The queue set itself. Mutation is single-threaded; sampling takes an
/// explicit generator so runs replay exactly.
#[derive(Debug, Clone)]
pub struct Vcq {
    queues: Vec<VecDeque<QueueItem>>,
    capacities: Vec<usize>,
    thresholds: Vec<f64>,
}

impl Vcq {
    /// An empty queue set with zero capacities; call [`Vcq::refresh`]
    /// before offering items.
    pub fn new(n: usize) -> Self {
        Self {
            queues: (0..n).map(|_| VecDeque::new()).collect(),
            capacities: vec![0; n],
            thresholds: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.queues.len()
    }

    pub fn capacities(&self) -> &[usize] {
        &self.capacities
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Items currently stored per class.
    pub fn occupancy(&self) -> Vec<usize> {
        self.queues.iter().map(|q| q.len()).collect()
    }

    pub fn total_stored(&self) -> usize {
        self.queues.iter().map(|q| q.len()).sum()
    }

    /// Recomputes capacities and thresholds from the current statistics,
    /// truncating each queue from the oldest end until compliant.
    pub fn refresh(&mut self, stats: &ClassStats, cfg: &VcqConfig) -> Result<(), VcqError> {
        cfg.validate(self.n())?;
        self.capacities = compute_lengths(stats, cfg)?;
        for i in 0..self.n() {
            self.thresholds[i] = compute_threshold(stats, i, cfg);
            while self.queues[i].len() > self.capacities[i] {
                self.queues[i].pop_front();
            }
        }
        Ok(())
    }

    /// Offers an item: accepted iff `max(soft_label)` strictly exceeds the
    /// threshold of its MAP class and that class has nonzero capacity. On
    /// overflow the oldest item is evicted.
    pub fn offer(&mut self, item: QueueItem) -> bool {
        debug_assert_eq!(item.soft_label.dim(), self.n());
        let class = prob::argmax_class(&item.soft_label);
        let confidence = item.soft_label.get(class);
        if confidence <= self.thresholds[class] || self.capacities[class] == 0 {
            return false;
        }
        self.queues[class].push_back(item);
        if self.queues[class].len() > self.capacities[class] {
            self.queues[class].pop_front();
        }
        true
    }

    /// Draws `min(count, stored)` items uniformly at random without
    /// replacement across all queues, applying feature jitter of strength
    /// `sigma_aug` to each draw. Items remain stored.
    pub fn sample_batch<R: Rng>(
        &self,
        count: usize,
        rng: &mut R,
        sigma_aug: f64,
    ) -> Result<Vec<QueueItem>, VcqError> {
        let total = self.total_stored();
        if total == 0 {
            return Err(VcqError::EmptyQueue);
        }
        let k = count.min(total);
        let picks = rand::seq::index::sample(rng, total, k);
        let mut out = Vec::with_capacity(k);
        for flat in picks {
            let mut item = self.item_at(flat).clone();
            item.features = data::jitter(&item.features, sigma_aug, rng);
            out.push(item);
        }
        Ok(out)
    }

    /// Maps a flat index over all stored items (classes in order, each
    /// front to back) to the item.
    fn item_at(&self, mut flat: usize) -> &QueueItem {
        for queue in &self.queues {
            if flat < queue.len() {
                return &queue[flat];
            }
            flat -= queue.len();
        }
        unreachable!("flat index out of range")
    }

    /// Iterates stored items of one class, oldest first.
    pub fn iter_class(&self, class: usize) -> impl Iterator<Item = &QueueItem> {
        self.queues[class].iter()
    }
}
