//! Semi-supervised self-training with class-specific distribution alignment
//! (CSDA) and variable condition queues (VCQ).
//!
//! The crate is organized bottom-up:
//!
//! - [`prob`] — probability-vector arithmetic (normalization, Hadamard
//!   product/division, temperature scaling, argmax).
//! - [`tracker`] — EMA estimates of per-class marginal predictions and mean
//!   class confidences on the labeled and unlabeled streams.
//! - [`alignment`] — CSDA and vanilla distribution alignment over tracked
//!   marginals, plus class-wise distance diagnostics.
//! - [`vcq`] — per-class bounded FIFO queues with confidence-derived
//!   capacities and admission thresholds.
//! - [`model`] — a small one-hidden-layer classifier with manual backprop
//!   and the two-stream encoder scheme.
//! - [`data`] — synthetic long-tailed dataset generation, CSV ingestion,
//!   stratified splitting, and feature jitter.
//! - [`metrics`] — macro one-vs-rest AUC, mean class accuracy, confusion
//!   matrices.
//! - [`engine`] — the self-training loop tying everything together.
//! - [`report`] — run-output serialization (records CSV, diagnostics CSV,
//!   result JSON, stats log).
//! - [`seeding`] — sub-seed derivation so one run seed drives independent
//!   data/split/train streams.

pub mod alignment;
pub mod data;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod prob;
pub mod report;
pub mod seeding;
pub mod tracker;
pub mod vcq;
