//! A one-hidden-layer ReLU classifier with manual forward/backward passes,
//! plain SGD, and the two-stream encoder scheme: two encoder parameter
//! sets sharing one head, coupled by EMA.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::prob::ProbVec;

/// Clamp applied inside `ln` so cross entropy never returns infinity.
pub const LOG_CLAMP: f64 = 1e-12;

/// Magic string opening the binary parameter format.
pub const PARAMS_MAGIC: &[u8; 5] = b"ALAB1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input contains a non-finite value at index {0}")]
    NonFiniteInput(usize),
    #[error("encoder shapes differ: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },
    #[error("bad parameter file: {0}")]
    InvalidFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Encoder parameters: weight `(h × d)` and bias `(h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

/// Head parameters: weight `(n × h)` and bias `(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(feature_dim: usize, hidden: usize) -> Self {
        Self {
            weight: Mat::zeros(hidden, feature_dim),
            bias: vec![0.0; hidden],
        }
    }

    /// Symmetric uniform init with bound `sqrt(6 / (fan_in + fan_out))`;
    /// biases start at zero.
    pub fn init<R: Rng>(feature_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(feature_dim, hidden);
        init_uniform(&mut p.weight, feature_dim, hidden, rng);
        p
    }

    pub fn hidden(&self) -> usize {
        self.weight.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.cols()
    }

    fn shape(&self) -> (usize, usize) {
        (self.weight.rows(), self.weight.cols())
    }
}

impl HeadParams {
    pub fn zeros(hidden: usize, classes: usize) -> Self {
        Self {
            weight: Mat::zeros(classes, hidden),
            bias: vec![0.0; classes],
        }
    }

    pub fn init<R: Rng>(hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(hidden, classes);
        init_uniform(&mut p.weight, hidden, classes, rng);
        p
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }
}

fn init_uniform<R: Rng>(weight: &mut Mat, fan_in: usize, fan_out: usize, rng: &mut R) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in weight.data_mut() {
        *w = rng.random_range(-bound..=bound);
    }
}

/// Two encoder parameter sets with a shared head. `encoder2` and the head
/// are the trained (and evaluated) network; `encoder1` trails `encoder2`
/// by EMA with momentum `omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStream {
    pub encoder1: EncoderParams,
    pub encoder2: EncoderParams,
    pub head: HeadParams,
    pub omega: f64,
}

impl TwoStream {
    pub fn init<R: Rng>(
        feature_dim: usize,
        hidden: usize,
        classes: usize,
        omega: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            encoder1: EncoderParams::init(feature_dim, hidden, rng),
            encoder2: EncoderParams::init(feature_dim, hidden, rng),
            head: HeadParams::init(hidden, classes, rng),
            omega,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.encoder2.feature_dim(),
            self.encoder2.hidden(),
            self.head.classes(),
        )
    }
}

/// Gradients with the same shapes as the trained encoder and head.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub encoder: EncoderParams,
    pub head: HeadParams,
}

impl MlpGrads {
    pub fn zeros(feature_dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            encoder: EncoderParams::zeros(feature_dim, hidden),
            head: HeadParams::zeros(hidden, classes),
        }
    }
}

/// Loss components of one batch pair: `total = supervised +
/// eta * unsupervised`, each term a batch mean (empty batches contribute
/// zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub supervised: f64,
    pub unsupervised: f64,
}

fn check_input(x: &[f64], expected: usize) -> Result<(), ModelError> {
    if x.len() != expected {
        return Err(ModelError::DimensionMismatch {
            expected,
            got: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput(i));
    }
    Ok(())
}

/// Intermediate activations of one forward pass.
struct ForwardParts {
    pre_hidden: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn forward_parts(encoder: &EncoderParams, head: &HeadParams, x: &[f64]) -> ForwardParts {
    let h = encoder.hidden();
    let n = head.classes();
    let mut pre_hidden = vec![0.0; h];
    for j in 0..h {
        let mut z = encoder.bias[j];
        for (w, v) in encoder.weight.row(j).iter().zip(x) {
            z += w * v;
        }
        pre_hidden[j] = z;
    }
    let hidden: Vec<f64> = pre_hidden.iter().map(|z| z.max(0.0)).collect();
    let mut logits = vec![0.0; n];
    for k in 0..n {
        let mut z = head.bias[k];
        for (w, v) in head.weight.row(k).iter().zip(&hidden) {
            z += w * v;
        }
        logits[k] = z;
    }
    // Softmax with max subtraction for stability.
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= sum;
    }
    ForwardParts {
        pre_hidden,
        hidden,
        probs,
    }
}

/// Class posterior `softmax(W2 · relu(W1 x + b1) + b2)`.
pub fn forward(
    encoder: &EncoderParams,
    head: &HeadParams,
    x: &[f64],
) -> Result<ProbVec, ModelError> {
    check_input(x, encoder.feature_dim())?;
    let parts = forward_parts(encoder, head, x);
    Ok(ProbVec::new(parts.probs).expect("softmax output is a valid distribution"))
}

fn cross_entropy(target: &[f64], probs: &[f64]) -> f64 {
    target
        .iter()
        .zip(probs)
        .map(|(t, p)| {
            if *t == 0.0 {
                0.0
            } else {
                -t * p.max(LOG_CLAMP).ln()
            }
        })
        .sum()
}

/// Accumulates `scale *` the gradient of the cross entropy of one sample
/// into `grads`, given `d_logits = probs - target` already scaled.
fn accumulate_sample(
    encoder: &EncoderParams,
    head: &HeadParams,
    x: &[f64],
    parts: &ForwardParts,
    d_logits: &[f64],
    grads: &mut MlpGrads,
) {
    let h = encoder.hidden();
    let n = head.classes();
    // Head: dW2[k][j] += d_logits[k] * hidden[j]; db2[k] += d_logits[k].
    for k in 0..n {
        let dk = d_logits[k];
        if dk == 0.0 {
            continue;
        }
        let row = &mut grads.head.weight.data_mut()[k * h..(k + 1) * h];
        for (g, v) in row.iter_mut().zip(&parts.hidden) {
            *g += dk * v;
        }
        grads.head.bias[k] += dk;
    }
    // Backprop into the hidden layer through the ReLU.
    let mut d_hidden = vec![0.0; h];
    for k in 0..n {
        let dk = d_logits[k];
        if dk == 0.0 {
            continue;
        }
        for (dh, w) in d_hidden.iter_mut().zip(head.weight.row(k)) {
            *dh += dk * w;
        }
    }
    let d = encoder.feature_dim();
    for j in 0..h {
        if parts.pre_hidden[j] <= 0.0 {
            continue;
        }
        let dj = d_hidden[j];
        if dj == 0.0 {
            continue;
        }
        let row = &mut grads.encoder.weight.data_mut()[j * d..(j + 1) * d];
        for (g, v) in row.iter_mut().zip(x) {
            *g += dj * v;
        }
        grads.encoder.bias[j] += dj;
    }
}

/// Mean cross entropy over the labeled batch (hard targets) plus
/// `eta` times the mean cross entropy over the unlabeled batch (soft
/// targets), with exact gradients for every encoder and head parameter.
pub fn loss_and_grads(
    encoder: &EncoderParams,
    head: &HeadParams,
    labeled: &[(&[f64], usize)],
    unlabeled: &[(&[f64], &ProbVec)],
    eta: f64,
) -> Result<(LossBreakdown, MlpGrads), ModelError> {
    debug_assert!(eta >= 0.0);
    let d = encoder.feature_dim();
    let n = head.classes();
    let mut grads = MlpGrads::zeros(d, encoder.hidden(), n);

    let mut supervised = 0.0;
    if !labeled.is_empty() {
        let scale = 1.0 / labeled.len() as f64;
        for &(x, y) in labeled {
            check_input(x, d)?;
            if y >= n {
                return Err(ModelError::DimensionMismatch { expected: n, got: y });
            }
            let parts = forward_parts(encoder, head, x);
            let mut target = vec![0.0; n];
            target[y] = 1.0;
            supervised += scale * cross_entropy(&target, &parts.probs);
            let d_logits: Vec<f64> = parts
                .probs
                .iter()
                .zip(&target)
                .map(|(p, t)| scale * (p - t))
                .collect();
            accumulate_sample(encoder, head, x, &parts, &d_logits, &mut grads);
        }
    }

    let mut unsupervised = 0.0;
    if !unlabeled.is_empty() {
        let scale = 1.0 / unlabeled.len() as f64;
        for &(x, soft) in unlabeled {
            check_input(x, d)?;
            if soft.dim() != n {
                return Err(ModelError::DimensionMismatch {
                    expected: n,
                    got: soft.dim(),
                });
            }
            let parts = forward_parts(encoder, head, x);
            unsupervised += scale * cross_entropy(soft.values(), &parts.probs);
            let d_logits: Vec<f64> = parts
                .probs
                .iter()
                .zip(soft.values())
                .map(|(p, t)| eta * scale * (p - t))
                .collect();
            accumulate_sample(encoder, head, x, &parts, &d_logits, &mut grads);
        }
    }

    Ok((
        LossBreakdown {
            total: supervised + eta * unsupervised,
            supervised,
            unsupervised,
        },
        grads,
    ))
}

/// Plain gradient descent: `params -= lr * grads` elementwise.
pub fn sgd_step(encoder: &mut EncoderParams, head: &mut HeadParams, grads: &MlpGrads, lr: f64) {
    debug_assert!(lr > 0.0);
    for (w, g) in encoder
        .weight
        .data_mut()
        .iter_mut()
        .zip(grads.encoder.weight.data())
    {
        *w -= lr * g;
    }
    for (b, g) in encoder.bias.iter_mut().zip(&grads.encoder.bias) {
        *b -= lr * g;
    }
    for (w, g) in head
        .weight
        .data_mut()
        .iter_mut()
        .zip(grads.head.weight.data())
    {
        *w -= lr * g;
    }
    for (b, g) in head.bias.iter_mut().zip(&grads.head.bias) {
        *b -= lr * g;
    }
}

/// EMA coupling: `encoder1 <- omega * encoder1 + (1 - omega) * encoder2`;
/// `encoder2` and the head are untouched.
pub fn ema_couple(ts: &mut TwoStream) -> Result<(), ModelError> {
    if ts.encoder1.shape() != ts.encoder2.shape() {
        return Err(ModelError::ShapeMismatch {
            left: format!("{:?}", ts.encoder1.shape()),
            right: format!("{:?}", ts.encoder2.shape()),
        });
    }
    let omega = ts.omega;
    for (a, b) in ts
        .encoder1
        .weight
        .data_mut()
        .iter_mut()
        .zip(ts.encoder2.weight.data())
    {
        *a = *a * omega + b * (1.0 - omega);
    }
    for (a, b) in ts.encoder1.bias.iter_mut().zip(&ts.encoder2.bias) {
        *a = *a * omega + b * (1.0 - omega);
    }
    Ok(())
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a two-stream model: magic `ALAB1`, little-endian `u32`
/// counts `d, h, n`, then `f64` data in order encoder1 `(W1, b1)`,
/// encoder2 `(W1, b1)`, head `(W2, b2)`.
pub fn save_two_stream(ts: &TwoStream, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let (d, h, n) = ts.dims();
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    push_f64s(&mut out, ts.encoder1.weight.data());
    push_f64s(&mut out, &ts.encoder1.bias);
    push_f64s(&mut out, ts.encoder2.weight.data());
    push_f64s(&mut out, &ts.encoder2.bias);
    push_f64s(&mut out, ts.head.weight.data());
    push_f64s(&mut out, &ts.head.bias);
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Reads the format written by [`save_two_stream`]; `omega` is a run
/// parameter and is supplied by the caller.
pub fn load_two_stream(path: impl AsRef<Path>, omega: f64) -> Result<TwoStream, ModelError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 17 || &bytes[..5] != PARAMS_MAGIC {
        return Err(ModelError::InvalidFormat("missing ALAB1 header".into()));
    }
    let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let d = read_u32(5);
    let h = read_u32(9);
    let n = read_u32(13);
    let floats = 2 * (h * d + h) + n * h + n;
    let expected = 17 + 8 * floats;
    if bytes.len() != expected {
        return Err(ModelError::InvalidFormat(format!(
            "expected {expected} bytes for d={d} h={h} n={n}, found {}",
            bytes.len()
        )));
    }
    let mut at = 17;
    let mut take = |count: usize| -> Result<Vec<f64>, ModelError> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            if !v.is_finite() {
                return Err(ModelError::InvalidFormat("non-finite parameter".into()));
            }
            out.push(v);
            at += 8;
        }
        Ok(out)
    };
    let e1w = take(h * d)?;
    let e1b = take(h)?;
    let e2w = take(h * d)?;
    let e2b = take(h)?;
    let hw = take(n * h)?;
    let hb = take(n)?;
    Ok(TwoStream {
        encoder1: EncoderParams {
            weight: Mat::from_vec(h, d, e1w),
            bias: e1b,
        },
        encoder2: EncoderParams {
            weight: Mat::from_vec(h, d, e2w),
            bias: e2b,
        },
        head: HeadParams {
            weight: Mat::from_vec(n, h, hw),
            bias: hb,
        },
        omega,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng, d: usize, h: usize, n: usize) -> (EncoderParams, HeadParams) {
        (EncoderParams::init(d, h, rng), HeadParams::init(h, n, rng))
    }

    #[test]
    fn forward_zero_params_is_uniform() {
        let encoder = EncoderParams::zeros(3, 4);
        let head = HeadParams::zeros(4, 5);
        let out = forward(&encoder, &head, &[1.0, -2.0, 0.5]).unwrap();
        for &p in out.values() {
            assert_abs_diff_eq!(p, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn forward_is_shift_invariant_in_logits() {
        // Equal logits (t, t) give [0.5, 0.5] for any bias shift t.
        for t in [-30.0, 0.0, 12.5] {
            let encoder = EncoderParams::zeros(2, 3);
            let mut head = HeadParams::zeros(3, 2);
            head.bias = vec![t, t];
            let out = forward(&encoder, &head, &[0.3, 0.7]).unwrap();
            assert_abs_diff_eq!(out.get(0), 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(out.get(1), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn forward_matches_independent_reimplementation() {
        // Oracle: an unshifted softmax over explicitly assembled logits,
        // written as differently as practical from the library path.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let (encoder, head) = random_net(&mut rng, 4, 6, 3);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let out = forward(&encoder, &head, &x).unwrap();

            let hidden: Vec<f64> = (0..6)
                .map(|j| {
                    let z: f64 = (0..4).map(|i| encoder.weight.get(j, i) * x[i]).sum::<f64>()
                        + encoder.bias[j];
                    if z > 0.0 {
                        z
                    } else {
                        0.0
                    }
                })
                .collect();
            let logits: Vec<f64> = (0..3)
                .map(|k| {
                    (0..6).map(|j| head.weight.get(k, j) * hidden[j]).sum::<f64>() + head.bias[k]
                })
                .collect();
            let exps: Vec<f64> = logits.iter().map(|z| z.exp()).collect();
            let total: f64 = exps.iter().sum();
            for (a, e) in out.values().iter().zip(&exps) {
                assert_abs_diff_eq!(*a, e / total, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let encoder = EncoderParams::zeros(3, 4);
        let head = HeadParams::zeros(4, 2);
        assert!(matches!(
            forward(&encoder, &head, &[1.0, 2.0]),
            Err(ModelError::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(matches!(
            forward(&encoder, &head, &[1.0, f64::NAN, 0.0]),
            Err(ModelError::NonFiniteInput(1))
        ));
    }

    #[test]
    fn loss_zero_for_confident_correct_prediction() {
        // Large bias toward class 0 makes the prediction effectively
        // one-hot; the supervised loss collapses toward zero.
        let encoder = EncoderParams::zeros(2, 2);
        let mut head = HeadParams::zeros(2, 2);
        head.bias = vec![40.0, -40.0];
        let x = [0.1, 0.2];
        let (loss, _) = loss_and_grads(&encoder, &head, &[(&x, 0)], &[], 1.0).unwrap();
        assert!(loss.supervised < 1e-12);
        assert!(loss.total < 1e-12);
    }

    #[test]
    fn eta_zero_ignores_unlabeled_term_in_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (encoder, head) = random_net(&mut rng, 3, 4, 3);
        let x = [0.5, -0.5, 1.0];
        let u = [1.0, 0.0, -1.0];
        let soft = ProbVec::new(vec![0.2, 0.5, 0.3]).unwrap();
        let (with_unlabeled, grads_a) =
            loss_and_grads(&encoder, &head, &[(&x, 1)], &[(&u, &soft)], 0.0).unwrap();
        let (without, grads_b) = loss_and_grads(&encoder, &head, &[(&x, 1)], &[], 0.0).unwrap();
        assert_eq!(with_unlabeled.total, without.total);
        assert_eq!(with_unlabeled.supervised, without.supervised);
        // Gradients are untouched by the unlabeled batch at eta = 0.
        for (a, b) in grads_a
            .encoder
            .weight
            .data()
            .iter()
            .zip(grads_b.encoder.weight.data())
        {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_batches_contribute_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (encoder, head) = random_net(&mut rng, 3, 4, 3);
        let (loss, grads) = loss_and_grads(&encoder, &head, &[], &[], 0.7).unwrap();
        assert_eq!(loss.total, 0.0);
        assert_eq!(loss.supervised, 0.0);
        assert_eq!(loss.unsupervised, 0.0);
        assert!(grads.encoder.weight.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cross_entropy_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let (encoder, head) = random_net(&mut rng, 3, 4, 3);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let soft = ProbVec::new(raw.iter().map(|v| v / sum).collect()).unwrap();
            let (loss, _) =
                loss_and_grads(&encoder, &head, &[(&x, 2)], &[(&x, &soft)], 1.0).unwrap();
            assert!(loss.supervised >= 0.0);
            assert!(loss.unsupervised >= 0.0);
        }
    }

    /// Central finite differences around every parameter coordinate.
    fn finite_difference_check(
        encoder: &EncoderParams,
        head: &HeadParams,
        labeled: &[(&[f64], usize)],
        unlabeled: &[(&[f64], &ProbVec)],
        eta: f64,
    ) {
        const STEP: f64 = 1e-5;
        let (_, grads) = loss_and_grads(encoder, head, labeled, unlabeled, eta).unwrap();
        let eval = |enc: &EncoderParams, hd: &HeadParams| -> f64 {
            loss_and_grads(enc, hd, labeled, unlabeled, eta).unwrap().0.total
        };
        let mut check = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * STEP);
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-5 {
                let rel = (analytic - numeric).abs() / scale;
                assert!(
                    rel < 1e-4,
                    "relative error {rel} (analytic {analytic}, numeric {numeric})"
                );
            } else {
                assert!(
                    (analytic - numeric).abs() < 1e-8,
                    "absolute error {} for near-zero gradient",
                    (analytic - numeric).abs()
                );
            }
        };
        for idx in 0..encoder.weight.data().len() {
            let mut up = encoder.clone();
            up.weight.data_mut()[idx] += STEP;
            let mut down = encoder.clone();
            down.weight.data_mut()[idx] -= STEP;
            check(
                grads.encoder.weight.data()[idx],
                eval(&up, head),
                eval(&down, head),
            );
        }
        for idx in 0..encoder.bias.len() {
            let mut up = encoder.clone();
            up.bias[idx] += STEP;
            let mut down = encoder.clone();
            down.bias[idx] -= STEP;
            check(grads.encoder.bias[idx], eval(&up, head), eval(&down, head));
        }
        for idx in 0..head.weight.data().len() {
            let mut up = head.clone();
            up.weight.data_mut()[idx] += STEP;
            let mut down = head.clone();
            down.weight.data_mut()[idx] -= STEP;
            check(
                grads.head.weight.data()[idx],
                eval(encoder, &up),
                eval(encoder, &down),
            );
        }
        for idx in 0..head.bias.len() {
            let mut up = head.clone();
            up.bias[idx] += STEP;
            let mut down = head.clone();
            down.bias[idx] -= STEP;
            check(grads.head.bias[idx], eval(encoder, &up), eval(encoder, &down));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for round in 0..20 {
            let (encoder, head) = random_net(&mut rng, 3, 4, 3);
            let lx: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..3).map(|_| rng.random_range(-1.5..1.5)).collect())
                .collect();
            let labeled: Vec<(&[f64], usize)> = lx
                .iter()
                .enumerate()
                .map(|(i, x)| (x.as_slice(), i % 3))
                .collect();
            let ux: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..3).map(|_| rng.random_range(-1.5..1.5)).collect())
                .collect();
            let softs: Vec<ProbVec> = (0..2)
                .map(|_| {
                    let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
                    let sum: f64 = raw.iter().sum();
                    ProbVec::new(raw.iter().map(|v| v / sum).collect()).unwrap()
                })
                .collect();
            let unlabeled: Vec<(&[f64], &ProbVec)> = ux
                .iter()
                .zip(&softs)
                .map(|(x, s)| (x.as_slice(), s))
                .collect();
            let eta = [0.0, 0.5, 1.0][round % 3];
            finite_difference_check(&encoder, &head, &labeled, &unlabeled, eta);
        }
    }

    #[test]
    fn sgd_step_examples() {
        let mut encoder = EncoderParams::zeros(1, 1);
        *encoder.weight.get_mut(0, 0) = 1.0;
        let mut head = HeadParams::zeros(1, 2);
        let mut grads = MlpGrads::zeros(1, 1, 2);

        // Zero gradient: parameters unchanged.
        sgd_step(&mut encoder, &mut head, &grads, 0.5);
        assert_eq!(encoder.weight.get(0, 0), 1.0);

        // w = 1, g = 2, lr = 0.5 -> w = 0.
        *grads.encoder.weight.get_mut(0, 0) = 2.0;
        sgd_step(&mut encoder, &mut head, &grads, 0.5);
        assert_eq!(encoder.weight.get(0, 0), 0.0);
    }

    #[test]
    fn ema_couple_fixed_point_and_scalar_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let encoder = EncoderParams::init(2, 3, &mut rng);
        let head = HeadParams::init(3, 2, &mut rng);
        let mut ts = TwoStream {
            encoder1: encoder.clone(),
            encoder2: encoder.clone(),
            head,
            omega: 0.95,
        };
        ema_couple(&mut ts).unwrap();
        assert_eq!(ts.encoder1, ts.encoder2);

        // Scalar analogue: 0 * 0.95 + 1 * 0.05 = 0.05.
        let mut ts = TwoStream {
            encoder1: EncoderParams::zeros(1, 1),
            encoder2: EncoderParams {
                weight: Mat::from_vec(1, 1, vec![1.0]),
                bias: vec![1.0],
            },
            head: HeadParams::zeros(1, 2),
            omega: 0.95,
        };
        ema_couple(&mut ts).unwrap();
        assert_abs_diff_eq!(ts.encoder1.weight.get(0, 0), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn ema_couple_converges_geometrically() {
        let mut ts = TwoStream {
            encoder1: EncoderParams::zeros(1, 1),
            encoder2: EncoderParams {
                weight: Mat::from_vec(1, 1, vec![1.0]),
                bias: vec![0.0],
            },
            head: HeadParams::zeros(1, 2),
            omega: 0.9,
        };
        let mut gap = 1.0;
        for _ in 0..20 {
            ema_couple(&mut ts).unwrap();
            let new_gap = (ts.encoder1.weight.get(0, 0) - 1.0).abs();
            assert_abs_diff_eq!(new_gap, gap * 0.9, epsilon = 1e-12);
            gap = new_gap;
        }
    }

    #[test]
    fn two_stream_binary_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let ts = TwoStream::init(3, 4, 2, 0.95, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        save_two_stream(&ts, &path).unwrap();

        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..5], b"ALAB1");
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 2);

        let back = load_two_stream(&path, 0.95).unwrap();
        assert_eq!(back, ts);

        // Corrupted magic is rejected.
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_two_stream(&path, 0.95),
            Err(ModelError::InvalidFormat(_))
        ));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = TwoStream::init(4, 8, 3, 0.95, &mut ChaCha8Rng::seed_from_u64(1));
        let b = TwoStream::init(4, 8, 3, 0.95, &mut ChaCha8Rng::seed_from_u64(1));
        let c = TwoStream::init(4, 8, 3, 0.95, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
