//! Numerically stable primitives over logit and probability vectors.
//!
//! All quantities are in nats. Accumulation happens in `f64` regardless of
//! the precision the backend produced the logits in. Masked tokens are
//! carried as `f64::NEG_INFINITY` logits and contribute exactly zero
//! probability mass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating that a vector is normalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("degenerate input: every entry is negative infinity")]
    Degenerate,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("invalid score at index {0}: scores must be finite")]
    InvalidScore(usize),
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("not normalized: total mass {0}")]
    NotNormalized(f64),
    #[error("empty vector")]
    Empty,
}

pub type Result<T> = std::result::Result<T, MathError>;

/// Unnormalized log-scores over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(Vec<f64>);

/// Log-probabilities over the vocabulary; `logsumexp` is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogProbVector(Vec<f64>);

/// Probabilities over the vocabulary; entries are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl LogitVector {
    /// Rejects NaN and `+inf`. `-inf` marks a masked token.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(MathError::Empty);
        }
        if let Some(i) = values.iter().position(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(MathError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl LogProbVector {
    /// Validates that the values are log-probabilities of a normalized distribution.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(MathError::Empty);
        }
        if let Some(i) = values.iter().position(|v| v.is_nan() || *v > 1e-9) {
            return Err(MathError::NonFinite(i));
        }
        let lse = logsumexp(&values);
        if !(lse.abs() <= NORMALIZATION_TOLERANCE) {
            return Err(MathError::NotNormalized(lse.exp()));
        }
        Ok(Self(values))
    }

    /// Elementwise natural log of a probability vector.
    pub fn from_probs(p: &ProbVector) -> Self {
        Self(p.0.iter().map(|v| v.ln()).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_probs(&self) -> ProbVector {
        ProbVector(self.0.iter().map(|v| v.exp()).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(MathError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(MathError::NonFinite(i));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(MathError::NotNormalized(total));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// The `k` most probable tokens, highest first, ties by smaller index.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|i| (i, self.0[i])).collect()
    }
}

/// Index of the largest value, smallest index on ties. NaN entries are never selected.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// `ln Σ exp(x_i)` with max subtraction. Returns `-inf` when every entry is `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

fn log_softmax_raw(values: &[f64]) -> Result<Vec<f64>> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(MathError::Degenerate);
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    let shift = max + sum.ln();
    Ok(values.iter().map(|&v| v - shift).collect())
}

pub fn log_softmax(logits: &LogitVector) -> Result<LogProbVector> {
    log_softmax_raw(&logits.0).map(LogProbVector)
}

/// Softmax at `temperature`; the temperature divides the logits.
pub fn softmax(logits: &LogitVector, temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(MathError::InvalidParameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    let scaled: Vec<f64> = logits.0.iter().map(|&v| v / temperature).collect();
    let lp = log_softmax_raw(&scaled)?;
    Ok(ProbVector(lp.into_iter().map(f64::exp).collect()))
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy(p: &ProbVector) -> f64 {
    let s: f64 = p.0.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum();
    // subtracting from +0 keeps a point mass at +0 rather than -0
    0.0 - s
}

/// Entropy computed directly from log-probabilities; avoids a round trip
/// through `exp` then `ln`.
pub fn entropy_of_logprobs(lp: &LogProbVector) -> f64 {
    let s: f64 = lp.0.iter().filter(|v| v.is_finite()).map(|&v| v.exp() * v).sum();
    0.0 - s
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).ln())
        .sum()
}

/// Jensen-Shannon divergence in nats, bounded by `ln 2`.
pub fn jensen_shannon_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(MathError::Dimension {
            expected: p.len(),
            actual: q.len(),
        });
    }
    let m: Vec<f64> = p.0.iter().zip(&q.0).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = 0.5 * kl_to_mixture(&p.0, &m) + 0.5 * kl_to_mixture(&q.0, &m);
    // rounding can push identical inputs a hair below zero
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}

/// Elementwise `Σ_j w_j · logp_j`, summed in ascending index order.
///
/// Zero-weight members contribute nothing, including at masked (`-inf`)
/// positions. The result is unnormalized; pass it through [`log_softmax`].
pub fn weighted_logprob_sum(logprobs: &[LogProbVector], weights: &[f64]) -> Result<LogitVector> {
    let first = logprobs.first().ok_or(MathError::EmptyEnsemble)?;
    if weights.len() != logprobs.len() {
        return Err(MathError::Dimension {
            expected: logprobs.len(),
            actual: weights.len(),
        });
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
        return Err(MathError::InvalidParameter(format!(
            "weight {i} must be finite and nonnegative"
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(MathError::InvalidParameter(format!(
            "weights must sum to 1, got {total}"
        )));
    }
    let n = first.len();
    let mut acc = vec![0.0; n];
    for (lp, &w) in logprobs.iter().zip(weights) {
        if lp.len() != n {
            return Err(MathError::Dimension {
                expected: n,
                actual: lp.len(),
            });
        }
        if w == 0.0 {
            continue;
        }
        for (a, &v) in acc.iter_mut().zip(&lp.0) {
            *a += w * v;
        }
    }
    Ok(LogitVector(acc))
}
