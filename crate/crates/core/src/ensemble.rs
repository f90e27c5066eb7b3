//! Document weighting schemes and the product-of-experts combination of
//! per-document next-token distributions.
//!
//! Three weightings are supported: entropy-based weights recomputed at every
//! step (`softmax(-H_j / tau)`), uniform weights, and retriever-score
//! weights that are fixed once per query.

use serde::{Deserialize, Serialize};

use crate::math::{self, LogProbVector, LogitVector, MathError, Result};

/// How documents are weighted inside the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightScheme {
    Entropy { tau: f64 },
    Uniform,
    Retriever,
}

impl WeightScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightScheme::Entropy { tau } if !(tau > 0.0) => Err(MathError::InvalidParameter(
                format!("tau must be positive, got {tau}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Per-document weights; nonnegative and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocumentWeights(Vec<f64>);

impl DocumentWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(MathError::EmptyEnsemble);
        }
        if let Some(i) = values
            .iter()
            .position(|w| !w.is_finite() || *w < 0.0 || *w > 1.0)
        {
            return Err(MathError::InvalidParameter(format!("weight {i} out of [0, 1]")));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
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
}

/// Softmax of raw scores at temperature one, computed in log space.
fn normalized_softmax(scores: &[f64]) -> Result<DocumentWeights> {
    let logits = LogitVector::new(scores.to_vec())?;
    let p = math::softmax(&logits, 1.0)?;
    let mut values = p.into_inner();
    // exp() of log-softmax leaves the sum within a few ulps of one
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    Ok(DocumentWeights(values))
}

/// Entropy-based weights: `w_j ∝ exp(-H_j / tau)`.
pub fn entropy_weights(entropies: &[f64], tau: f64) -> Result<DocumentWeights> {
    if entropies.is_empty() {
        return Err(MathError::EmptyEnsemble);
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(MathError::InvalidParameter(format!(
            "tau must be positive and finite, got {tau}"
        )));
    }
    if let Some(i) = entropies.iter().position(|h| !h.is_finite() || *h < 0.0) {
        return Err(MathError::InvalidParameter(format!(
            "entropy {i} must be finite and nonnegative"
        )));
    }
    let scores: Vec<f64> = entropies.iter().map(|h| -h / tau).collect();
    normalized_softmax(&scores)
}

pub fn uniform_weights(k: usize) -> Result<DocumentWeights> {
    if k == 0 {
        return Err(MathError::EmptyEnsemble);
    }
    Ok(DocumentWeights(vec![1.0 / k as f64; k]))
}

/// Retriever weights: softmax of the raw retriever scores.
pub fn retriever_weights(scores: &[f64]) -> Result<DocumentWeights> {
    if scores.is_empty() {
        return Err(MathError::EmptyEnsemble);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MathError::InvalidScore(i));
    }
    normalized_softmax(scores)
}

/// Product-of-experts step: renormalized weighted sum of per-document log-probs.
pub fn ensemble_step(
    per_doc_logprobs: &[LogProbVector],
    weights: &DocumentWeights,
) -> Result<LogProbVector> {
    if per_doc_logprobs.len() != weights.len() {
        return Err(MathError::Dimension {
            expected: per_doc_logprobs.len(),
            actual: weights.len(),
        });
    }
    let combined = math::weighted_logprob_sum(per_doc_logprobs, weights.as_slice())?;
    math::log_softmax(&combined)
}
