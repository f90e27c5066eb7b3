use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::QAExample;
use super::harness::{run_eval, EvalOptions};
use super::metrics::exact_match;
use super::{EvalError, Result};
use crate::backend::{Backend, ForwardRequest};
use crate::contrast::{LayerSelection, LayerStrategy};
use crate::decoder::{decode, DecodeConfig, Method};
use crate::math;
use crate::prompting::{Document, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Zero-based index of the oracle among the documents.
    pub position: usize,
    pub em: u8,
    pub prediction: String,
}

/// Decodes once per oracle position `0..=distractors.len()`, with the
/// distractors kept in their given order around it.
pub fn position_sweep(
    oracle: &Document,
    distractors: &[Document],
    question: &str,
    answers: &[String],
    cfg: &DecodeConfig,
    backend: &dyn Backend,
) -> Result<Vec<SweepPoint>> {
    if distractors.is_empty() {
        return Err(EvalError::Invalid("position sweep needs at least one distractor".into()));
    }
    (0..=distractors.len())
        .into_par_iter()
        .map(|position| {
            let mut docs = distractors.to_vec();
            docs.insert(position, oracle.clone());
            let result = decode(question, &docs, cfg, backend).map_err(|source| {
                EvalError::Decode {
                    id: format!("position {position}"),
                    source,
                }
            })?;
            Ok(SweepPoint {
                position,
                em: exact_match(&result.answer, answers),
                prediction: result.answer,
            })
        })
        .collect()
}

fn split_oracle(ex: &QAExample) -> Result<(&Document, Vec<&Document>)> {
    let labeling = |message: String| EvalError::Labeling {
        id: ex.id.clone(),
        message,
    };
    if ex.documents.iter().any(|d| d.is_oracle.is_none()) {
        return Err(labeling("every document needs an is_oracle flag".into()));
    }
    let oracles: Vec<&Document> = ex.oracle_documents().collect();
    if oracles.len() != 1 {
        return Err(labeling(format!("expected one oracle document, found {}", oracles.len())));
    }
    let distractors: Vec<&Document> = ex.documents.iter().filter(|d| !d.is_oracle()).collect();
    if distractors.is_empty() {
        return Err(labeling("no distractor documents".into()));
    }
    Ok((oracles[0], distractors))
}

/// Per example: first-token entropy given the oracle document minus the
/// mean first-token entropy given each distractor.
pub fn first_token_entropy_gap(
    examples: &[QAExample],
    template: &PromptTemplate,
    backend: &dyn Backend,
) -> Result<Vec<f64>> {
    examples
        .par_iter()
        .map(|ex| {
            let (oracle, distractors) = split_oracle(ex)?;
            let first_entropy = |doc: &Document| -> Result<f64> {
                let tokens = backend.tokenize(&template.parallel(doc, &ex.question)?)?;
                let resp = backend.forward(&ForwardRequest::final_only(tokens))?;
                let lp = math::log_softmax(&resp.final_logits)
                    .map_err(|e| EvalError::Invalid(e.to_string()))?;
                Ok(math::entropy_of_logprobs(&lp))
            };
            let h_oracle = first_entropy(oracle)?;
            let h_distractors = distractors
                .iter()
                .map(|d| first_entropy(d))
                .collect::<Result<Vec<f64>>>()?;
            Ok(h_oracle - h_distractors.iter().sum::<f64>() / h_distractors.len() as f64)
        })
        .collect()
}

/// Per example: oracle retriever score minus the mean distractor score.
pub fn retriever_score_gap(examples: &[QAExample]) -> Result<Vec<f64>> {
    examples
        .iter()
        .map(|ex| {
            let (oracle, distractors) = split_oracle(ex)?;
            let score = |d: &Document| {
                d.retriever_score.ok_or_else(|| EvalError::Labeling {
                    id: ex.id.clone(),
                    message: "document without a retriever score".into(),
                })
            };
            let mean = distractors
                .iter()
                .map(|d| score(d))
                .collect::<Result<Vec<f64>>>()?
                .iter()
                .sum::<f64>()
                / distractors.len() as f64;
            Ok(score(oracle)? - mean)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfileRow {
    pub layer: usize,
    /// Mean entropy of the distributions emitted tokens were chosen from.
    pub mean_entropy: f64,
    pub em: Option<f64>,
}

/// Runs contrastive decoding once per fixed contrast layer.
pub fn layer_entropy_profile(
    examples: &[QAExample],
    cfg: &DecodeConfig,
    layers: &[usize],
    backend: &dyn Backend,
    opts: &EvalOptions,
) -> Result<Vec<LayerProfileRow>> {
    if layers.is_empty() {
        return Err(EvalError::Invalid("layer list is empty".into()));
    }
    layers
        .iter()
        .map(|&layer| {
            let mut cfg = cfg.clone();
            cfg.method = Method::Clehe;
            cfg.layer_strategy = LayerStrategy::new(LayerSelection::Fixed(layer), vec![layer]);
            let report = run_eval(examples, &cfg, backend, opts)?;
            let entropies: Vec<f64> = report
                .traces
                .iter()
                .flat_map(|t| t.rows.iter().map(|r| r.entropy))
                .collect();
            let mean_entropy = if entropies.is_empty() {
                f64::NAN
            } else {
                entropies.iter().sum::<f64>() / entropies.len() as f64
            };
            Ok(LayerProfileRow {
                layer,
                mean_entropy,
                em: report.aggregate.em,
            })
        })
        .collect()
}
