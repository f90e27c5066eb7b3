//! The per-query greedy generation loop.
//!
//! Each step fans out one forward per active prompt (K document prompts,
//! the concatenated prompt, and the closed-book prompt, depending on the
//! method), assembles the next-token distribution, commits its argmax and
//! appends that token to every prompt. Forwards within a step run
//! concurrently; steps are sequential.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, BackendMeta, ForwardRequest, ForwardResponse};
use crate::contrast::{self, LayerDistributionSet, LayerSelection, LayerStrategy};
use crate::ensemble::{self, DocumentWeights};
use crate::math::{self, LogProbVector, MathError, ProbVector};
use crate::prompting::{Document, PromptError, PromptTemplate};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("prompt needs {tokens} tokens plus {reserve} for generation, context holds {max}")]
    ContextLength {
        tokens: usize,
        reserve: usize,
        max: usize,
    },
    #[error("document {0} has no retriever score")]
    MissingScore(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DecodeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// All documents concatenated into one prompt.
    Naive,
    /// Product-of-experts over documents with uniform weights.
    AvgEns,
    /// Product-of-experts with softmax-normalized retriever scores.
    Replug,
    /// Product-of-experts with per-step entropy weights.
    Leens,
    /// Entropy ensemble contrasted against a no-context layer distribution.
    Clehe,
    /// Concatenated prompt contrasted against the no-context final layer.
    Cad,
    /// No documents at all; for debugging the parametric prior.
    ClosedBook,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Naive,
        Method::AvgEns,
        Method::Replug,
        Method::Leens,
        Method::Clehe,
        Method::Cad,
        Method::ClosedBook,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::AvgEns => "avg_ens",
            Method::Replug => "replug",
            Method::Leens => "leens",
            Method::Clehe => "clehe",
            Method::Cad => "cad",
            Method::ClosedBook => "closed_book",
        }
    }

    fn is_parallel(self) -> bool {
        matches!(
            self,
            Method::AvgEns | Method::Replug | Method::Leens | Method::Clehe
        )
    }

    fn needs_closed_book(self) -> bool {
        matches!(self, Method::Clehe | Method::Cad | Method::ClosedBook)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm || (norm == "avgens" && *m == Method::AvgEns))
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// Mark the example skipped.
    #[default]
    Skip,
    /// Drop trailing documents, then shorten document text until the prompt fits.
    TruncateDocuments,
    Error,
}

impl FromStr for OverflowPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "skip" => Ok(Self::Skip),
            "truncate" | "truncate_documents" | "truncate-documents" => Ok(Self::TruncateDocuments),
            "error" => Ok(Self::Error),
            other => Err(format!("unknown overflow policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub method: Method,
    pub tau: f64,
    pub beta: f64,
    /// An empty candidate set means the upper half of the model's layers.
    pub layer_strategy: LayerStrategy,
    pub max_new_tokens: usize,
    pub stop_on_eos: bool,
    pub stop_on_newline: bool,
    pub overflow: OverflowPolicy,
    pub template: PromptTemplate,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            method: Method::Leens,
            tau: 0.1,
            beta: 0.25,
            layer_strategy: LayerStrategy::new(LayerSelection::MaxEntropy, Vec::new()),
            max_new_tokens: 32,
            stop_on_eos: true,
            stop_on_newline: true,
            overflow: OverflowPolicy::Skip,
            template: PromptTemplate::default(),
        }
    }
}

impl DecodeConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    /// Fills in the default candidate layers for `meta` and validates.
    pub fn resolved(&self, meta: &BackendMeta) -> Result<DecodeConfig> {
        let mut cfg = self.clone();
        if cfg.layer_strategy.candidate_layers.is_empty() {
            cfg.layer_strategy.candidate_layers = default_candidate_layers(meta.num_layers);
        }
        cfg.validate(meta)?;
        Ok(cfg)
    }

    pub fn validate(&self, meta: &BackendMeta) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(DecodeError::Config("max_new_tokens must be positive".into()));
        }
        if self.method == Method::Leens || self.method == Method::Clehe {
            ensemble::WeightScheme::Entropy { tau: self.tau }.validate()?;
        }
        if matches!(self.method, Method::Clehe | Method::Cad) && !(self.beta >= 0.0) {
            return Err(DecodeError::Config(format!(
                "beta must be nonnegative, got {}",
                self.beta
            )));
        }
        if self.method == Method::Clehe {
            self.layer_strategy.validate(meta.num_layers)?;
        }
        Ok(())
    }
}

/// Layers in the upper half of the model, `L/2 + 1 ..= L`.
pub fn default_candidate_layers(num_layers: usize) -> Vec<usize> {
    (num_layers / 2 + 1..=num_layers).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopToken {
    pub token: u32,
    pub prob: f64,
}

/// One committed token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    /// Entropy of each context-conditioned distribution (one per document
    /// for ensemble methods, one for the concatenated prompt otherwise).
    pub entropies: Vec<f64>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_layer: Option<usize>,
    pub top: Vec<TopToken>,
    pub token: u32,
    /// Entropy of the distribution the token was drawn from.
    pub entropy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GenerationTrace {
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    Newline,
    MaxNewTokens,
    /// Prompt did not fit the context window.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub answer: String,
    pub tokens: Vec<u32>,
    pub stop_reason: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
    pub trace: GenerationTrace,
}

impl DecodeResult {
    pub fn skipped(&self) -> bool {
        self.stop_reason == StopReason::Skipped
    }
}

/// The distribution for the next token, before anything is committed.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logprobs: LogProbVector,
    pub probs: ProbVector,
    /// Trace row with `token` set to the greedy choice.
    pub row: TraceRow,
}

const TOP_K: usize = 5;

/// Decoding state for one query.
pub struct Decoder<'a> {
    backend: &'a dyn Backend,
    cfg: DecodeConfig,
    /// Per-document prompts for ensemble methods, the concatenated prompt for
    /// naive/cad, empty for closed-book.
    contexts: Vec<Vec<u32>>,
    closed_book: Option<Vec<u32>>,
    fixed_weights: Option<DocumentWeights>,
    generated: Vec<u32>,
    rows: Vec<TraceRow>,
}

impl<'a> Decoder<'a> {
    /// Builds and tokenizes every prompt. Context overflow is an error here
    /// unless the policy truncates; [`decode`] maps it to a skipped result.
    pub fn new(
        question: &str,
        docs: &[Document],
        cfg: &DecodeConfig,
        backend: &'a dyn Backend,
    ) -> Result<Self> {
        let meta = backend.meta();
        let cfg = cfg.resolved(meta)?;
        if docs.is_empty() && cfg.method != Method::ClosedBook {
            return Err(DecodeError::Prompt(PromptError::EmptyContext));
        }
        let budget = meta.max_context.saturating_sub(cfg.max_new_tokens);
        let overflow = |tokens: usize| DecodeError::ContextLength {
            tokens,
            reserve: cfg.max_new_tokens,
            max: meta.max_context,
        };
        let truncate = cfg.overflow == OverflowPolicy::TruncateDocuments;

        let contexts = match cfg.method {
            m if m.is_parallel() => docs
                .iter()
                .map(|d| fit_parallel(&cfg.template, d, question, backend, budget, truncate))
                .collect::<Result<Vec<_>>>()?,
            Method::Naive | Method::Cad => {
                vec![fit_concat(&cfg.template, docs, question, backend, budget, truncate)?]
            }
            _ => Vec::new(),
        };
        let closed_book = if cfg.method.needs_closed_book() {
            let tokens = backend.tokenize(&cfg.template.closed_book(question)?)?;
            if tokens.len() > budget {
                return Err(overflow(tokens.len()));
            }
            Some(tokens)
        } else {
            None
        };
        let fixed_weights = match cfg.method {
            Method::AvgEns => Some(ensemble::uniform_weights(docs.len())?),
            Method::Replug => {
                let scores = docs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| d.retriever_score.ok_or(DecodeError::MissingScore(i)))
                    .collect::<Result<Vec<f64>>>()?;
                Some(ensemble::retriever_weights(&scores)?)
            }
            _ => None,
        };
        Ok(Self {
            backend,
            cfg,
            contexts,
            closed_book,
            fixed_weights,
            generated: Vec::new(),
            rows: Vec::new(),
        })
    }

    pub fn config(&self) -> &DecodeConfig {
        &self.cfg
    }

    pub fn generated(&self) -> &[u32] {
        &self.generated
    }

    fn with_generated(&self, prompt: &[u32]) -> Vec<u32> {
        let mut tokens = Vec::with_capacity(prompt.len() + self.generated.len());
        tokens.extend_from_slice(prompt);
        tokens.extend_from_slice(&self.generated);
        tokens
    }

    /// Runs this step's forwards: contexts first, then the closed-book prompt.
    fn forwards(&self) -> Result<(Vec<ForwardResponse>, Option<ForwardResponse>)> {
        let mut requests: Vec<ForwardRequest> = self
            .contexts
            .iter()
            .map(|c| ForwardRequest::final_only(self.with_generated(c)))
            .collect();
        if let Some(cb) = &self.closed_book {
            let layers = match self.cfg.method {
                Method::Clehe => self.cfg.layer_strategy.layers_to_request(),
                _ => Vec::new(),
            };
            requests.push(ForwardRequest {
                tokens: self.with_generated(cb),
                layers,
            });
        }
        let backend = self.backend;
        let mut responses = requests
            .par_iter()
            .map(|r| backend.forward(r))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let closed = if self.closed_book.is_some() {
            responses.pop()
        } else {
            None
        };
        Ok((responses, closed))
    }

    /// The next-token distribution under the configured method.
    pub fn step(&self) -> Result<StepOutput> {
        let (responses, closed) = self.forwards()?;
        let context_lps = responses
            .iter()
            .map(|r| math::log_softmax(&r.final_logits))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let entropies: Vec<f64> = context_lps.iter().map(math::entropy_of_logprobs).collect();
        let num_layers = self.backend.meta().num_layers;

        let (logprobs, weights, selected_layer) = match self.cfg.method {
            Method::Naive => (context_lps[0].clone(), vec![1.0], None),
            Method::ClosedBook => {
                let closed = closed.expect("closed-book forward");
                (math::log_softmax(&closed.final_logits)?, Vec::new(), None)
            }
            Method::Cad => {
                let closed = closed.expect("closed-book forward");
                let prior = math::log_softmax(&closed.final_logits)?;
                let out = contrast::contrast_step(&context_lps[0], &prior, self.cfg.beta)?;
                (out, vec![1.0], Some(num_layers))
            }
            _ => {
                let weights = match &self.fixed_weights {
                    Some(w) => w.clone(),
                    None => ensemble::entropy_weights(&entropies, self.cfg.tau)?,
                };
                let ens = ensemble::ensemble_step(&context_lps, &weights)?;
                if self.cfg.method == Method::Clehe {
                    let closed = closed.expect("closed-book forward");
                    let (layer, prior) = self.select_prior(&closed, &ens)?;
                    let out = contrast::contrast_step(&ens, &prior, self.cfg.beta)?;
                    (out, weights.as_slice().to_vec(), Some(layer))
                } else {
                    (ens, weights.as_slice().to_vec(), None)
                }
            }
        };

        let probs = logprobs.to_probs();
        let token = probs.argmax() as u32;
        let row = TraceRow {
            step: self.generated.len(),
            entropies,
            weights,
            selected_layer,
            top: probs
                .top_k(TOP_K)
                .into_iter()
                .map(|(t, p)| TopToken {
                    token: t as u32,
                    prob: p,
                })
                .collect(),
            token,
            entropy: math::entropy_of_logprobs(&logprobs),
        };
        Ok(StepOutput {
            logprobs,
            probs,
            row,
        })
    }

    fn select_prior(
        &self,
        closed: &ForwardResponse,
        ensemble: &LogProbVector,
    ) -> Result<(usize, LogProbVector)> {
        let strategy = &self.cfg.layer_strategy;
        let num_layers = self.backend.meta().num_layers;
        let layer_lp = |l: usize| -> Result<LogProbVector> {
            let logits = closed.per_layer.get(&l).ok_or_else(|| {
                BackendError::Protocol(format!("forward response is missing layer {l}"))
            })?;
            Ok(math::log_softmax(logits)?)
        };
        match strategy.selection {
            LayerSelection::LastLayer => Ok((num_layers, math::log_softmax(&closed.final_logits)?)),
            LayerSelection::Fixed(l) => Ok((l, layer_lp(l)?)),
            LayerSelection::MaxEntropy | LayerSelection::MaxJsd => {
                let set = strategy
                    .candidate_layers
                    .iter()
                    .map(|&l| Ok((l, layer_lp(l)?)))
                    .collect::<Result<LayerDistributionSet>>()?;
                let l = if strategy.selection == LayerSelection::MaxEntropy {
                    contrast::select_layer_max_entropy(&set)?
                } else {
                    contrast::select_layer_max_jsd(&set, ensemble)?
                };
                let lp = set.per_layer.get(&l).cloned().expect("selected layer is a candidate");
                Ok((l, lp))
            }
        }
    }

    /// Appends `token` to every prompt and records the trace row.
    pub fn commit(&mut self, mut row: TraceRow, token: u32) {
        row.token = token;
        self.generated.push(token);
        self.rows.push(row);
    }

    /// Greedy decoding until a stop rule fires.
    pub fn run(mut self) -> Result<DecodeResult> {
        let eos = self.backend.meta().eos_token;
        let mut text = String::new();
        loop {
            let out = self.step()?;
            let token = out.row.token;
            self.commit(out.row, token);

            if self.cfg.stop_on_eos && Some(token) == eos {
                let answer = self
                    .backend
                    .detokenize(&self.generated[..self.generated.len() - 1])?;
                return self.finish(answer, StopReason::Eos);
            }
            if self.cfg.stop_on_newline {
                let piece = self.backend.detokenize(&[token])?;
                if let Some(cut) = newline_cut(&text, &piece) {
                    text.push_str(&piece[..cut]);
                    return self.finish(text, StopReason::Newline);
                }
                text.push_str(&piece);
            }
            if self.generated.len() >= self.cfg.max_new_tokens {
                let answer = self.backend.detokenize(&self.generated)?;
                return self.finish(answer, StopReason::MaxNewTokens);
            }
        }
    }

    fn finish(self, answer: String, stop_reason: StopReason) -> Result<DecodeResult> {
        Ok(DecodeResult {
            answer,
            tokens: self.generated,
            stop_reason,
            skip_reason: None,
            trace: GenerationTrace { rows: self.rows },
        })
    }
}

/// Byte offset in `piece` of the first newline that follows non-whitespace
/// text (counting `so_far`).
fn newline_cut(so_far: &str, piece: &str) -> Option<usize> {
    let mut seen = so_far.chars().any(|c| !c.is_whitespace());
    for (i, c) in piece.char_indices() {
        if c == '\n' && seen {
            return Some(i);
        }
        if !c.is_whitespace() {
            seen = true;
        }
    }
    None
}

fn fit_parallel(
    template: &PromptTemplate,
    doc: &Document,
    question: &str,
    backend: &dyn Backend,
    budget: usize,
    truncate: bool,
) -> Result<Vec<u32>> {
    let mut doc = doc.clone();
    loop {
        let tokens = backend.tokenize(&template.parallel(&doc, question)?)?;
        if tokens.len() <= budget {
            return Ok(tokens);
        }
        if !truncate || !shorten(&mut doc.content, tokens.len() - budget) {
            return Err(context_error(tokens.len(), budget, backend.meta()));
        }
    }
}

fn fit_concat(
    template: &PromptTemplate,
    docs: &[Document],
    question: &str,
    backend: &dyn Backend,
    budget: usize,
    truncate: bool,
) -> Result<Vec<u32>> {
    let mut docs = docs.to_vec();
    loop {
        let tokens = backend.tokenize(&template.concat(&docs, question)?)?;
        if tokens.len() <= budget {
            return Ok(tokens);
        }
        if !truncate {
            return Err(context_error(tokens.len(), budget, backend.meta()));
        }
        if docs.len() > 1 {
            docs.pop();
        } else if !shorten(&mut docs[0].content, tokens.len() - budget) {
            return Err(context_error(tokens.len(), budget, backend.meta()));
        }
    }
}

fn context_error(tokens: usize, budget: usize, meta: &BackendMeta) -> DecodeError {
    DecodeError::ContextLength {
        tokens,
        reserve: meta.max_context - budget,
        max: meta.max_context,
    }
}

/// Drops at least `excess` characters from the end; false once nothing would remain.
fn shorten(content: &mut String, excess: usize) -> bool {
    let chars = content.chars().count();
    if chars <= excess.max(1) {
        return false;
    }
    let keep = chars - excess.max(1);
    let cut = content
        .char_indices()
        .nth(keep)
        .map_or(content.len(), |(i, _)| i);
    content.truncate(cut);
    true
}

/// Decodes an answer for `question` given `docs`.
///
/// With [`OverflowPolicy::Skip`] an over-long prompt yields a result marked
/// skipped instead of an error.
pub fn decode(
    question: &str,
    docs: &[Document],
    cfg: &DecodeConfig,
    backend: &dyn Backend,
) -> Result<DecodeResult> {
    match Decoder::new(question, docs, cfg, backend) {
        Ok(decoder) => decoder.run(),
        Err(e @ DecodeError::ContextLength { .. }) if cfg.overflow == OverflowPolicy::Skip => {
            Ok(DecodeResult {
                answer: String::new(),
                tokens: Vec::new(),
                stop_reason: StopReason::Skipped,
                skip_reason: Some(e.to_string()),
                trace: GenerationTrace::default(),
            })
        }
        Err(e) => Err(e),
    }
}

/// One step's distribution and trace row without committing a token.
pub fn step_distribution(decoder: &Decoder<'_>) -> Result<(ProbVector, TraceRow)> {
    let out = decoder.step()?;
    Ok((out.probs, out.row))
}
