//! Model access: tokenization and forward passes returning final-layer and
//! per-layer next-token logits.
//!
//! Intermediate-layer logits are the classification head applied to that
//! layer's hidden state at the last position. Layers are indexed from 1 to
//! `num_layers`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::LogitVector;

pub mod mock;
pub mod remote;

pub use mock::{MockBackend, MockModelSpec, Trigger};
pub use remote::RemoteBackend;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("context length exceeded: {tokens} tokens, maximum {max}")]
    ContextLength { tokens: usize, max: usize },
    #[error("invalid layer {layer} (model has {num_layers} layers)")]
    InvalidLayer { layer: usize, num_layers: usize },
    #[error("invalid token id {0}")]
    InvalidToken(u32),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("remote error {code} (HTTP {status}): {message}")]
    Remote {
        status: u16,
        code: String,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, BackendError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendMeta {
    pub vocab_size: usize,
    pub num_layers: usize,
    pub max_context: usize,
    pub name: String,
    /// End-of-sequence token, when the model has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_token: Option<u32>,
}

impl BackendMeta {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(BackendError::InvalidConfig(format!(
                "vocab_size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        if self.num_layers < 1 {
            return Err(BackendError::InvalidConfig("num_layers must be at least 1".into()));
        }
        if self.max_context < 1 {
            return Err(BackendError::InvalidConfig("max_context must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardRequest {
    pub tokens: Vec<u32>,
    /// Intermediate layers to project; empty means final layer only.
    pub layers: Vec<usize>,
}

impl ForwardRequest {
    pub fn final_only(tokens: Vec<u32>) -> Self {
        Self {
            tokens,
            layers: Vec::new(),
        }
    }

    pub fn validate(&self, meta: &BackendMeta) -> Result<()> {
        if self.tokens.len() > meta.max_context {
            return Err(BackendError::ContextLength {
                tokens: self.tokens.len(),
                max: meta.max_context,
            });
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t as usize >= meta.vocab_size) {
            return Err(BackendError::InvalidToken(t));
        }
        if let Some(&layer) = self
            .layers
            .iter()
            .find(|&&l| l < 1 || l > meta.num_layers)
        {
            return Err(BackendError::InvalidLayer {
                layer,
                num_layers: meta.num_layers,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResponse {
    pub final_logits: LogitVector,
    pub per_layer: BTreeMap<usize, LogitVector>,
}

impl ForwardResponse {
    /// Checks that every requested layer is present and every vector has vocabulary length.
    pub fn validate(&self, req: &ForwardRequest, meta: &BackendMeta) -> Result<()> {
        let check_len = |v: &LogitVector, what: &str| {
            if v.len() != meta.vocab_size {
                Err(BackendError::Protocol(format!(
                    "{what} has {} entries, vocabulary has {}",
                    v.len(),
                    meta.vocab_size
                )))
            } else {
                Ok(())
            }
        };
        check_len(&self.final_logits, "final logits")?;
        for l in &req.layers {
            match self.per_layer.get(l) {
                Some(v) => check_len(v, &format!("layer {l} logits"))?,
                None => {
                    return Err(BackendError::Protocol(format!(
                        "response is missing requested layer {l}"
                    )))
                }
            }
        }
        Ok(())
    }
}

/// A language model the decoder can query.
///
/// Implementations must be safe to call concurrently; the decoder issues
/// one forward per document within a step in parallel.
pub trait Backend: Send + Sync {
    /// Constant for the backend's lifetime.
    fn meta(&self) -> &BackendMeta;
    fn tokenize(&self, text: &str) -> Result<Vec<u32>>;
    fn detokenize(&self, ids: &[u32]) -> Result<String>;
    fn forward(&self, req: &ForwardRequest) -> Result<ForwardResponse>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn meta(&self) -> &BackendMeta {
        (**self).meta()
    }
    fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, ids: &[u32]) -> Result<String> {
        (**self).detokenize(ids)
    }
    fn forward(&self, req: &ForwardRequest) -> Result<ForwardResponse> {
        (**self).forward(req)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn meta(&self) -> &BackendMeta {
        (**self).meta()
    }
    fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, ids: &[u32]) -> Result<String> {
        (**self).detokenize(ids)
    }
    fn forward(&self, req: &ForwardRequest) -> Result<ForwardResponse> {
        (**self).forward(req)
    }
}
