//! Entropy-guided decoding for retrieval-augmented generation.
//!
//! Retrieved documents are decoded in parallel, one prompt per document, and
//! their next-token distributions are combined as a product of experts. With
//! [`Method::Leens`] each document is weighted by `softmax(-H_j / tau)` over
//! the entropies of the document-conditioned distributions, so confident
//! documents dominate. [`Method::Clehe`] additionally contrasts that ensemble
//! against the highest-entropy no-context distribution among a set of
//! candidate layers:
//!
//! ```text
//! y_t = argmax softmax[(1 + beta) · Σ_j w_j log p(y | d_j, x, y<t) − beta · log p_l*(y | x, y<t)]
//! ```
//!
//! The concatenation baseline ([`Method::Naive`]), uniform and
//! retriever-weighted ensembles ([`Method::AvgEns`], [`Method::Replug`]) and
//! context-aware contrast ([`Method::Cad`]) share the same loop.
//!
//! Models are reached through the [`Backend`] trait. [`MockBackend`] is a
//! deterministic byte-level stand-in with planted answers; [`RemoteBackend`]
//! speaks a small JSON-over-HTTP logits protocol.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory:
//!
//! ```bash
//! cargo run -p entrorag --example leens_decode
//! ```

// `!(x >= 0.0)` style checks are used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod cli;
pub mod config;
pub mod contrast;
pub mod decoder;
pub mod ensemble;
pub mod evaluation;
pub mod fixtures;
pub mod math;
pub mod prompting;

pub use backend::{Backend, BackendMeta, ForwardRequest, ForwardResponse, MockBackend, MockModelSpec, RemoteBackend, Trigger};
pub use contrast::{LayerSelection, LayerStrategy};
pub use decoder::{decode, DecodeConfig, DecodeResult, Decoder, Method, OverflowPolicy, StopReason};
pub use math::{LogProbVector, LogitVector, ProbVector};
pub use prompting::{Document, PromptTemplate};
