//! Dataset ingestion, Exact Match scoring, and the analysis harnesses:
//! oracle position sweeps, first-token entropy gaps, retriever score gaps
//! and per-layer contrast profiles.

use thiserror::Error;

use crate::backend::BackendError;
use crate::decoder::DecodeError;
use crate::prompting::PromptError;

mod analysis;
mod dataset;
mod harness;
mod metrics;

pub use analysis::{
    first_token_entropy_gap, histogram, layer_entropy_profile, position_sweep,
    retriever_score_gap, HistogramBin, LayerProfileRow, SweepPoint,
};
pub use dataset::{load_dataset, read_dataset, read_documents, QAExample};
pub use harness::{
    aggregate, run_eval, Aggregate, EvalOptions, EvalReport, ExampleRecord,
};
pub use metrics::{exact_match, normalize_answer};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Ingest { line: usize, message: String },
    #[error("example {id} failed")]
    Decode {
        id: String,
        #[source]
        source: DecodeError,
    },
    #[error("example {id}: {message}")]
    Labeling { id: String, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;
