use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::QAExample;
use super::metrics::exact_match;
use super::{EvalError, Result};
use crate::backend::Backend;
use crate::decoder::{decode, DecodeConfig, GenerationTrace, StopReason};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Decode on the first `top_k` documents of each example.
    pub top_k: usize,
    /// Examples evaluated concurrently.
    pub parallelism: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            top_k: 5,
            parallelism: 1,
        }
    }
}

/// Per-example outcome. Contains nothing time-dependent, so identical runs
/// serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub prediction: String,
    pub answers: Vec<String>,
    /// Absent for skipped examples.
    pub em: Option<u8>,
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
    pub stop_reason: StopReason,
    pub num_documents: usize,
    pub num_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub examples: usize,
    pub scored: usize,
    pub skipped: usize,
    pub correct: usize,
    /// EM percentage over scored examples, rounded to two decimals; `None`
    /// when nothing was scored.
    pub em: Option<f64>,
    pub em_defined: bool,
}

/// Recomputes the aggregate from per-example records.
pub fn aggregate(records: &[ExampleRecord]) -> Aggregate {
    let scored: Vec<u8> = records.iter().filter_map(|r| r.em).collect();
    let correct = scored.iter().map(|&e| usize::from(e)).sum::<usize>();
    let em = (!scored.is_empty())
        .then(|| (100.0 * correct as f64 / scored.len() as f64 * 100.0).round() / 100.0);
    Aggregate {
        examples: records.len(),
        scored: scored.len(),
        skipped: records.iter().filter(|r| r.skipped).count(),
        correct,
        em,
        em_defined: em.is_some(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregate: Aggregate,
    pub config: serde_json::Value,
    pub wall_clock_secs: f64,
    #[serde(skip)]
    pub records: Vec<ExampleRecord>,
    #[serde(skip)]
    pub traces: Vec<GenerationTrace>,
}

impl EvalReport {
    pub fn em_display(&self) -> String {
        match self.aggregate.em {
            Some(em) => format!("{em:.2}"),
            None => "undefined".to_string(),
        }
    }

    pub fn write_records<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// One JSON line per decoding step, tagged with the example id.
    pub fn write_traces<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (record, trace) in self.records.iter().zip(&self.traces) {
            for row in &trace.rows {
                let mut value = serde_json::to_value(row)?;
                value["id"] = serde_json::Value::String(record.id.clone());
                serde_json::to_writer(&mut out, &value)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, out: W) -> std::io::Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

fn evaluate_one(
    ex: &QAExample,
    cfg: &DecodeConfig,
    backend: &dyn Backend,
    top_k: usize,
) -> Result<(ExampleRecord, GenerationTrace)> {
    let docs = &ex.documents[..ex.documents.len().min(top_k)];
    let result = decode(&ex.question, docs, cfg, backend).map_err(|source| EvalError::Decode {
        id: ex.id.clone(),
        source,
    })?;
    let skipped = result.skipped();
    let record = ExampleRecord {
        id: ex.id.clone(),
        em: (!skipped).then(|| exact_match(&result.answer, &ex.answers)),
        prediction: result.answer,
        answers: ex.answers.clone(),
        skipped,
        skip_reason: result.skip_reason,
        stop_reason: result.stop_reason,
        num_documents: docs.len(),
        num_tokens: result.tokens.len(),
    };
    Ok((record, result.trace))
}

/// Decodes every example and scores it with Exact Match.
///
/// Records keep the dataset order regardless of `parallelism`.
pub fn run_eval(
    examples: &[QAExample],
    cfg: &DecodeConfig,
    backend: &dyn Backend,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if opts.top_k == 0 {
        return Err(EvalError::Invalid("top-k must be at least 1".into()));
    }
    let resolved = cfg
        .resolved(backend.meta())
        .map_err(|source| EvalError::Decode {
            id: "<config>".into(),
            source,
        })?;
    let short = examples.iter().filter(|ex| ex.documents.len() < opts.top_k).count();
    if short > 0 {
        log::warn!("{short} of {} examples have fewer than top-k {} documents", examples.len(), opts.top_k);
    }
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism.max(1))
        .build()
        .map_err(|e| EvalError::Invalid(e.to_string()))?;
    let outcomes: Vec<(ExampleRecord, GenerationTrace)> = pool.install(|| {
        examples
            .par_iter()
            .map(|ex| evaluate_one(ex, &resolved, backend, opts.top_k))
            .collect::<Result<_>>()
    })?;
    let (records, traces): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    Ok(EvalReport {
        aggregate: aggregate(&records),
        config: serde_json::json!({
            "decode": resolved,
            "top_k": opts.top_k,
            "parallelism": opts.parallelism,
            "backend": backend.meta(),
        }),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        records,
        traces,
    })
}
