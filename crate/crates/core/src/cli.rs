//! The `entrorag` command line.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.
//! Failures are reported on stderr as `{"error":{"kind":..,"message":..}}`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::backend::Backend;
use crate::config::{BackendKind, ConfigError, RunConfig, Settings};
use crate::decoder::decode;
use crate::evaluation::{
    first_token_entropy_gap, histogram, layer_entropy_profile, load_dataset,
    position_sweep, read_documents, retriever_score_gap, run_eval, EvalOptions, QAExample,
};
use crate::fixtures;
use crate::prompting::Document;

#[derive(Debug, Parser)]
#[command(name = "entrorag", version, about = "Entropy-guided ensemble and contrastive decoding for RAG")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode one question and print the result as JSON.
    Decode {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        question: Option<String>,
        /// JSONL file of documents ({"title","text","score"} per line).
        #[arg(long)]
        docs: Option<PathBuf>,
        /// Example id to decode from --dataset.
        #[arg(long)]
        id: Option<String>,
        /// Include the per-step trace.
        #[arg(long)]
        trace: bool,
    },
    /// Score a dataset with Exact Match; writes records.jsonl and report.json to --out.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Also write traces.jsonl.
        #[arg(long)]
        trace: bool,
    },
    /// Move the oracle document through every position and report EM per position as CSV.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Plot-ready analyses over an oracle-labeled dataset.
    Analyze {
        kind: AnalysisKind,
        #[command(flatten)]
        run: RunArgs,
        /// Emit per-example values instead of histogram bins.
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Write a planted-answer dataset and a matching mock spec.
    Fixture {
        #[arg(long, default_value_t = 20)]
        examples: usize,
        #[arg(long, default_value_t = 10)]
        documents: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Make the mock ignore evidence further than this many bytes from
        /// both ends of its context.
        #[arg(long)]
        recall_window: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    EntropyGap,
    ScoreGap,
    LayerProfile,
}

/// Flags shared by every run. Unset flags fall back to --config, then to --preset.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// naive, avg_ens, replug, leens, clehe, cad or closed_book.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Candidate layers: "17-32:even", "31-40" or "18,20,22".
    #[arg(long)]
    layers: Option<String>,
    /// max-entropy, last, max-jsd or fixed:N.
    #[arg(long)]
    layer_strategy: Option<String>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// skip, truncate or error.
    #[arg(long)]
    overflow: Option<String>,
    #[arg(long, value_parser = ["mock", "remote"])]
    backend: Option<String>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON mock model spec.
    #[arg(long)]
    mock_spec: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Output file, or directory for eval.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// llama2-7b, llama2-13b, mistral-7b or llama3-8b.
    #[arg(long)]
    preset: Option<String>,
}

impl RunArgs {
    fn settings(&self) -> Settings {
        Settings {
            preset: self.preset.clone(),
            method: self.method.clone(),
            tau: self.tau,
            beta: self.beta,
            layers: self.layers.clone(),
            layer_strategy: self.layer_strategy.clone(),
            max_new_tokens: self.max_new_tokens,
            overflow: self.overflow.clone(),
            backend: self.backend.as_deref().map(|b| {
                b.parse::<BackendKind>()
                    .expect("clap restricts --backend values")
            }),
            base_url: self.base_url.clone(),
            seed: self.seed,
            mock_spec: self.mock_spec.clone(),
            dataset: self.dataset.clone(),
            out: self.out.clone(),
            top_k: self.top_k,
            parallelism: self.parallelism,
            template: Default::default(),
        }
    }

    /// Merges preset, config file and flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let base = match &self.config {
            Some(path) => Settings::from_toml_file(path).map_err(|e| match e {
                ConfigError::Io { .. } => CliError::Runtime(e.into()),
                other => CliError::Usage(other.to_string()),
            })?,
            None => Settings::default(),
        };
        RunConfig::resolve(&base.merge(self.settings())).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Usage(m) => json!({"error": {"kind": "usage", "message": m}}),
            CliError::Runtime(e) => json!({"error": {"kind": "runtime", "message": format!("{e:#}")}}),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `std::env::args` and runs the command.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Decode {
            run,
            question,
            docs,
            id,
            trace,
        } => cmd_decode(&run, question, docs, id, trace),
        Command::Eval { run, trace } => cmd_eval(&run, trace),
        Command::Sweep { run } => cmd_sweep(&run),
        Command::Analyze {
            kind,
            run,
            raw,
            bins,
        } => cmd_analyze(kind, &run, raw, bins),
        Command::Fixture {
            examples,
            documents,
            seed,
            recall_window,
            out,
        } => cmd_fixture(examples, documents, seed, recall_window, &out),
    }
}

fn connect(cfg: &RunConfig) -> CliResult<Box<dyn Backend>> {
    cfg.backend
        .connect()
        .with_context(|| format!("cannot start backend {}", cfg.backend))
        .map_err(CliError::Runtime)
}

fn dataset(cfg: &RunConfig) -> CliResult<Vec<QAExample>> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Usage("--dataset is required".into()))?;
    Ok(load_dataset(path).map_err(anyhow::Error::from)?)
}

/// Resolved settings as JSON, with the backend's own description.
fn config_echo(cfg: &RunConfig, backend: &dyn Backend) -> anyhow::Result<serde_json::Value> {
    let mut value = serde_json::to_value(cfg)?;
    value["decode"] = serde_json::to_value(cfg.decode.resolved(backend.meta())?)?;
    value["backend_meta"] = serde_json::to_value(backend.meta())?;
    Ok(value)
}

fn cmd_decode(
    args: &RunArgs,
    question: Option<String>,
    docs: Option<PathBuf>,
    id: Option<String>,
    trace: bool,
) -> CliResult<()> {
    let cfg = args.resolve()?;
    let (question, documents) = match (question, docs, id, &cfg.dataset) {
        (Some(q), Some(path), None, _) => {
            (q, read_documents(path).map_err(anyhow::Error::from)?)
        }
        (Some(q), None, None, _) if cfg.decode.method == crate::Method::ClosedBook => (q, Vec::new()),
        (None, None, Some(id), Some(_)) => {
            let ex = dataset(&cfg)?
                .into_iter()
                .find(|e| e.id == id)
                .ok_or_else(|| CliError::Runtime(anyhow!("no example with id {id:?}")))?;
            (ex.question, ex.documents)
        }
        _ => {
            return Err(CliError::Usage(
                "decode needs --question with --docs, or --dataset with --id".into(),
            ))
        }
    };
    let documents: Vec<Document> = documents.into_iter().take(cfg.top_k).collect();
    let backend = connect(&cfg)?;
    let mut result = decode(&question, &documents, &cfg.decode, backend.as_ref())
        .map_err(anyhow::Error::from)?;
    if !trace {
        result.trace.rows.clear();
    }
    let out = json!({
        "config": config_echo(&cfg, backend.as_ref())?,
        "result": result,
    });
    println!("{}", serde_json::to_string_pretty(&out).map_err(anyhow::Error::from)?);
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn cmd_eval(args: &RunArgs, trace: bool) -> CliResult<()> {
    let cfg = args.resolve()?;
    let examples = dataset(&cfg)?;
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("eval_out"));
    let backend = connect(&cfg)?;
    let opts = EvalOptions {
        top_k: cfg.top_k,
        parallelism: cfg.parallelism,
    };
    let mut report = run_eval(&examples, &cfg.decode, backend.as_ref(), &opts)
        .map_err(anyhow::Error::from)?;
    report.config = config_echo(&cfg, backend.as_ref())?;
    let write = || -> anyhow::Result<()> {
        fs::create_dir_all(&out_dir)
            .with_context(|| format!("cannot create {}", out_dir.display()))?;
        let mut records = create(&out_dir.join("records.jsonl"))?;
        report.write_records(&mut records)?;
        records.flush()?;
        let mut summary = create(&out_dir.join("report.json"))?;
        report.write_summary(&mut summary)?;
        summary.flush()?;
        if trace {
            let mut traces = create(&out_dir.join("traces.jsonl"))?;
            report.write_traces(&mut traces)?;
            traces.flush()?;
        }
        Ok(())
    };
    write()?;
    println!(
        "EM {} ({} scored, {} skipped) -> {}",
        report.em_display(),
        report.aggregate.scored,
        report.aggregate.skipped,
        out_dir.display()
    );
    Ok(())
}

/// stdout unless --out names a file.
fn output(cfg: &RunConfig) -> anyhow::Result<Box<dyn Write>> {
    Ok(match &cfg.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn oracle_split(ex: &QAExample, distractors: usize) -> anyhow::Result<(Document, Vec<Document>)> {
    let oracle = ex
        .oracle_documents()
        .next()
        .cloned()
        .ok_or_else(|| anyhow!("example {} has no document flagged is_oracle", ex.id))?;
    let rest: Vec<Document> = ex
        .documents
        .iter()
        .filter(|d| !d.is_oracle())
        .take(distractors)
        .cloned()
        .collect();
    Ok((oracle, rest))
}

fn cmd_sweep(args: &RunArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    if cfg.top_k < 2 {
        return Err(CliError::Usage("sweep needs --top-k of at least 2".into()));
    }
    let examples = dataset(&cfg)?;
    let backend = connect(&cfg)?;
    let k = cfg.top_k;
    let mut correct = vec![0usize; k];
    let mut counted = 0usize;
    for ex in &examples {
        let (oracle, distractors) = oracle_split(ex, k - 1)?;
        if distractors.len() < k - 1 {
            log::warn!("example {} has fewer than {} distractors; skipped", ex.id, k - 1);
            continue;
        }
        let points = position_sweep(
            &oracle,
            &distractors,
            &ex.question,
            &ex.answers,
            &cfg.decode,
            backend.as_ref(),
        )
        .map_err(anyhow::Error::from)?;
        for p in points {
            correct[p.position] += usize::from(p.em);
        }
        counted += 1;
    }
    if counted == 0 {
        return Err(CliError::Runtime(anyhow!("no example has {} distractors", k - 1)));
    }
    let echo = config_echo(&cfg, backend.as_ref())?;
    let mut out = output(&cfg)?;
    let mut write = || -> anyhow::Result<()> {
        writeln!(out, "# config={}", serde_json::to_string(&echo)?)?;
        writeln!(out, "position,em,n")?;
        for (position, c) in correct.iter().enumerate() {
            let em = (100.0 * *c as f64 / counted as f64 * 100.0).round() / 100.0;
            writeln!(out, "{position},{em:.2},{counted}")?;
        }
        out.flush()?;
        Ok(())
    };
    Ok(write()?)
}

fn cmd_analyze(kind: AnalysisKind, args: &RunArgs, raw: bool, bins: usize) -> CliResult<()> {
    let cfg = args.resolve()?;
    let examples: Vec<QAExample> = dataset(&cfg)?
        .into_iter()
        .map(|mut ex| {
            ex.documents.truncate(cfg.top_k);
            ex
        })
        .collect();
    let backend = connect(&cfg)?;
    let echo = config_echo(&cfg, backend.as_ref())?;
    let mut out = output(&cfg)?;
    let mut lines: Vec<String> = Vec::new();
    match kind {
        AnalysisKind::EntropyGap | AnalysisKind::ScoreGap => {
            let gaps = if kind == AnalysisKind::EntropyGap {
                first_token_entropy_gap(&examples, &cfg.decode.template, backend.as_ref())
            } else {
                retriever_score_gap(&examples)
            }
            .map_err(anyhow::Error::from)?;
            if raw {
                lines.push("id,gap".into());
                lines.extend(examples.iter().zip(&gaps).map(|(ex, g)| format!("{},{g}", ex.id)));
            } else {
                lines.push("lo,hi,count".into());
                lines.extend(
                    histogram(&gaps, bins)
                        .into_iter()
                        .map(|b| format!("{},{},{}", b.lo, b.hi, b.count)),
                );
            }
        }
        AnalysisKind::LayerProfile => {
            let resolved = cfg
                .decode
                .resolved(backend.meta())
                .map_err(anyhow::Error::from)?;
            let layers = resolved.layer_strategy.candidate_layers.clone();
            let opts = EvalOptions {
                top_k: cfg.top_k,
                parallelism: cfg.parallelism,
            };
            let rows = layer_entropy_profile(&examples, &resolved, &layers, backend.as_ref(), &opts)
                .map_err(anyhow::Error::from)?;
            lines.push("layer,mean_entropy,em".into());
            lines.extend(rows.iter().map(|r| {
                let em = r.em.map(|e| format!("{e:.2}")).unwrap_or_default();
                format!("{},{},{em}", r.layer, r.mean_entropy)
            }));
        }
    }
    let mut write = || -> anyhow::Result<()> {
        writeln!(out, "# config={}", serde_json::to_string(&echo)?)?;
        for line in &lines {
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    };
    Ok(write()?)
}

fn cmd_fixture(
    examples: usize,
    documents: usize,
    seed: u64,
    recall_window: Option<usize>,
    out: &Path,
) -> CliResult<()> {
    if examples == 0 || documents == 0 {
        return Err(CliError::Usage("--examples and --documents must be positive".into()));
    }
    let mut fixture = fixtures::planted_dataset(examples, documents, seed);
    fixture.spec.recall_window = recall_window;
    let write = || -> anyhow::Result<()> {
        fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
        let mut data = create(&out.join("dataset.jsonl"))?;
        for ex in &fixture.examples {
            serde_json::to_writer(&mut data, ex)?;
            data.write_all(b"\n")?;
        }
        data.flush()?;
        let mut docs = create(&out.join("docs.jsonl"))?;
        for d in &fixture.examples[0].documents {
            serde_json::to_writer(&mut docs, d)?;
            docs.write_all(b"\n")?;
        }
        docs.flush()?;
        fs::write(out.join("mock.json"), serde_json::to_string_pretty(&fixture.spec)?)?;
        Ok(())
    };
    write()?;
    println!(
        "wrote {} examples to {}; first question: {}",
        examples,
        out.display(),
        fixture.examples[0].question
    );
    Ok(())
}
