//! Run configuration: named hyperparameter presets, an optional TOML file,
//! and command-line overrides, merged in that order (later wins).
//!
//! ```toml
//! preset = "llama2-7b"
//! method = "clehe"
//! layers = "17-32:even"
//! backend = "remote"
//! base_url = "http://127.0.0.1:8080"
//! top_k = 10
//!
//! [template]
//! question = "Question: {question}\nAnswer:"
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, MockBackend, MockModelSpec, RemoteBackend};
use crate::contrast::{parse_layer_list, LayerSelection, LayerStrategy};
use crate::decoder::{DecodeConfig, Method, OverflowPolicy};
use crate::prompting::PromptTemplate;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unknown preset {0:?} (known: llama2-7b, llama2-13b, mistral-7b, llama3-8b)")]
    UnknownPreset(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            "remote" => Ok(Self::Remote),
            other => Err(format!("unknown backend {other:?} (expected mock or remote)")),
        }
    }
}

/// Template overrides; unset fields keep the default wording.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateOverrides {
    pub instruction: Option<String>,
    pub document: Option<String>,
    pub untitled_document: Option<String>,
    pub indexed_document: Option<String>,
    pub indexed_untitled_document: Option<String>,
    pub question: Option<String>,
}

impl TemplateOverrides {
    pub fn apply(&self, mut t: PromptTemplate) -> PromptTemplate {
        let set = |slot: &mut String, v: &Option<String>| {
            if let Some(v) = v {
                slot.clone_from(v);
            }
        };
        set(&mut t.instruction, &self.instruction);
        set(&mut t.document, &self.document);
        set(&mut t.untitled_document, &self.untitled_document);
        set(&mut t.indexed_document, &self.indexed_document);
        set(&mut t.indexed_untitled_document, &self.indexed_untitled_document);
        set(&mut t.question, &self.question);
        t
    }
}

/// Every setting a run can take, all optional. Used for the config file
/// and for command-line flags alike.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub preset: Option<String>,
    pub method: Option<String>,
    pub tau: Option<f64>,
    pub beta: Option<f64>,
    pub layers: Option<String>,
    pub layer_strategy: Option<String>,
    pub max_new_tokens: Option<usize>,
    pub overflow: Option<String>,
    pub backend: Option<BackendKind>,
    pub base_url: Option<String>,
    pub seed: Option<u64>,
    pub mock_spec: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub top_k: Option<usize>,
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub template: TemplateOverrides,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field; } )*
    };
}

impl Settings {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// `top` wins wherever it sets a value.
    pub fn merge(mut self, top: Settings) -> Settings {
        overlay!(self, top; preset, method, tau, beta, layers, layer_strategy, max_new_tokens,
            overflow, backend, base_url, seed, mock_spec, dataset, out, top_k, parallelism);
        let (base, over) = (&mut self.template, top.template);
        overlay!(base, over; instruction, document, untitled_document, indexed_document,
            indexed_untitled_document, question);
        self
    }
}

/// Hyperparameters tuned per model family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub tau: f64,
    pub beta: f64,
    pub layers: &'static str,
}

pub const PRESETS: [Preset; 4] = [
    Preset { name: "llama2-7b", tau: 0.1, beta: 5.0, layers: "17-32:even" },
    Preset { name: "llama2-13b", tau: 0.1, beta: 0.25, layers: "31-40" },
    Preset { name: "mistral-7b", tau: 0.1, beta: 0.25, layers: "17-32:even" },
    Preset { name: "llama3-8b", tau: 0.25, beta: 0.25, layers: "17-32:even" },
];

pub fn preset(name: &str) -> Result<Preset> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .copied()
        .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendChoice {
    /// `seed` replaces the spec file's seed when set.
    Mock { seed: Option<u64>, spec: Option<PathBuf> },
    Remote { base_url: String },
}

impl fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendChoice::Mock { seed: Some(seed), .. } => write!(f, "mock(seed={seed})"),
            BackendChoice::Mock { seed: None, .. } => f.write_str("mock"),
            BackendChoice::Remote { base_url } => write!(f, "remote({base_url})"),
        }
    }
}

impl BackendChoice {
    /// Builds the backend. A mock spec file is JSON.
    pub fn connect(&self) -> std::result::Result<Box<dyn Backend>, BackendError> {
        match self {
            BackendChoice::Mock { seed, spec } => {
                let mut model = match spec {
                    Some(path) => {
                        let text = std::fs::read_to_string(path).map_err(|e| {
                            BackendError::InvalidConfig(format!("{}: {e}", path.display()))
                        })?;
                        serde_json::from_str::<MockModelSpec>(&text).map_err(|e| {
                            BackendError::InvalidConfig(format!("{}: {e}", path.display()))
                        })?
                    }
                    None => MockModelSpec::default(),
                };
                if let Some(seed) = seed {
                    model.seed = *seed;
                }
                Ok(Box::new(MockBackend::new(model)?))
            }
            BackendChoice::Remote { base_url } => Ok(Box::new(RemoteBackend::connect(base_url)?)),
        }
    }
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub backend: BackendChoice,
    pub decode: DecodeConfig,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub top_k: usize,
    pub parallelism: usize,
    pub preset: Option<String>,
}

impl RunConfig {
    pub fn resolve(settings: &Settings) -> Result<RunConfig> {
        let invalid = |m: String| ConfigError::Invalid(m);
        let mut decode = DecodeConfig::default();
        let mut layers = None;
        if let Some(name) = &settings.preset {
            let p = preset(name)?;
            decode.tau = p.tau;
            decode.beta = p.beta;
            layers = Some(p.layers.to_string());
        }
        if let Some(m) = &settings.method {
            decode.method = m.parse::<Method>().map_err(invalid)?;
        }
        if let Some(tau) = settings.tau {
            decode.tau = tau;
        }
        if let Some(beta) = settings.beta {
            decode.beta = beta;
        }
        if let Some(n) = settings.max_new_tokens {
            decode.max_new_tokens = n;
        }
        if let Some(o) = &settings.overflow {
            decode.overflow = o.parse::<OverflowPolicy>().map_err(invalid)?;
        }
        if settings.layers.is_some() {
            layers.clone_from(&settings.layers);
        }
        let candidates = match &layers {
            Some(spec) => parse_layer_list(spec).map_err(invalid)?,
            None => Vec::new(),
        };
        let selection = match &settings.layer_strategy {
            Some(s) => s.parse::<LayerSelection>().map_err(invalid)?,
            None => LayerSelection::MaxEntropy,
        };
        decode.layer_strategy = LayerStrategy::new(selection, candidates);
        decode.template = settings.template.apply(PromptTemplate::default());

        let backend = match settings.backend.unwrap_or(BackendKind::Mock) {
            BackendKind::Mock => {
                if settings.base_url.is_some() {
                    return Err(invalid("--base-url needs --backend remote".into()));
                }
                BackendChoice::Mock {
                    seed: settings.seed,
                    spec: settings.mock_spec.clone(),
                }
            }
            BackendKind::Remote => {
                let url = settings
                    .base_url
                    .clone()
                    .ok_or_else(|| invalid("remote backend needs a base url".into()))?;
                let parsed = reqwest::Url::parse(&url)
                    .map_err(|e| invalid(format!("malformed base url {url:?}: {e}")))?;
                if !matches!(parsed.scheme(), "http" | "https") {
                    return Err(invalid(format!("base url {url:?} must be http or https")));
                }
                if settings.mock_spec.is_some() {
                    return Err(invalid("--mock-spec needs --backend mock".into()));
                }
                BackendChoice::Remote { base_url: url }
            }
        };
        let top_k = settings.top_k.unwrap_or(5);
        if top_k == 0 {
            return Err(invalid("top-k must be at least 1".into()));
        }
        Ok(RunConfig {
            backend,
            decode,
            dataset: settings.dataset.clone(),
            out: settings.out.clone(),
            top_k,
            parallelism: settings.parallelism.unwrap_or(1).max(1),
            preset: settings.preset.clone(),
        })
    }
}
