//! HTTP client for the remote logits protocol.
//!
//! Every endpoint is a `POST` with a JSON body:
//!
//! | path             | request                        | response |
//! |------------------|--------------------------------|----------|
//! | `/v1/meta`       | `{}`                           | `{"vocab_size","num_layers","max_context","name"}` |
//! | `/v1/tokenize`   | `{"text"}`                     | `{"tokens":[int]}` |
//! | `/v1/detokenize` | `{"tokens":[int]}`             | `{"text"}` |
//! | `/v1/forward`    | `{"tokens":[int],"layers":[int]}` | `{"final":[float],"layers":{"<idx>":[float]}}` |
//!
//! Failures come back as `{"error":{"code","message"}}` with a 4xx/5xx status.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendMeta, ForwardRequest, ForwardResponse, Result};
use crate::math::LogitVector;

#[derive(Debug, Serialize, Deserialize)]
pub struct TokenizeBody {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TokensBody {
    pub tokens: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ForwardBody {
    pub tokens: Vec<u32>,
    pub layers: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ForwardReply {
    #[serde(rename = "final")]
    pub final_logits: Vec<f64>,
    #[serde(default)]
    pub layers: HashMap<String, Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

/// Bounds the number of requests in flight at once.
#[derive(Debug)]
struct Gate {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(120),
            max_in_flight: 8,
        }
    }
}

#[derive(Debug)]
pub struct RemoteBackend {
    base_url: String,
    client: reqwest::blocking::Client,
    meta: BackendMeta,
    gate: Gate,
}

impl RemoteBackend {
    /// Connects and fetches the model metadata once.
    pub fn connect(base_url: &str) -> Result<Self> {
        Self::connect_with(base_url, RemoteOptions::default())
    }

    pub fn connect_with(base_url: &str, options: RemoteOptions) -> Result<Self> {
        let parsed = reqwest::Url::parse(base_url)
            .map_err(|e| BackendError::InvalidConfig(format!("bad base url {base_url:?}: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(BackendError::InvalidConfig(format!(
                "base url must be http(s), got {base_url:?}"
            )));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(options.timeout)
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let mut backend = Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            client,
            meta: BackendMeta {
                vocab_size: 0,
                num_layers: 0,
                max_context: 0,
                name: String::new(),
                eos_token: None,
            },
            gate: Gate {
                limit: options.max_in_flight.max(1),
                used: Mutex::new(0),
                freed: Condvar::new(),
            },
        };
        let meta: BackendMeta = backend.post("/v1/meta", &serde_json::json!({}))?;
        meta.validate()
            .map_err(|e| BackendError::Protocol(format!("bad metadata: {e}")))?;
        backend.meta = meta;
        Ok(backend)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let _slot = self.gate.acquire();
        let url = format!("{}{}", self.base_url, path);
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| BackendError::Unavailable(format!("{url}: {e}")))?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .map_err(|e| BackendError::Unavailable(format!("{url}: {e}")))?;
        if !status.is_success() {
            return Err(match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(ErrorBody { error }) => map_remote_error(status.as_u16(), error),
                Err(_) => BackendError::Remote {
                    status: status.as_u16(),
                    code: "unknown".into(),
                    message: String::from_utf8_lossy(&bytes).into_owned(),
                },
            });
        }
        serde_json::from_slice(&bytes)
            .map_err(|e| BackendError::Protocol(format!("{url}: malformed response: {e}")))
    }
}

fn map_remote_error(status: u16, error: ErrorDetail) -> BackendError {
    BackendError::Remote {
        status,
        code: error.code,
        message: error.message,
    }
}

impl Backend for RemoteBackend {
    fn meta(&self) -> &BackendMeta {
        &self.meta
    }

    fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        let reply: TokensBody = self.post(
            "/v1/tokenize",
            &TokenizeBody {
                text: text.to_string(),
            },
        )?;
        Ok(reply.tokens)
    }

    fn detokenize(&self, ids: &[u32]) -> Result<String> {
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.meta.vocab_size) {
            return Err(BackendError::InvalidToken(bad));
        }
        let reply: TokenizeBody = self.post(
            "/v1/detokenize",
            &TokensBody {
                tokens: ids.to_vec(),
            },
        )?;
        Ok(reply.text)
    }

    fn forward(&self, req: &ForwardRequest) -> Result<ForwardResponse> {
        req.validate(&self.meta)?;
        let reply: ForwardReply = self.post(
            "/v1/forward",
            &ForwardBody {
                tokens: req.tokens.clone(),
                layers: req.layers.clone(),
            },
        )?;
        let logits = |v: Vec<f64>| {
            LogitVector::new(v).map_err(|e| BackendError::Protocol(format!("bad logits: {e}")))
        };
        let mut per_layer = BTreeMap::new();
        for (key, values) in reply.layers {
            let layer: usize = key
                .parse()
                .map_err(|_| BackendError::Protocol(format!("bad layer key {key:?}")))?;
            per_layer.insert(layer, logits(values)?);
        }
        let resp = ForwardResponse {
            final_logits: logits(reply.final_logits)?,
            per_layer,
        };
        resp.validate(req, &self.meta)?;
        Ok(resp)
    }
}
