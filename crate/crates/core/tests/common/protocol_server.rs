//! A local HTTP server speaking the remote logits protocol on top of any
//! in-process [`Backend`]. Logits are sent as 32-bit floats.

#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use entrorag::backend::remote::{ErrorBody, ErrorDetail, ForwardBody, TokenizeBody, TokensBody};
use entrorag::backend::{Backend, BackendError, ForwardRequest};
use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

#[derive(Default)]
pub struct Stats {
    pub requests: AtomicUsize,
    in_flight: AtomicUsize,
    pub peak_in_flight: AtomicUsize,
}

pub struct ProtocolServer {
    pub url: String,
    pub stats: Arc<Stats>,
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
}

impl ProtocolServer {
    pub fn start(backend: Arc<dyn Backend>) -> Self {
        Self::start_with(backend, 8, Duration::ZERO)
    }

    /// `delay` is slept inside every forward, to make overlapping requests observable.
    pub fn start_with(backend: Arc<dyn Backend>, workers: usize, delay: Duration) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind test server"));
        let url = format!("http://{}", server.server_addr().to_ip().expect("ip address"));
        let stats = Arc::new(Stats::default());
        let workers = (0..workers)
            .map(|_| {
                let (server, backend, stats) = (server.clone(), backend.clone(), stats.clone());
                std::thread::spawn(move || {
                    while let Ok(mut request) = server.recv() {
                        stats.requests.fetch_add(1, Ordering::SeqCst);
                        let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        stats.peak_in_flight.fetch_max(now, Ordering::SeqCst);
                        let mut body = String::new();
                        let (status, value) = match request.as_reader().read_to_string(&mut body) {
                            Ok(_) => handle(backend.as_ref(), request.url(), &body, delay),
                            Err(e) => error(400, "bad_request", &e.to_string()),
                        };
                        stats.in_flight.fetch_sub(1, Ordering::SeqCst);
                        let header = Header::from_bytes("Content-Type", "application/json").unwrap();
                        let response = Response::from_string(value.to_string())
                            .with_status_code(status)
                            .with_header(header);
                        let _ = request.respond(response);
                    }
                })
            })
            .collect();
        Self {
            url,
            stats,
            server,
            workers,
        }
    }
}

impl Drop for ProtocolServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn error(status: u16, code: &str, message: &str) -> (u16, Value) {
    let body = ErrorBody {
        error: ErrorDetail {
            code: code.into(),
            message: message.into(),
        },
    };
    (status, serde_json::to_value(body).unwrap())
}

fn backend_error(e: BackendError) -> (u16, Value) {
    let code = match e {
        BackendError::ContextLength { .. } => "context_length",
        BackendError::InvalidLayer { .. } => "invalid_layer",
        BackendError::InvalidToken(_) => "invalid_token",
        _ => return error(500, "internal", &e.to_string()),
    };
    error(400, code, &e.to_string())
}

fn handle(backend: &dyn Backend, path: &str, body: &str, delay: Duration) -> (u16, Value) {
    macro_rules! parse {
        ($t:ty) => {
            match serde_json::from_str::<$t>(body) {
                Ok(v) => v,
                Err(e) => return error(400, "bad_request", &e.to_string()),
            }
        };
    }
    match path {
        "/v1/meta" => (200, serde_json::to_value(backend.meta()).unwrap()),
        "/v1/tokenize" => {
            let req = parse!(TokenizeBody);
            match backend.tokenize(&req.text) {
                Ok(tokens) => (200, json!({ "tokens": tokens })),
                Err(e) => backend_error(e),
            }
        }
        "/v1/detokenize" => {
            let req = parse!(TokensBody);
            match backend.detokenize(&req.tokens) {
                Ok(text) => (200, json!({ "text": text })),
                Err(e) => backend_error(e),
            }
        }
        "/v1/forward" => {
            let req = parse!(ForwardBody);
            std::thread::sleep(delay);
            let req = ForwardRequest {
                tokens: req.tokens,
                layers: req.layers,
            };
            match backend.forward(&req) {
                Ok(resp) => {
                    let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
                    let layers: serde_json::Map<String, Value> = resp
                        .per_layer
                        .iter()
                        .map(|(l, v)| (l.to_string(), json!(f32s(v.as_slice()))))
                        .collect();
                    (200, json!({ "final": f32s(resp.final_logits.as_slice()), "layers": layers }))
                }
                Err(e) => backend_error(e),
            }
        }
        other => error(404, "not_found", &format!("no endpoint {other}")),
    }
}
