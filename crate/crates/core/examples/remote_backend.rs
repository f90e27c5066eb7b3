//! Decoding through the HTTP logits protocol. Without an argument a local
//! test server wrapping the mock model is started; pass a base URL to use a
//! running server instead.
//!
//! `cargo run --example remote_backend -- [http://host:port]`

#[path = "../tests/common/protocol_server.rs"]
mod protocol_server;

use std::sync::Arc;

use entrorag::fixtures::planted_dataset;
use entrorag::{decode, Backend, DecodeConfig, Method, MockBackend, RemoteBackend};

fn main() -> anyhow::Result<()> {
    let fixture = planted_dataset(1, 4, 2);
    let local = Arc::new(MockBackend::new(fixture.spec.clone())?);
    let _server;
    let url = match std::env::args().nth(1) {
        Some(url) => url,
        None => {
            let server = protocol_server::ProtocolServer::start(local.clone());
            let url = server.url.clone();
            _server = server;
            url
        }
    };
    let remote = RemoteBackend::connect(&url)?;
    println!("connected to {url}: {:?}", remote.meta());

    let ex = &fixture.examples[0];
    for method in [Method::Leens, Method::Clehe] {
        let cfg = DecodeConfig::with_method(method);
        let over_http = decode(&ex.question, &ex.documents, &cfg, &remote)?;
        let in_process = decode(&ex.question, &ex.documents, &cfg, local.as_ref())?;
        println!(
            "{:<6} remote {:?}, local {:?}, tokens equal: {}",
            method.name(),
            over_http.answer,
            in_process.answer,
            over_http.tokens == in_process.tokens
        );
    }
    Ok(())
}
