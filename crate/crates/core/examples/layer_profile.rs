//! Contrastive decoding with the prior pinned to each layer in turn,
//! reporting the mean entropy of the emitted distributions and EM. The
//! triggers are stripped so the context does not saturate every layer.
//!
//! `cargo run --example layer_profile`

use entrorag::evaluation::{layer_entropy_profile, EvalOptions};
use entrorag::fixtures::planted_dataset;
use entrorag::{Backend, DecodeConfig, Method, MockBackend};

fn main() -> anyhow::Result<()> {
    let fixture = planted_dataset(10, 4, 8);
    let backend = MockBackend::new(fixture.spec.clone())?;
    let layers: Vec<usize> = (1..=backend.meta().num_layers).collect();
    let cfg = DecodeConfig {
        beta: 0.25,
        max_new_tokens: 8,
        ..DecodeConfig::with_method(Method::Clehe)
    };
    let rows = layer_entropy_profile(&fixture.without_triggers(), &cfg, &layers, &backend, &EvalOptions::default())?;
    println!("layer  mean_entropy  em");
    for row in rows {
        let em = row.em.map_or("-".to_string(), |e| format!("{e:.2}"));
        println!("{:>5}  {:>12.4}  {em}", row.layer, row.mean_entropy);
    }
    Ok(())
}
