//! Every decoding method on the same planted example, with and without the
//! planted trigger in the context.
//!
//! `cargo run --example baselines_compare`

use entrorag::evaluation::exact_match;
use entrorag::fixtures::planted_dataset;
use entrorag::{decode, DecodeConfig, Method, MockBackend};

fn main() -> anyhow::Result<()> {
    let fixture = planted_dataset(1, 5, 3);
    let backend = MockBackend::new(fixture.spec.clone())?;
    let planted = &fixture.examples[0];
    let stripped = &fixture.without_triggers()[0];
    println!("gold: {:?}", planted.answers);
    println!("{:<12} {:<16} without trigger", "method", "with trigger");
    for method in Method::ALL {
        let cfg = DecodeConfig::with_method(method);
        let a = decode(&planted.question, &planted.documents, &cfg, &backend)?;
        let b = decode(&stripped.question, &stripped.documents, &cfg, &backend)?;
        let em = exact_match(&b.answer, &stripped.answers);
        let shown: String = format!("{:?}", a.answer).chars().take(16).collect();
        println!("{:<12} {shown:<16} EM {em}, {} tokens, stop {:?}", method.name(), b.tokens.len(), b.stop_reason);
    }
    Ok(())
}
