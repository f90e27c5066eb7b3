//! Entropy-weighted ensemble decoding over per-document prompts, with the
//! per-step trace showing how the confident document takes over.
//!
//! `cargo run --example leens_decode`

use entrorag::fixtures::planted_dataset;
use entrorag::{decode, DecodeConfig, Method, MockBackend};

fn main() -> anyhow::Result<()> {
    let fixture = planted_dataset(1, 5, 42);
    let backend = MockBackend::new(fixture.spec.clone())?;
    let ex = &fixture.examples[0];
    let oracle = ex.documents.iter().position(|d| d.is_oracle()).unwrap();

    let cfg = DecodeConfig {
        tau: 0.1,
        ..DecodeConfig::with_method(Method::Leens)
    };
    let result = decode(&ex.question, &ex.documents, &cfg, &backend)?;

    println!("question: {}", ex.question);
    println!("oracle document: #{oracle}");
    println!("answer: {:?} (gold {:?}), stop: {:?}", result.answer, ex.answers, result.stop_reason);
    println!("step  token  entropies                                  weights");
    for row in &result.trace.rows {
        let fmt = |v: &[f64], p: usize| {
            v.iter().map(|x| format!("{x:.p$}")).collect::<Vec<_>>().join(" ")
        };
        println!(
            "{:>4}  {:>5?}  {:<42} {}",
            row.step,
            char::from_u32(row.token).unwrap_or('?'),
            fmt(&row.entropies, 2),
            fmt(&row.weights, 3)
        );
    }
    Ok(())
}
