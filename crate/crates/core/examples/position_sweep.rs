//! Moves the answer-bearing document through every position. The mock's
//! limited recall window hides the middle of a long concatenated prompt,
//! so the concatenation baseline degrades there while the ensemble does not.
//!
//! `cargo run --example position_sweep -- [documents]`

use entrorag::evaluation::position_sweep;
use entrorag::fixtures::lost_in_the_middle;
use entrorag::{DecodeConfig, Method, MockBackend};

fn main() -> anyhow::Result<()> {
    let k: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let fixture = lost_in_the_middle(k, 3);
    let backend = MockBackend::new(fixture.spec.clone())?;
    let ex = &fixture.examples[0];
    let (oracle, distractors) = (&ex.documents[0], &ex.documents[1..]);

    println!("position  naive  leens");
    let naive = position_sweep(oracle, distractors, &ex.question, &ex.answers, &DecodeConfig::with_method(Method::Naive), &backend)?;
    let leens = position_sweep(oracle, distractors, &ex.question, &ex.answers, &DecodeConfig::with_method(Method::Leens), &backend)?;
    for (n, l) in naive.iter().zip(&leens) {
        println!("{:>8}  {:>5}  {:>5}", n.position, n.em, l.em);
    }
    Ok(())
}
