//! First-token entropy of the answer-bearing document minus the mean over
//! distractors, alongside the retriever-score gap, as histograms.
//!
//! `cargo run --example entropy_gap`

use entrorag::evaluation::{first_token_entropy_gap, histogram, retriever_score_gap};
use entrorag::fixtures::planted_dataset;
use entrorag::{MockBackend, PromptTemplate};

fn main() -> anyhow::Result<()> {
    let fixture = planted_dataset(40, 5, 11);
    let backend = MockBackend::new(fixture.spec.clone())?;
    let gaps = first_token_entropy_gap(&fixture.examples, &PromptTemplate::default(), &backend)?;
    let scores = retriever_score_gap(&fixture.examples)?;

    let negative = gaps.iter().filter(|&&g| g < 0.0).count();
    println!("entropy gap < 0 for {negative}/{} examples", gaps.len());
    for (name, values) in [("entropy gap (nats)", &gaps), ("retriever score gap", &scores)] {
        println!("{name}");
        for bin in histogram(values, 8) {
            println!("  [{:>7.3}, {:>7.3})  {}", bin.lo, bin.hi, "#".repeat(bin.count));
        }
    }
    Ok(())
}
