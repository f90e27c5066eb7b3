//! Batch evaluation with Exact Match: answer normalization, a JSONL dataset
//! round trip, and the aggregate per method.
//!
//! `cargo run --example exact_match_eval`

use entrorag::evaluation::{exact_match, normalize_answer, read_dataset, run_eval, EvalOptions};
use entrorag::fixtures::planted_dataset;
use entrorag::{DecodeConfig, Method, MockBackend};

fn main() -> anyhow::Result<()> {
    for (pred, gold) in [("The  Paris.", "paris"), ("an Oslo", "Oslo"), ("Rome", "Roma")] {
        println!("{pred:?} -> {:?}, EM vs {gold:?} = {}", normalize_answer(pred), exact_match(pred, &[gold.to_string()]));
    }

    let fixture = planted_dataset(12, 5, 4);
    let mut jsonl = Vec::new();
    for ex in &fixture.examples {
        serde_json::to_writer(&mut jsonl, ex)?;
        jsonl.push(b'\n');
    }
    let examples = read_dataset(jsonl.as_slice()).collect::<Result<Vec<_>, _>>()?;
    let backend = MockBackend::new(fixture.spec.clone())?;
    let opts = EvalOptions { top_k: 5, parallelism: 4 };

    for method in Method::ALL {
        let report = run_eval(&examples, &DecodeConfig::with_method(method), &backend, &opts)?;
        let a = &report.aggregate;
        println!("{:<12} EM {:>6} ({} scored, {} skipped)", method.name(), report.em_display(), a.scored, a.skipped);
    }
    Ok(())
}
