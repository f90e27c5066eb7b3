//! Ensemble decoding contrasted against the highest-entropy intermediate
//! layer of the no-context prompt. Shows the selected layer per step and
//! that `beta = 0` reproduces the plain ensemble.
//!
//! `cargo run --example clehe_contrast`

use entrorag::fixtures::planted_dataset;
use entrorag::{decode, DecodeConfig, LayerSelection, LayerStrategy, Method, MockBackend};

fn main() -> anyhow::Result<()> {
    let fixture = planted_dataset(1, 4, 7);
    let backend = MockBackend::new(fixture.spec.clone())?;
    let ex = &fixture.examples[0];

    let leens = decode(&ex.question, &ex.documents, &DecodeConfig::default(), &backend)?;
    println!("leens            -> {:?}", leens.answer);

    for (beta, layers) in [(0.0, vec![5, 6, 7, 8]), (0.25, vec![5, 6, 7, 8]), (5.0, vec![2, 4, 6, 8])] {
        let cfg = DecodeConfig {
            beta,
            layer_strategy: LayerStrategy::new(LayerSelection::MaxEntropy, layers.clone()),
            ..DecodeConfig::with_method(Method::Clehe)
        };
        let r = decode(&ex.question, &ex.documents, &cfg, &backend)?;
        let picked: Vec<usize> = r.trace.rows.iter().filter_map(|row| row.selected_layer).collect();
        println!("clehe beta {beta:<4} layers {layers:?} -> {:?}, selected {picked:?}", r.answer);
        if beta == 0.0 {
            assert_eq!(r.tokens, leens.tokens);
        }
    }
    Ok(())
}
