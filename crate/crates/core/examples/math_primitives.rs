//! Numeric building blocks: stable log-softmax, entropy, divergence,
//! entropy weights, the product-of-experts step and the contrast step.
//!
//! `cargo run --example math_primitives`

use entrorag::contrast::contrast_step;
use entrorag::ensemble::{ensemble_step, entropy_weights, uniform_weights};
use entrorag::math::{entropy_of_logprobs, jensen_shannon_divergence, log_softmax, softmax};
use entrorag::LogitVector;

fn main() -> anyhow::Result<()> {
    // extreme logits stay finite
    let confident = log_softmax(&LogitVector::new(vec![1000.0, 0.0, -1000.0, 0.0])?)?;
    let unsure = log_softmax(&LogitVector::new(vec![0.2, 0.1, 0.0, 0.1])?)?;
    println!("confident log-probs {:?}", confident.as_slice());

    let h = [entropy_of_logprobs(&confident), entropy_of_logprobs(&unsure)];
    println!("entropies (nats)    {:.6} {:.6}, ln 4 = {:.6}", h[0], h[1], 4f64.ln());

    let jsd = jensen_shannon_divergence(&confident.to_probs(), &unsure.to_probs())?;
    println!("JSD                 {jsd:.6} (bound ln 2 = {:.6})", 2f64.ln());

    let t2 = softmax(&LogitVector::new(vec![2.0, 1.0, 0.0, 0.0])?, 2.0)?;
    println!("softmax at T=2      {:?}", t2.as_slice());

    for tau in [0.1, 1.0, 10.0] {
        let w = entropy_weights(&h, tau)?;
        println!("tau {tau:>4}: entropy weights {:?}", w.as_slice());
    }

    let docs = [confident, unsure];
    let ens = ensemble_step(&docs, &entropy_weights(&h, 0.1)?)?;
    let avg = ensemble_step(&docs, &uniform_weights(2)?)?;
    println!("entropy-weighted    {:?}", ens.to_probs().as_slice());
    println!("uniform             {:?}", avg.to_probs().as_slice());

    let prior = log_softmax(&LogitVector::new(vec![0.0, 3.0, 0.0, 0.0])?)?;
    for beta in [0.0, 0.25, 5.0] {
        let c = contrast_step(&avg, &prior, beta)?;
        println!("contrast beta {beta:>4}: {:?}", c.to_probs().as_slice());
    }
    Ok(())
}
