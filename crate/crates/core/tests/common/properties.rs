//! Randomized invariants for the math, ensemble and contrast layers.
//!
//! Each property runs on a deterministic proptest runner so failures
//! reproduce. `tests/properties.rs` and the acceptance target share them.

use entrorag::contrast::{
    contrast_step, select_layer_max_entropy, select_layer_max_jsd, LayerDistributionSet,
};
use entrorag::ensemble::{
    ensemble_step, entropy_weights, retriever_weights, DocumentWeights,
};
use entrorag::math::{
    self, argmax, entropy, entropy_of_logprobs, jensen_shannon_divergence, log_softmax, logsumexp,
    softmax, weighted_logprob_sum, LogProbVector, LogitVector, ProbVector,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

type Check = std::result::Result<(), TestCaseError>;

pub type Property = (&'static str, fn(u32) -> Result<(), String>);

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Check) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn logits(len: impl Into<proptest::collection::SizeRange>) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-30.0..30.0f64, len)
}

/// Multiples of 0.01, so distinct entries stay distinct through monotone maps.
fn quantized(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3000i32..3000, len)
        .prop_map(|v| v.into_iter().map(|x| x as f64 / 100.0).collect())
}

fn lp_of(v: Vec<f64>) -> LogProbVector {
    log_softmax(&LogitVector::new(v).unwrap()).unwrap()
}

fn probs_of(v: Vec<f64>) -> ProbVector {
    softmax(&LogitVector::new(v).unwrap(), 1.0).unwrap()
}

/// `k` documents over a vocabulary of `v`, as log-probabilities.
fn ensemble_inputs() -> impl Strategy<Value = Vec<LogProbVector>> {
    (1usize..8, 2usize..32).prop_flat_map(|(k, v)| {
        proptest::collection::vec(logits(v), k)
            .prop_map(|docs| docs.into_iter().map(lp_of).collect())
    })
}

fn weights_for(k: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0..1.0f64, k).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            vec![1.0 / raw.len() as f64; raw.len()]
        } else {
            raw.iter().map(|x| x / total).collect()
        }
    })
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            (x == y) || (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0)
        })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn log_softmax_normalized_and_shift_invariant(cases: u32) -> Result<(), String> {
    run(cases, (logits(1..64), -1000.0..1000.0f64), |(x, c)| {
        let lp = lp_of(x.clone());
        prop_assert!(logsumexp(lp.as_slice()).abs() <= 1e-9);
        prop_assert!(lp.as_slice().iter().all(|&v| v <= 1e-12));
        let shifted = lp_of(x.iter().map(|v| v + c).collect());
        prop_assert!(
            max_diff(lp.as_slice(), shifted.as_slice()) <= 1e-9,
            "shift by {c} moved log-probs by {}",
            max_diff(lp.as_slice(), shifted.as_slice())
        );
        Ok(())
    })
}

pub fn softmax_normalized_at_any_temperature(cases: u32) -> Result<(), String> {
    run(cases, (logits(1..64), 0.01..100.0f64), |(x, t)| {
        let p = softmax(&LogitVector::new(x).unwrap(), t).unwrap();
        let total: f64 = p.as_slice().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        prop_assert!(p.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        Ok(())
    })
}

pub fn softmax_of_log_softmax_is_softmax(cases: u32) -> Result<(), String> {
    run(cases, logits(1..64), |x| {
        let direct = softmax(&LogitVector::new(x.clone()).unwrap(), 1.0).unwrap();
        let lp = lp_of(x);
        let twice = softmax(&LogitVector::new(lp.into_inner()).unwrap(), 1.0).unwrap();
        prop_assert!(max_diff(direct.as_slice(), twice.as_slice()) <= 1e-9);
        Ok(())
    })
}

pub fn temperature_preserves_argmax(cases: u32) -> Result<(), String> {
    run(cases, ((1usize..64).prop_flat_map(quantized), 0.01..100.0f64), |(x, t)| {
        let p = softmax(&LogitVector::new(x.clone()).unwrap(), t).unwrap();
        prop_assert_eq!(p.argmax(), argmax(&x));
        Ok(())
    })
}

pub fn entropy_bounded_by_log_vocab(cases: u32) -> Result<(), String> {
    run(cases, logits(1..64), |x| {
        let n = x.len() as f64;
        let h = entropy(&probs_of(x));
        prop_assert!(h >= 0.0 && h <= n.ln() + 1e-12, "H = {h}, ln n = {}", n.ln());
        Ok(())
    })
}

pub fn entropy_permutation_invariant(cases: u32) -> Result<(), String> {
    let strategy = logits(1..64).prop_flat_map(|x| (Just(x.clone()), Just(x).prop_shuffle()));
    run(cases, strategy, |(x, shuffled)| {
        let a = entropy(&probs_of(x));
        let b = entropy(&probs_of(shuffled));
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        Ok(())
    })
}

pub fn entropy_maximal_only_at_uniform(cases: u32) -> Result<(), String> {
    run(cases, logits(2..64), |x| {
        let n = x.len();
        let uniform = ProbVector::new(vec![1.0 / n as f64; n]).unwrap();
        prop_assert!((entropy(&uniform) - (n as f64).ln()).abs() <= 1e-12);
        let p = probs_of(x);
        let spread = p.as_slice().iter().map(|v| (v - 1.0 / n as f64).abs()).fold(0.0, f64::max);
        if spread > 1e-3 {
            prop_assert!(entropy(&p) < (n as f64).ln());
        }
        Ok(())
    })
}

pub fn entropy_from_logprobs_agrees(cases: u32) -> Result<(), String> {
    run(cases, logits(1..64), |x| {
        let lp = lp_of(x);
        let a = entropy_of_logprobs(&lp);
        let b = entropy(&lp.to_probs());
        prop_assert!((a - b).abs() <= 1e-9);
        Ok(())
    })
}

pub fn jsd_symmetric_and_bounded(cases: u32) -> Result<(), String> {
    let strategy = (2usize..64).prop_flat_map(|n| (logits(n), logits(n)));
    run(cases, strategy, |(x, y)| {
        let (p, q) = (probs_of(x), probs_of(y));
        let pq = jensen_shannon_divergence(&p, &q).unwrap();
        let qp = jensen_shannon_divergence(&q, &p).unwrap();
        prop_assert!((pq - qp).abs() <= 1e-12);
        prop_assert!((0.0..=std::f64::consts::LN_2).contains(&pq));
        prop_assert!(jensen_shannon_divergence(&p, &p).unwrap().abs() <= 1e-12);
        Ok(())
    })
}

pub fn weighted_sum_linear_in_weights(cases: u32) -> Result<(), String> {
    let strategy = ensemble_inputs().prop_flat_map(|docs| {
        let k = docs.len();
        (Just(docs), weights_for(k), weights_for(k), 0.0..=1.0f64)
    });
    run(cases, strategy, |(docs, w, v, a)| {
        let mix: Vec<f64> = w.iter().zip(&v).map(|(x, y)| a * x + (1.0 - a) * y).collect();
        let total: f64 = mix.iter().sum();
        let mix: Vec<f64> = mix.iter().map(|m| m / total).collect();
        let s_mix = weighted_logprob_sum(&docs, &mix).unwrap();
        let s_w = weighted_logprob_sum(&docs, &w).unwrap();
        let s_v = weighted_logprob_sum(&docs, &v).unwrap();
        let expected: Vec<f64> = s_w
            .as_slice()
            .iter()
            .zip(s_v.as_slice())
            .map(|(x, y)| (a * x + (1.0 - a) * y) / total)
            .collect();
        prop_assert!(close(s_mix.as_slice(), &expected, 1e-9));
        Ok(())
    })
}

fn permuted(k: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..k).collect::<Vec<usize>>()).prop_shuffle()
}

pub fn weighted_sum_permutation_equivariant(cases: u32) -> Result<(), String> {
    let strategy = ensemble_inputs().prop_flat_map(|docs| {
        let k = docs.len();
        (Just(docs), weights_for(k), permuted(k))
    });
    run(cases, strategy, |(docs, w, perm)| {
        let a = weighted_logprob_sum(&docs, &w).unwrap();
        let pd: Vec<LogProbVector> = perm.iter().map(|&i| docs[i].clone()).collect();
        let pw: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
        let b = weighted_logprob_sum(&pd, &pw).unwrap();
        prop_assert!(close(a.as_slice(), b.as_slice(), 1e-9));
        Ok(())
    })
}

fn quantized_entropies() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0u32..10_000, 1..16)
        .prop_map(|v| v.into_iter().map(|h| h as f64 / 1000.0).collect())
}

pub fn entropy_weights_normalized_and_monotone(cases: u32) -> Result<(), String> {
    run(cases, (quantized_entropies(), 0.05..5.0f64), |(h, tau)| {
        let w = entropy_weights(&h, tau).unwrap();
        let w = w.as_slice();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for i in 0..h.len() {
            for j in 0..h.len() {
                if h[i] < h[j] {
                    prop_assert!(w[i] > w[j], "H {} < {} but w {} <= {}", h[i], h[j], w[i], w[j]);
                }
                if h[i] == h[j] {
                    prop_assert_eq!(w[i], w[j]);
                }
            }
        }
        Ok(())
    })
}

pub fn entropy_weights_sharpen_as_tau_shrinks(cases: u32) -> Result<(), String> {
    let strategy = (quantized_entropies(), 0.05..5.0f64, 0.05..5.0f64).prop_filter(
        "unique minimum",
        |(h, _, _)| {
            let min = h.iter().copied().fold(f64::INFINITY, f64::min);
            h.iter().filter(|&&x| x == min).count() == 1
        },
    );
    run(cases, strategy, |(h, t1, t2)| {
        let (hi, lo) = (t1.max(t2), t1.min(t2));
        let best = argmax(&h.iter().map(|x| -x).collect::<Vec<_>>());
        let w_hi = entropy_weights(&h, hi).unwrap().as_slice()[best];
        let w_lo = entropy_weights(&h, lo).unwrap().as_slice()[best];
        prop_assert!(w_lo >= w_hi - 1e-12, "tau {lo}: {w_lo} < tau {hi}: {w_hi}");
        let gap = h
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != best)
            .map(|(_, &x)| x - h[best])
            .fold(f64::INFINITY, f64::min);
        if gap.is_finite() {
            let w_sharp = entropy_weights(&h, gap / 50.0).unwrap().as_slice()[best];
            prop_assert!(w_sharp >= 1.0 - 1e-9, "weight {w_sharp} at tau {}", gap / 50.0);
        }
        Ok(())
    })
}

pub fn retriever_weights_shift_invariant(cases: u32) -> Result<(), String> {
    run(cases, (logits(1..16), -100.0..100.0f64), |(s, c)| {
        let a = retriever_weights(&s).unwrap();
        let b = retriever_weights(&s.iter().map(|x| x + c).collect::<Vec<_>>()).unwrap();
        prop_assert!((a.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(max_diff(a.as_slice(), b.as_slice()) <= 1e-9);
        Ok(())
    })
}

pub fn ensemble_step_is_normalized(cases: u32) -> Result<(), String> {
    let strategy = ensemble_inputs().prop_flat_map(|docs| {
        let k = docs.len();
        (Just(docs), weights_for(k))
    });
    run(cases, strategy, |(docs, w)| {
        let out = ensemble_step(&docs, &DocumentWeights::new(w).unwrap()).unwrap();
        prop_assert!(logsumexp(out.as_slice()).abs() <= 1e-9);
        Ok(())
    })
}

pub fn ensemble_step_permutation_invariant(cases: u32) -> Result<(), String> {
    let strategy = ensemble_inputs().prop_flat_map(|docs| {
        let k = docs.len();
        (Just(docs), weights_for(k), permuted(k))
    });
    run(cases, strategy, |(docs, w, perm)| {
        let a = ensemble_step(&docs, &DocumentWeights::new(w.clone()).unwrap()).unwrap();
        let pd: Vec<LogProbVector> = perm.iter().map(|&i| docs[i].clone()).collect();
        let pw: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
        let b = ensemble_step(&pd, &DocumentWeights::new(pw).unwrap()).unwrap();
        prop_assert!(max_diff(a.as_slice(), b.as_slice()) <= 1e-6);
        Ok(())
    })
}

pub fn ensemble_of_identical_documents_is_that_document(cases: u32) -> Result<(), String> {
    let strategy = (logits(2..32), 1usize..8).prop_flat_map(|(x, k)| (Just(x), weights_for(k)));
    run(cases, strategy, |(x, w)| {
        let lp = lp_of(x);
        let docs = vec![lp.clone(); w.len()];
        let out = ensemble_step(&docs, &DocumentWeights::new(w).unwrap()).unwrap();
        prop_assert!(max_diff(out.as_slice(), lp.as_slice()) <= 1e-9);
        Ok(())
    })
}

fn contrast_inputs() -> impl Strategy<Value = (LogProbVector, LogProbVector, f64)> {
    (2usize..32).prop_flat_map(|n| {
        (
            quantized(n).prop_map(lp_of),
            quantized(n).prop_map(lp_of),
            0.0..10.0f64,
        )
    })
}

pub fn contrast_step_is_normalized(cases: u32) -> Result<(), String> {
    run(cases, contrast_inputs(), |(ens, prior, beta)| {
        let out = contrast_step(&ens, &prior, beta).unwrap();
        prop_assert!(logsumexp(out.as_slice()).abs() <= 1e-9);
        Ok(())
    })
}

pub fn contrast_amplifies_monotonically(cases: u32) -> Result<(), String> {
    run(cases, contrast_inputs(), |(ens, prior, beta)| {
        let out = contrast_step(&ens, &prior, beta).unwrap();
        let (e, p, o) = (ens.as_slice(), prior.as_slice(), out.as_slice());
        for i in 0..e.len() {
            for j in 0..e.len() {
                if e[i] > e[j] && p[i] <= p[j] {
                    prop_assert!(o[i] > o[j], "tokens {i},{j} at beta {beta}");
                }
            }
        }
        Ok(())
    })
}

pub fn contrast_is_continuous_in_beta(cases: u32) -> Result<(), String> {
    run(cases, contrast_inputs(), |(ens, prior, beta)| {
        let zero = contrast_step(&ens, &prior, 0.0).unwrap();
        prop_assert!(max_diff(zero.as_slice(), ens.as_slice()) <= 1e-12);
        let delta = 1e-9;
        let a = contrast_step(&ens, &prior, beta).unwrap();
        let b = contrast_step(&ens, &prior, beta + delta).unwrap();
        let slope = 2.0 * max_diff(ens.as_slice(), prior.as_slice());
        prop_assert!(max_diff(a.as_slice(), b.as_slice()) <= delta * slope + 1e-9);
        Ok(())
    })
}

pub fn contrast_against_itself_is_identity(cases: u32) -> Result<(), String> {
    run(cases, contrast_inputs(), |(ens, _, beta)| {
        let out = contrast_step(&ens, &ens, beta).unwrap();
        prop_assert!(max_diff(out.as_slice(), ens.as_slice()) <= 1e-9);
        Ok(())
    })
}

fn layer_sets() -> impl Strategy<Value = (LayerDistributionSet, Vec<usize>, LogProbVector)> {
    (2usize..16, proptest::collection::btree_set(1usize..=40, 1..16)).prop_flat_map(|(v, layers)| {
        let layers: Vec<usize> = layers.into_iter().collect();
        (
            Just(layers.clone()),
            proptest::collection::vec(logits(v), layers.len()),
            logits(v),
        )
            .prop_map(|(layers, dists, ens)| {
                let set: LayerDistributionSet = layers
                    .iter()
                    .copied()
                    .zip(dists.into_iter().map(lp_of))
                    .collect();
                (set, layers, lp_of(ens))
            })
    })
}

pub fn max_entropy_layer_is_a_maximizing_candidate(cases: u32) -> Result<(), String> {
    run(cases, layer_sets(), |(set, layers, _)| {
        let chosen = select_layer_max_entropy(&set).unwrap();
        prop_assert!(layers.contains(&chosen));
        let h = |l: usize| entropy_of_logprobs(set.get(l).unwrap());
        prop_assert!(layers.iter().all(|&l| h(l) <= h(chosen)));
        prop_assert_eq!(select_layer_max_entropy(&set).unwrap(), chosen);
        Ok(())
    })
}

pub fn max_jsd_layer_is_a_maximizing_candidate(cases: u32) -> Result<(), String> {
    run(cases, layer_sets(), |(set, layers, ens)| {
        let chosen = select_layer_max_jsd(&set, &ens).unwrap();
        prop_assert!(layers.contains(&chosen));
        let d = |l: usize| {
            math::jensen_shannon_divergence(&ens.to_probs(), &set.get(l).unwrap().to_probs()).unwrap()
        };
        prop_assert!(layers.iter().all(|&l| d(l) <= d(chosen)));
        Ok(())
    })
}

pub const ALL: &[Property] = &[
    ("log_softmax normalized and shift invariant", log_softmax_normalized_and_shift_invariant),
    ("softmax normalized at any temperature", softmax_normalized_at_any_temperature),
    ("softmax of log_softmax equals softmax", softmax_of_log_softmax_is_softmax),
    ("temperature preserves argmax", temperature_preserves_argmax),
    ("entropy within [0, ln n]", entropy_bounded_by_log_vocab),
    ("entropy permutation invariant", entropy_permutation_invariant),
    ("entropy maximal only at uniform", entropy_maximal_only_at_uniform),
    ("entropy from log-probs agrees", entropy_from_logprobs_agrees),
    ("JSD symmetric, bounded, zero on equal inputs", jsd_symmetric_and_bounded),
    ("weighted sum linear in weights", weighted_sum_linear_in_weights),
    ("weighted sum permutation equivariant", weighted_sum_permutation_equivariant),
    ("entropy weights normalized and strictly monotone", entropy_weights_normalized_and_monotone),
    ("entropy weights sharpen as tau shrinks", entropy_weights_sharpen_as_tau_shrinks),
    ("retriever weights shift invariant", retriever_weights_shift_invariant),
    ("ensemble step normalized", ensemble_step_is_normalized),
    ("ensemble step permutation invariant", ensemble_step_permutation_invariant),
    ("ensemble of identical documents is idempotent", ensemble_of_identical_documents_is_that_document),
    ("contrast step normalized", contrast_step_is_normalized),
    ("contrast amplifies monotonically", contrast_amplifies_monotonically),
    ("contrast continuous in beta, exact at zero", contrast_is_continuous_in_beta),
    ("contrast against itself is identity", contrast_against_itself_is_identity),
    ("max-entropy layer maximizes over candidates", max_entropy_layer_is_a_maximizing_candidate),
    ("max-JSD layer maximizes over candidates", max_jsd_layer_is_a_maximizing_candidate),
];
