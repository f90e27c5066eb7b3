//! Contrast of the ensemble distribution against a no-context layer
//! distribution, plus the layer selection strategies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::math::{self, LogProbVector, LogitVector, MathError, ProbVector, Result};

/// Which no-context layer distribution is contrasted against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelection {
    /// The candidate layer whose distribution has the highest entropy.
    MaxEntropy,
    /// The model's own final-layer output.
    LastLayer,
    /// The candidate layer furthest (in Jensen-Shannon divergence) from the ensemble.
    MaxJsd,
    /// Always the given layer.
    Fixed(usize),
}

impl fmt::Display for LayerSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSelection::MaxEntropy => f.write_str("max-entropy"),
            LayerSelection::LastLayer => f.write_str("last"),
            LayerSelection::MaxJsd => f.write_str("max-jsd"),
            LayerSelection::Fixed(l) => write!(f, "fixed:{l}"),
        }
    }
}

impl FromStr for LayerSelection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "max-entropy" | "max_entropy" => Ok(Self::MaxEntropy),
            "last" | "last-layer" | "last_layer" => Ok(Self::LastLayer),
            "max-jsd" | "max_jsd" => Ok(Self::MaxJsd),
            other => match other.strip_prefix("fixed:") {
                Some(n) => n
                    .parse()
                    .map(Self::Fixed)
                    .map_err(|_| format!("bad layer index in {other:?}")),
                None => Err(format!(
                    "unknown layer strategy {other:?} (expected max-entropy, last, max-jsd or fixed:N)"
                )),
            },
        }
    }
}

/// Layer selection together with the candidate layer set it searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStrategy {
    pub selection: LayerSelection,
    /// Ascending, deduplicated, 1-based layer indices.
    pub candidate_layers: Vec<usize>,
}

impl LayerStrategy {
    pub fn new(selection: LayerSelection, mut candidate_layers: Vec<usize>) -> Self {
        candidate_layers.sort_unstable();
        candidate_layers.dedup();
        Self {
            selection,
            candidate_layers,
        }
    }

    /// Checks the strategy against a model with `num_layers` layers.
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        let in_range = |l: usize| l >= 1 && l <= num_layers;
        match self.selection {
            LayerSelection::Fixed(l) if !in_range(l) => {
                return Err(MathError::InvalidParameter(format!(
                    "layer {l} outside 1..={num_layers}"
                )))
            }
            LayerSelection::MaxEntropy | LayerSelection::MaxJsd => {
                if self.candidate_layers.is_empty() {
                    return Err(MathError::InvalidParameter(
                        "candidate layer set is empty".into(),
                    ));
                }
                if let Some(l) = self.candidate_layers.iter().find(|&&l| !in_range(l)) {
                    return Err(MathError::InvalidParameter(format!(
                        "candidate layer {l} outside 1..={num_layers}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Layers a forward pass has to project for this strategy.
    pub fn layers_to_request(&self) -> Vec<usize> {
        match self.selection {
            LayerSelection::MaxEntropy | LayerSelection::MaxJsd => self.candidate_layers.clone(),
            LayerSelection::Fixed(l) => vec![l],
            LayerSelection::LastLayer => Vec::new(),
        }
    }
}

/// Parses a layer list: `17-32`, `17-32:even`, `17-32:odd` or `18,20,22`.
pub fn parse_layer_list(spec: &str) -> std::result::Result<Vec<usize>, String> {
    let spec = spec.trim();
    let (range, parity) = match spec.split_once(':') {
        Some((r, p)) => (r, Some(p)),
        None => (spec, None),
    };
    let mut layers: Vec<usize> = if let Some((lo, hi)) = range.split_once('-') {
        let lo: usize = lo.trim().parse().map_err(|_| format!("bad range {spec:?}"))?;
        let hi: usize = hi.trim().parse().map_err(|_| format!("bad range {spec:?}"))?;
        if lo > hi {
            return Err(format!("empty range {spec:?}"));
        }
        (lo..=hi).collect()
    } else {
        range
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| format!("bad layer {s:?}")))
            .collect::<std::result::Result<_, _>>()?
    };
    match parity {
        None => {}
        Some("even") => layers.retain(|l| l % 2 == 0),
        Some("odd") => layers.retain(|l| l % 2 == 1),
        Some(p) => return Err(format!("unknown layer filter {p:?}")),
    }
    layers.sort_unstable();
    layers.dedup();
    if layers.is_empty() {
        return Err(format!("layer list {spec:?} selects no layers"));
    }
    Ok(layers)
}

/// Per-layer no-context next-token log-probabilities, keyed by layer index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerDistributionSet {
    pub per_layer: BTreeMap<usize, LogProbVector>,
}

impl LayerDistributionSet {
    pub fn new(per_layer: BTreeMap<usize, LogProbVector>) -> Self {
        Self { per_layer }
    }

    pub fn is_empty(&self) -> bool {
        self.per_layer.is_empty()
    }

    pub fn get(&self, layer: usize) -> Option<&LogProbVector> {
        self.per_layer.get(&layer)
    }
}

impl FromIterator<(usize, LogProbVector)> for LayerDistributionSet {
    fn from_iter<T: IntoIterator<Item = (usize, LogProbVector)>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

// BTreeMap iterates in ascending key order, so strict `>` keeps the smallest index on ties.
fn argmax_layer(scores: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (layer, score) in scores {
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((layer, score));
        }
    }
    best.map(|(l, _)| l)
}

/// Layer with the highest-entropy distribution; ties go to the smallest index.
pub fn select_layer_max_entropy(layers: &LayerDistributionSet) -> Result<usize> {
    argmax_layer(
        layers
            .per_layer
            .iter()
            .map(|(&l, lp)| (l, math::entropy_of_logprobs(lp))),
    )
    .ok_or_else(|| MathError::InvalidParameter("candidate layer set is empty".into()))
}

/// Layer whose distribution diverges most from the ensemble.
pub fn select_layer_max_jsd(layers: &LayerDistributionSet, ensemble: &LogProbVector) -> Result<usize> {
    let ens: ProbVector = ensemble.to_probs();
    let mut scored = Vec::with_capacity(layers.per_layer.len());
    for (&l, lp) in &layers.per_layer {
        scored.push((l, math::jensen_shannon_divergence(&ens, &lp.to_probs())?));
    }
    argmax_layer(scored.into_iter())
        .ok_or_else(|| MathError::InvalidParameter("candidate layer set is empty".into()))
}

/// `log_softmax((1 + beta) · ensemble − beta · prior)`.
///
/// With `beta == 0` the prior is ignored entirely. Prior entries of `-inf`
/// are floored at the prior's smallest finite value.
pub fn contrast_step(
    ensemble: &LogProbVector,
    prior: &LogProbVector,
    beta: f64,
) -> Result<LogProbVector> {
    if ensemble.len() != prior.len() {
        return Err(MathError::Dimension {
            expected: ensemble.len(),
            actual: prior.len(),
        });
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(MathError::InvalidParameter(format!(
            "beta must be finite and nonnegative, got {beta}"
        )));
    }
    if beta == 0.0 {
        return math::log_softmax(&LogitVector::new(ensemble.as_slice().to_vec())?);
    }
    let floor = prior
        .as_slice()
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    let adjusted: Vec<f64> = ensemble
        .as_slice()
        .iter()
        .zip(prior.as_slice())
        .map(|(&e, &p)| {
            let p = if p.is_finite() { p } else { floor };
            (1.0 + beta) * e - beta * p
        })
        .collect();
    math::log_softmax(&LogitVector::new(adjusted)?)
}
