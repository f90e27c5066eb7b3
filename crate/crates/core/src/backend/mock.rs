//! Deterministic byte-level test double.
//!
//! Token ids are bytes. Logits are pseudorandom and a pure function of the
//! seed and the token sequence, which gives high-entropy next-token
//! distributions. A [`Trigger`] plants an answer: when the trigger string
//! occurs in the prompt context and the text generated after the answer
//! marker is a proper prefix of the answer, the next answer byte gets a
//! large logit boost. Once the answer is complete, a newline is boosted the
//! same way.
//!
//! Layer `l` logits are the final logits divided by `layer_sharpening[l-1]`.
//! The sharpening exponents are non-increasing in `l`, so earlier layers
//! always have entropy at least as high as later ones.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendMeta, ForwardRequest, ForwardResponse, Result};
use crate::math::LogitVector;

pub const BYTE_VOCAB: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub trigger: String,
    pub answer: String,
    /// Logit boost given to the next answer byte.
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    20.0
}

impl Trigger {
    pub fn new(trigger: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            trigger: trigger.into(),
            answer: answer.into(),
            scale: default_scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockModelSpec {
    pub vocab_size: usize,
    pub num_layers: usize,
    pub max_context: usize,
    pub seed: u64,
    pub triggers: Vec<Trigger>,
    /// Per-layer temperature applied to the final logits, index 0 is layer 1.
    /// Empty selects `1 + 0.25 · (num_layers - l)`.
    pub layer_sharpening: Vec<f64>,
    /// Generated text is whatever follows the last occurrence of this marker.
    pub answer_marker: String,
    /// When set, a trigger only fires if one of its occurrences starts within
    /// this many bytes of the start of the context or ends within this many
    /// bytes of its end. Emulates a model that loses track of mid-context
    /// evidence.
    pub recall_window: Option<usize>,
    /// Half-width of the uniform pseudorandom logit noise.
    pub noise_amplitude: f64,
    pub eos_token: Option<u32>,
}

impl Default for MockModelSpec {
    fn default() -> Self {
        Self {
            vocab_size: BYTE_VOCAB,
            num_layers: 8,
            max_context: 4096,
            seed: 0,
            triggers: Vec::new(),
            layer_sharpening: Vec::new(),
            answer_marker: "Answer:".to_string(),
            recall_window: None,
            noise_amplitude: 1.5,
            eos_token: None,
        }
    }
}

impl MockModelSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn trigger(mut self, trigger: Trigger) -> Self {
        self.triggers.push(trigger);
        self
    }

    pub fn layers(mut self, num_layers: usize) -> Self {
        self.num_layers = num_layers;
        self
    }

    pub fn sharpening(&self) -> Vec<f64> {
        if self.layer_sharpening.is_empty() {
            (1..=self.num_layers)
                .map(|l| 1.0 + 0.25 * (self.num_layers - l) as f64)
                .collect()
        } else {
            self.layer_sharpening.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BackendError::InvalidConfig(msg));
        if self.vocab_size != BYTE_VOCAB {
            return bad(format!(
                "the mock is byte-level; vocab_size must be {BYTE_VOCAB}, got {}",
                self.vocab_size
            ));
        }
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1".into());
        }
        if self.answer_marker.is_empty() {
            return bad("answer_marker must be nonempty".into());
        }
        if !(self.noise_amplitude >= 0.0) || !self.noise_amplitude.is_finite() {
            return bad("noise_amplitude must be finite and nonnegative".into());
        }
        for t in &self.triggers {
            if t.answer.is_empty() || t.trigger.is_empty() {
                return bad("trigger and answer strings must be nonempty".into());
            }
            if !(t.scale > 0.0) || !t.scale.is_finite() {
                return bad(format!("trigger scale must be positive, got {}", t.scale));
            }
        }
        let sharp = self.sharpening();
        if sharp.len() != self.num_layers {
            return bad(format!(
                "layer_sharpening has {} entries for {} layers",
                sharp.len(),
                self.num_layers
            ));
        }
        if sharp.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return bad("layer_sharpening entries must be positive".into());
        }
        if sharp.windows(2).any(|w| w[1] > w[0]) {
            return bad("layer_sharpening must be non-increasing in the layer index".into());
        }
        if let Some(eos) = self.eos_token {
            if eos as usize >= self.vocab_size {
                return bad(format!("eos_token {eos} outside the vocabulary"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    spec: MockModelSpec,
    sharpening: Vec<f64>,
    meta: BackendMeta,
}

impl MockBackend {
    pub fn new(spec: MockModelSpec) -> Result<Self> {
        spec.validate()?;
        let meta = BackendMeta {
            vocab_size: spec.vocab_size,
            num_layers: spec.num_layers,
            max_context: spec.max_context,
            name: format!("mock-bytes(seed={})", spec.seed),
            eos_token: spec.eos_token,
        };
        Ok(Self {
            sharpening: spec.sharpening(),
            spec,
            meta,
        })
    }

    pub fn spec(&self) -> &MockModelSpec {
        &self.spec
    }

    fn noise(&self, tokens: &[u32]) -> Vec<f64> {
        // FNV-1a over (seed, tokens)
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        self.spec.seed.to_le_bytes().into_iter().for_each(&mut eat);
        for t in tokens {
            t.to_le_bytes().into_iter().for_each(&mut eat);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let a = self.spec.noise_amplitude;
        (0..self.spec.vocab_size)
            .map(|_| if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 })
            .collect()
    }

    fn recalled(&self, context: &[u8], needle: &[u8]) -> bool {
        if needle.len() > context.len() {
            return false;
        }
        let len = context.len();
        context
            .windows(needle.len())
            .enumerate()
            .filter(|(_, w)| *w == needle)
            .any(|(start, _)| match self.spec.recall_window {
                None => true,
                Some(w) => start < w || start + needle.len() + w > len,
            })
    }

    /// The boosted byte and its boost, if a trigger fires for this prompt.
    fn planted(&self, bytes: &[u8]) -> Option<(u8, f64)> {
        let marker = self.spec.answer_marker.as_bytes();
        let pos = bytes.windows(marker.len()).rposition(|w| w == marker)?;
        let context = &bytes[..pos];
        let generated = &bytes[pos + marker.len()..];
        for t in &self.spec.triggers {
            let answer = t.answer.as_bytes();
            if !self.recalled(context, t.trigger.as_bytes()) {
                continue;
            }
            if generated.len() < answer.len() && answer.starts_with(generated) {
                return Some((answer[generated.len()], t.scale));
            }
            if generated == answer {
                return Some((b'\n', t.scale));
            }
        }
        None
    }
}

impl Backend for MockBackend {
    fn meta(&self) -> &BackendMeta {
        &self.meta
    }

    fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        Ok(text.bytes().map(u32::from).collect())
    }

    fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let bytes = ids
            .iter()
            .map(|&id| u8::try_from(id).map_err(|_| BackendError::InvalidToken(id)))
            .collect::<Result<Vec<u8>>>()?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    fn forward(&self, req: &ForwardRequest) -> Result<ForwardResponse> {
        req.validate(&self.meta)?;
        let mut logits = self.noise(&req.tokens);
        let bytes: Vec<u8> = req.tokens.iter().map(|&t| t as u8).collect();
        if let Some((byte, boost)) = self.planted(&bytes) {
            logits[usize::from(byte)] += boost;
        }
        let mut per_layer = BTreeMap::new();
        for &l in &req.layers {
            let s = self.sharpening[l - 1];
            let layer: Vec<f64> = logits.iter().map(|v| v / s).collect();
            per_layer.insert(l, LogitVector::new(layer).expect("finite logits"));
        }
        Ok(ForwardResponse {
            final_logits: LogitVector::new(logits).expect("finite logits"),
            per_layer,
        })
    }
}
