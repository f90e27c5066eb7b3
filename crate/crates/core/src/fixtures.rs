//! Synthetic question-answering data with answers planted for the
//! [`MockBackend`](crate::backend::MockBackend).
//!
//! Every example gets a unique trigger string that appears only in its
//! oracle document, and the mock spec maps that trigger to the gold answer.
//! Distractors are filler text. Used by the examples, the tests and the
//! command line `--backend mock` runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{MockModelSpec, Trigger};
use crate::evaluation::QAExample;
use crate::prompting::Document;

const ANSWERS: &[&str] = &[
    "Paris", "Lisbon", "Oslo", "Nairobi", "Lima", "Hanoi", "Quito", "Accra", "Riga", "Perth",
    "Dakar", "Minsk", "Sucre", "Tunis", "Bern", "Cairo",
];

const WORDS: &[&str] = &[
    "river", "council", "harbor", "festival", "railway", "museum", "province", "treaty",
    "monastery", "orchard", "summit", "archive", "garrison", "lighthouse", "quarry", "market",
    "bridge", "chapel", "valley", "observatory", "senate", "canal", "library", "district",
];

fn filler(rng: &mut ChaCha8Rng, len: usize) -> String {
    let mut s = String::new();
    while s.len() < len {
        if !s.is_empty() {
            s.push(' ');
        }
        s.push_str(WORDS.choose(rng).expect("nonempty word list"));
    }
    s.truncate(len);
    s.trim_end().to_string() + "."
}

pub fn trigger_for(index: usize) -> String {
    format!("zq{index:04}")
}

/// A planted dataset and the mock spec that knows its answers.
#[derive(Debug, Clone)]
pub struct PlantedFixture {
    pub spec: MockModelSpec,
    pub examples: Vec<QAExample>,
}

impl PlantedFixture {
    /// The same examples with every trigger removed from the documents.
    pub fn without_triggers(&self) -> Vec<QAExample> {
        self.examples
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut ex = ex.clone();
                let t = trigger_for(i);
                for d in &mut ex.documents {
                    d.content = d.content.replace(&t, "record");
                }
                ex
            })
            .collect()
    }
}

/// `n` examples of `k` documents each; the oracle sits at a seeded random
/// position. Documents carry seeded random retriever scores and oracle flags.
pub fn planted_dataset(n: usize, k: usize, seed: u64) -> PlantedFixture {
    assert!(k >= 1, "need at least one document per example");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = MockModelSpec::with_seed(seed);
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let trigger = trigger_for(i);
        let answer = ANSWERS[i % ANSWERS.len()];
        spec.triggers.push(Trigger::new(trigger.clone(), answer));
        let oracle_at = rng.gen_range(0..k);
        let documents = (0..k)
            .map(|j| {
                let is_oracle = j == oracle_at;
                let content = if is_oracle {
                    format!("The {trigger} entry notes {}", filler(&mut rng, 50))
                } else {
                    format!("The entry notes {}", filler(&mut rng, 56))
                };
                let title = WORDS.choose(&mut rng).expect("nonempty").to_string();
                Document::new(title, content)
                    .with_score(rng.gen_range(0.0..2.0))
                    .oracle(is_oracle)
            })
            .collect();
        examples.push(QAExample {
            id: format!("planted-{i:04}"),
            question: format!("Which city does record {i} refer to?"),
            answers: vec![answer.to_string()],
            documents,
        });
    }
    PlantedFixture { spec, examples }
}

/// A single example of `k` documents with the oracle first, and a mock that
/// only recalls evidence near the start or end of its context, so
/// concatenated prompts lose mid-context oracles.
pub fn lost_in_the_middle(k: usize, seed: u64) -> PlantedFixture {
    let mut fixture = planted_dataset(1, k, seed);
    let ex = &mut fixture.examples[0];
    let pos = ex.documents.iter().position(|d| d.is_oracle()).expect("oracle");
    let oracle = ex.documents.remove(pos);
    ex.documents.insert(0, oracle);
    fixture.spec.recall_window = Some(160);
    fixture
}
