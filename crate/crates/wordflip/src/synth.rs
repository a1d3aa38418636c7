//! Seeded generator for the bundled desk-scale corpus: a four-class
//! news-style classification task small enough that the brute-force oracle
//! finishes in minutes, with enough class-conditional structure that words
//! differ widely in flip capability.
//!
//! Each class draws roughly half of its tokens from a shared pool and half
//! from its own topic pool, both under Zipf-like weights, so sentences mix
//! common filler with strongly class-indicative vocabulary.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::RawRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub num_classes: usize,
    /// Words shared by every class.
    pub shared_pool: usize,
    /// Topic words per class.
    pub class_pool: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token comes from the class pool instead of the
    /// shared pool.
    pub class_word_prob: f64,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_size: 2000,
            test_size: 500,
            num_classes: 4,
            shared_pool: 350,
            class_pool: 300,
            min_len: 6,
            max_len: 16,
            class_word_prob: 0.45,
            zipf_exponent: 1.05,
            seed: 42,
        }
    }
}

const ONSETS: &[&str] = &[
    "b", "br", "c", "cr", "d", "dr", "f", "fl", "g", "gr", "h", "j", "k", "l", "m", "n", "p",
    "pl", "pr", "r", "s", "st", "str", "t", "tr", "v", "w", "z",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "io", "ou"];
const CODAS: &[&str] = &["", "", "n", "r", "s", "t", "l", "ck", "nd", "rm"];

fn synth_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let mut word = String::new();
        for _ in 0..syllables {
            word.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            word.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        word.push_str(CODAS[rng.random_range(0..CODAS.len())]);
        if used.insert(word.clone()) {
            return word;
        }
    }
}

/// Zipf-weighted pool: cumulative weights for binary-search sampling.
struct Pool {
    words: Vec<String>,
    cumulative: Vec<f64>,
}

impl Pool {
    fn new(words: Vec<String>, exponent: f64) -> Self {
        let mut cumulative = Vec::with_capacity(words.len());
        let mut total = 0.0;
        for rank in 0..words.len() {
            total += 1.0 / ((rank + 1) as f64).powf(exponent);
            cumulative.push(total);
        }
        Self { words, cumulative }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> &str {
        let total = *self.cumulative.last().expect("pool is non-empty");
        let dart = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c < dart);
        &self.words[idx.min(self.words.len() - 1)]
    }
}

/// Generate the train and test splits. Labels are balanced round-robin;
/// everything is reproducible from the config seed.
pub fn generate(config: &SynthConfig) -> (Vec<RawRecord>, Vec<RawRecord>) {
    assert!(config.num_classes >= 2, "need at least two classes");
    assert!(config.min_len >= 1 && config.min_len <= config.max_len);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut used = HashSet::new();

    let shared = Pool::new(
        (0..config.shared_pool)
            .map(|_| synth_word(&mut rng, &mut used))
            .collect(),
        config.zipf_exponent,
    );
    let class_pools: Vec<Pool> = (0..config.num_classes)
        .map(|_| {
            Pool::new(
                (0..config.class_pool)
                    .map(|_| synth_word(&mut rng, &mut used))
                    .collect(),
                config.zipf_exponent,
            )
        })
        .collect();

    let sentence = |rng: &mut ChaCha8Rng, label: usize| -> String {
        let len = rng.random_range(config.min_len..=config.max_len);
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let word = if rng.random::<f64>() < config.class_word_prob {
                class_pools[label].draw(rng)
            } else {
                shared.draw(rng)
            };
            words.push(word.to_owned());
        }
        words.join(" ")
    };

    let split = |rng: &mut ChaCha8Rng, size: usize| -> Vec<RawRecord> {
        (0..size)
            .map(|i| {
                let label = i % config.num_classes;
                RawRecord {
                    text: sentence(rng, label),
                    label,
                }
            })
            .collect()
    };

    let train = split(&mut rng, config.train_size);
    let test = split(&mut rng, config.test_size);
    (train, test)
}
