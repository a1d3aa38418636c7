//! Single-word adversarial attacks driven by precomputed flip capability.
//!
//! The attack substitutes one of the `candidate_words` highest-capability
//! words at one position, samples the resulting candidate pool uniformly
//! without replacement until it has verified `flip_quota` flips (or
//! exhausted the pool), then keeps the flip with the best joint
//! similarity/fluency score. A flip only counts as a successful attack when
//! its similarity to the original sentence exceeds the configured
//! threshold.
//!
//! Similarity is the cosine between mean classifier-embedding vectors of
//! the two sentences; fluency is the perplexity ratio under a bigram
//! backoff language model trained on the training split. Both are
//! desk-scale stand-ins for large pretrained encoders and live behind
//! plain functions so alternates can be swapped.
//!
//! Attacks over distinct examples are independent; capability, language
//! model, and parameters are shared read-only.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, LabeledExample, Vocabulary, WordId};
use crate::model::ClassifierParams;
use crate::oracle::{CapabilityVector, CorrectSubset};
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("example is not correctly classified by the target")]
    NotCorrectlyClassified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// How many of the highest-capability words to attack with.
    pub candidate_words: usize,
    /// Stop verifying once this many flips are found.
    pub flip_quota: usize,
    /// Weight of the similarity term in the joint score.
    pub similarity_weight: f64,
    /// Weight of the perplexity-ratio term in the joint score.
    pub perplexity_weight: f64,
    /// A flip counts as a successful attack only above this similarity.
    pub sim_threshold: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            candidate_words: 50,
            flip_quota: 50,
            similarity_weight: 3.0,
            perplexity_weight: 20.0,
            sim_threshold: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackStatus {
    Success,
    NoFlipFound,
    FlipBelowThreshold,
}

impl std::fmt::Display for AttackStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackStatus::Success => write!(f, "success"),
            AttackStatus::NoFlipFound => write!(f, "no_flip_found"),
            AttackStatus::FlipBelowThreshold => write!(f, "flip_below_threshold"),
        }
    }
}

impl std::str::FromStr for AttackStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "success" => Ok(AttackStatus::Success),
            "no_flip_found" => Ok(AttackStatus::NoFlipFound),
            "flip_below_threshold" => Ok(AttackStatus::FlipBelowThreshold),
            other => Err(format!("unknown attack status `{other}`")),
        }
    }
}

/// Outcome of one attack. On success the adversarial sentence differs from
/// the original in exactly one position and its similarity exceeds the
/// threshold. `max_similarity` and `min_ppl_ratio` range over *all* flips
/// found, so success can be re-derived under any threshold afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub status: AttackStatus,
    pub adversarial: Option<Vec<WordId>>,
    pub changed_position: Option<usize>,
    pub original_word: Option<WordId>,
    pub replacement_word: Option<WordId>,
    /// Joint score of the reported flip; absent when nothing flipped.
    pub joint_score: Option<f64>,
    /// Similarity of the reported flip; 0 when nothing flipped.
    pub similarity: f64,
    /// Perplexity ratio of the reported flip; 0 when nothing flipped.
    pub ppl_ratio: f64,
    pub queries: u64,
    pub flips_found: usize,
    pub max_similarity: f64,
    pub min_ppl_ratio: f64,
}

/// Bigram language model with add-one smoothed unigrams and constant-weight
/// backoff for unseen transitions. Every in-vocabulary sequence gets a
/// positive probability.
#[derive(Debug, Clone)]
pub struct BigramLm {
    unigrams: Vec<u64>,
    bigrams: HashMap<(u32, u32), u64>,
    total_tokens: u64,
    vocab_size: usize,
    /// Weight applied to the unigram probability when a bigram is unseen.
    pub backoff: f64,
}

impl BigramLm {
    pub fn train(dataset: &Dataset, vocab_size: usize) -> Self {
        let mut unigrams = vec![0u64; vocab_size];
        let mut bigrams: HashMap<(u32, u32), u64> = HashMap::new();
        let mut total_tokens = 0u64;
        for ex in &dataset.examples {
            for &t in &ex.tokens {
                unigrams[t.index()] += 1;
                total_tokens += 1;
            }
            for pair in ex.tokens.windows(2) {
                *bigrams.entry((pair[0].0, pair[1].0)).or_default() += 1;
            }
        }
        Self {
            unigrams,
            bigrams,
            total_tokens,
            vocab_size,
            backoff: 0.4,
        }
    }

    /// Add-one smoothed unigram probability; positive for every word.
    pub fn unigram_logprob(&self, w: WordId) -> f64 {
        let num = self.unigrams[w.index()] as f64 + 1.0;
        let den = self.total_tokens as f64 + self.vocab_size as f64;
        (num / den).ln()
    }

    /// Log probability of `w` following `prev`: maximum-likelihood bigram
    /// when observed, otherwise backoff times the smoothed unigram.
    pub fn transition_logprob(&self, prev: WordId, w: WordId) -> f64 {
        let c_prev = self.unigrams[prev.index()];
        if c_prev > 0 {
            if let Some(&c) = self.bigrams.get(&(prev.0, w.0)) {
                return (c as f64 / c_prev as f64).ln();
            }
        }
        self.backoff.ln() + self.unigram_logprob(w)
    }

    /// Exponential of the mean negative log transition probability. A
    /// single-word sentence is scored by its unigram probability.
    pub fn perplexity(&self, tokens: &[WordId]) -> f64 {
        assert!(!tokens.is_empty(), "cannot score an empty sentence");
        if tokens.len() == 1 {
            return (-self.unigram_logprob(tokens[0])).exp();
        }
        let mut sum = 0.0;
        for pair in tokens.windows(2) {
            sum += self.transition_logprob(pair[0], pair[1]);
        }
        (-sum / (tokens.len() - 1) as f64).exp()
    }
}

/// Cosine similarity of the mean classifier-embedding vectors of two
/// sentences. A zero-norm mean yields similarity 0 (with a warning); this
/// only happens for degenerate parameters.
pub fn sentence_similarity(params: &ClassifierParams, a: &[WordId], b: &[WordId]) -> f64 {
    let ma = params.mean_embedding(a).expect("sentence must be non-empty");
    let mb = params.mean_embedding(b).expect("sentence must be non-empty");
    let dot: f64 = ma.iter().zip(&mb).map(|(x, y)| x * y).sum();
    let na: f64 = ma.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = mb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        log::warn!("zero-norm sentence embedding; reporting similarity 0");
        return 0.0;
    }
    dot / (na * nb)
}

/// Joint attack score: similarity reward minus perplexity-ratio penalty.
pub fn joint_score(
    params: &ClassifierParams,
    lm: &BigramLm,
    candidate: &[WordId],
    original: &[WordId],
    similarity_weight: f64,
    perplexity_weight: f64,
) -> f64 {
    let sim = sentence_similarity(params, candidate, original);
    let ratio = lm.perplexity(candidate) / lm.perplexity(original);
    similarity_weight * sim - perplexity_weight * ratio
}

/// The `count` words with the highest capability, ties broken by word id.
/// Returns all usable words when `count` exceeds the capability vector.
pub fn top_capacity_words(capability: &CapabilityVector, count: usize) -> Vec<WordId> {
    let mut order: Vec<usize> = (0..capability.words.len())
        .filter(|&i| capability.words[i].index() >= Vocabulary::RESERVED)
        .collect();
    order.sort_by(|&a, &b| {
        capability.values[b]
            .total_cmp(&capability.values[a])
            .then_with(|| capability.words[a].0.cmp(&capability.words[b].0))
    });
    order
        .into_iter()
        .take(count)
        .map(|i| capability.words[i])
        .collect()
}

/// One (position, word) substitution candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolEntry {
    pub position: usize,
    pub word: WordId,
}

/// All single-word substitutions of the attack words into the sentence,
/// duplicates of the original excluded; at most `len x words` entries.
pub fn candidate_pool(tokens: &[WordId], words: &[WordId]) -> Vec<PoolEntry> {
    let mut pool = Vec::with_capacity(tokens.len() * words.len());
    for (position, &tok) in tokens.iter().enumerate() {
        for &word in words {
            if word != tok {
                pool.push(PoolEntry { position, word });
            }
        }
    }
    pool
}

/// Sample the pool uniformly without replacement, querying the classifier
/// on each candidate; stop at `quota` flips or pool exhaustion. Returns the
/// flipped entries in discovery order and the number of queries.
pub fn verify_until_quota(
    params: &ClassifierParams,
    example: &LabeledExample,
    pool: &[PoolEntry],
    quota: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<PoolEntry>, u64) {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut buf = example.tokens.clone();
    let mut flips = Vec::new();
    let mut queries = 0u64;
    for i in 0..order.len() {
        if flips.len() >= quota {
            break;
        }
        let j = rng.random_range(i..order.len());
        order.swap(i, j);
        let entry = pool[order[i]];
        let orig = buf[entry.position];
        buf[entry.position] = entry.word;
        queries += 1;
        let pred = params.predict(&buf).expect("substituted sentence is non-empty");
        buf[entry.position] = orig;
        if pred != example.label {
            flips.push(entry);
        }
    }
    (flips, queries)
}

/// A prediction-flipping perturbation of a sentence: the changed positions
/// with their replacement words. Single-word attacks have exactly one
/// change; random multi-word baselines may have up to a few.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipCandidate {
    pub changes: Vec<(usize, WordId)>,
}

impl FlipCandidate {
    pub fn apply(&self, original: &[WordId]) -> Vec<WordId> {
        let mut out = original.to_vec();
        for &(pos, w) in &self.changes {
            out[pos] = w;
        }
        out
    }
}

/// Scored selection over a set of verified flips, shared by the main attack
/// and the random baselines so success semantics stay identical.
#[derive(Debug, Clone)]
pub struct Selection {
    pub status: AttackStatus,
    /// Best admissible flip on success; best overall flip when every flip
    /// is below the similarity threshold; absent otherwise.
    pub best: Option<(FlipCandidate, f64, f64, f64)>, // (candidate, similarity, ppl_ratio, joint)
    pub max_similarity: f64,
    pub min_ppl_ratio: f64,
}

/// Score all flips with the joint criterion and pick the winner among those
/// above the similarity threshold; when flips exist but none clears the
/// threshold, report the best-scoring one without declaring success.
pub fn select_best(
    params: &ClassifierParams,
    lm: &BigramLm,
    original: &[WordId],
    flips: &[FlipCandidate],
    config: &AttackConfig,
) -> Selection {
    if flips.is_empty() {
        return Selection {
            status: AttackStatus::NoFlipFound,
            best: None,
            max_similarity: 0.0,
            min_ppl_ratio: f64::INFINITY,
        };
    }
    let base_ppl = lm.perplexity(original);
    let mut max_similarity = f64::NEG_INFINITY;
    let mut min_ppl_ratio = f64::INFINITY;
    let mut best_admissible: Option<(usize, f64, f64, f64)> = None;
    let mut best_overall: Option<(usize, f64, f64, f64)> = None;
    for (i, flip) in flips.iter().enumerate() {
        let candidate = flip.apply(original);
        let sim = sentence_similarity(params, &candidate, original);
        let ratio = lm.perplexity(&candidate) / base_ppl;
        let joint = config.similarity_weight * sim - config.perplexity_weight * ratio;
        max_similarity = max_similarity.max(sim);
        min_ppl_ratio = min_ppl_ratio.min(ratio);
        if best_overall.map_or(true, |(_, _, _, j)| joint > j) {
            best_overall = Some((i, sim, ratio, joint));
        }
        if sim > config.sim_threshold && best_admissible.map_or(true, |(_, _, _, j)| joint > j) {
            best_admissible = Some((i, sim, ratio, joint));
        }
    }
    let (status, pick) = match best_admissible {
        Some(p) => (AttackStatus::Success, p),
        None => (
            AttackStatus::FlipBelowThreshold,
            best_overall.expect("flips is non-empty"),
        ),
    };
    let (idx, sim, ratio, joint) = pick;
    Selection {
        status,
        best: Some((flips[idx].clone(), sim, ratio, joint)),
        max_similarity,
        min_ppl_ratio,
    }
}

/// Attack one correctly classified example: build the candidate pool from
/// the attack words, verify sampled candidates up to the flip quota, and
/// select the best-scoring admissible flip.
pub fn single_word_attack(
    params: &ClassifierParams,
    example: &LabeledExample,
    attack_words: &[WordId],
    lm: &BigramLm,
    config: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AttackResult, AttackError> {
    if params.predict(&example.tokens).expect("example is non-empty") != example.label {
        return Err(AttackError::NotCorrectlyClassified);
    }
    let pool = candidate_pool(&example.tokens, attack_words);
    let (flips, queries) = verify_until_quota(params, example, &pool, config.flip_quota, rng);
    let candidates: Vec<FlipCandidate> = flips
        .iter()
        .map(|e| FlipCandidate {
            changes: vec![(e.position, e.word)],
        })
        .collect();
    let selection = select_best(params, lm, &example.tokens, &candidates, config);

    let mut result = AttackResult {
        status: selection.status,
        adversarial: None,
        changed_position: None,
        original_word: None,
        replacement_word: None,
        joint_score: None,
        similarity: 0.0,
        ppl_ratio: 0.0,
        queries,
        flips_found: candidates.len(),
        max_similarity: selection.max_similarity,
        min_ppl_ratio: selection.min_ppl_ratio,
    };
    if let Some((flip, sim, ratio, joint)) = selection.best {
        result.similarity = sim;
        result.ppl_ratio = ratio;
        result.joint_score = Some(joint);
        if selection.status == AttackStatus::Success {
            let (pos, word) = flip.changes[0];
            result.adversarial = Some(flip.apply(&example.tokens));
            result.changed_position = Some(pos);
            result.original_word = Some(example.tokens[pos]);
            result.replacement_word = Some(word);
        }
    }
    Ok(result)
}

/// Attack every example of a correct subset; each example gets an
/// independent random stream derived from the config seed and its index,
/// so results do not depend on execution order.
pub fn run_attacks(
    params: &ClassifierParams,
    subset: &CorrectSubset,
    attack_words: &[WordId],
    lm: &BigramLm,
    config: &AttackConfig,
) -> Vec<AttackResult> {
    subset
        .examples()
        .iter()
        .enumerate()
        .map(|(i, ex)| attack_one(params, ex, i, attack_words, lm, config))
        .collect()
}

/// Parallel twin of [`run_attacks`]; identical output.
#[cfg(feature = "parallel")]
pub fn par_run_attacks(
    params: &ClassifierParams,
    subset: &CorrectSubset,
    attack_words: &[WordId],
    lm: &BigramLm,
    config: &AttackConfig,
) -> Vec<AttackResult> {
    subset
        .examples()
        .par_iter()
        .enumerate()
        .map(|(i, ex)| attack_one(params, ex, i, attack_words, lm, config))
        .collect()
}

fn attack_one(
    params: &ClassifierParams,
    example: &LabeledExample,
    index: usize,
    attack_words: &[WordId],
    lm: &BigramLm,
    config: &AttackConfig,
) -> AttackResult {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, index as u64));
    single_word_attack(params, example, attack_words, lm, config, &mut rng)
        .expect("correct subset members are correctly classified")
}
