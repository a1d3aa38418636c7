//! Budgeted two-phase estimation of per-word flip capability.
//!
//! For each correctly classified example, every single-word substitution is
//! scored with a first-order approximation of the post-substitution
//! log-probability of the true class; low scores mean likely flips. Phase 1
//! verifies substitutions in ascending score order and stops after
//! `patience` consecutive failures. Phase 2 then walks the words that have
//! not yet flipped this example, ordered by how many other examples of the
//! same class each word has already flipped (the success ledger), verifying
//! only each word's most promising position; it stops under its own
//! independent patience counter.
//!
//! Only verified flips are counted, so the estimated capability never
//! exceeds the true capability and the estimated robustness never falls
//! below the true robustness. With patience at least the per-example
//! substitution count the estimate is exact.
//!
//! Two ablation variants replace phase 1: `TopPosition` verifies only the
//! best-scoring position of each word, and `Unmasked` scores substitutions
//! around the original sentence with a single gradient pass instead of one
//! masked pass per position.

use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabeledExample, Vocabulary, WordId};
use crate::model::{ClassifierParams, EMBED_DIM};
use crate::oracle::{CapabilityVector, CorrectSubset};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("serial ledger mode is inherently sequential; use snapshot mode for parallel runs")]
    SerialNotParallelizable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Masked scores, all positions ranked in phase 1.
    Full,
    /// Masked scores, but phase 1 verifies only each word's best position.
    TopPosition,
    /// Scores from one gradient pass on the unmasked sentence.
    Unmasked,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Full => write!(f, "full"),
            Variant::TopPosition => write!(f, "top_position"),
            Variant::Unmasked => write!(f, "unmasked"),
        }
    }
}

/// How the success ledger is shared across examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerMode {
    /// Online updates; earlier examples inform later ones. The reference
    /// semantics, inherently sequential.
    Serial,
    /// Every example reads a ledger frozen at run start; counts merge after
    /// all examples complete. Safe to parallelize, identical results in
    /// sequential and parallel execution.
    Snapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Consecutive failed verifications before each phase stops. Both
    /// phases use independent counters; a success resets its phase's
    /// counter to zero.
    pub patience: usize,
    pub variant: Variant,
    pub ledger_mode: LedgerMode,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            patience: 256,
            variant: Variant::Full,
            ledger_mode: LedgerMode::Serial,
        }
    }
}

/// Verified flip counts per (class, word), non-decreasing during a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuccessLedger {
    counts: Vec<u64>, // class-major: counts[class * vocab_size + word]
    num_classes: usize,
    vocab_size: usize,
}

impl SuccessLedger {
    pub fn new(num_classes: usize, vocab_size: usize) -> Self {
        Self {
            counts: vec![0; num_classes * vocab_size],
            num_classes,
            vocab_size,
        }
    }

    pub fn record(&mut self, class: usize, word: WordId) {
        self.counts[class * self.vocab_size + word.index()] += 1;
    }

    pub fn count(&self, class: usize, word: WordId) -> u64 {
        self.counts[class * self.vocab_size + word.index()]
    }

    /// Verified flips of this word across all classes.
    pub fn total(&self, word: WordId) -> u64 {
        (0..self.num_classes)
            .map(|c| self.counts[c * self.vocab_size + word.index()])
            .sum()
    }

    fn clear(&mut self) {
        self.counts.fill(0);
    }

    fn merge(&mut self, other: &SuccessLedger) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Dense `positions x words` score matrix for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    values: Vec<f64>, // position-major
    num_positions: usize,
    num_words: usize,
}

impl ScoreTable {
    pub fn at(&self, position: usize, slot: usize) -> f64 {
        self.values[position * self.num_words + slot]
    }

    pub fn num_positions(&self) -> usize {
        self.num_positions
    }

    pub fn num_words(&self) -> usize {
        self.num_words
    }

    /// Best (lowest-score) position for a word, excluding positions already
    /// holding that word; ties resolve to the lower position. `None` when
    /// every position holds the word.
    pub fn argmin_position(&self, tokens: &[WordId], words: &[WordId], slot: usize) -> Option<usize> {
        let w = words[slot];
        let mut best: Option<(f64, usize)> = None;
        for (k, &tok) in tokens.iter().enumerate() {
            if tok == w {
                continue;
            }
            let s = self.at(k, slot);
            if best.map_or(true, |(bs, _)| s < bs) {
                best = Some((s, k));
            }
        }
        best.map(|(_, k)| k)
    }
}

/// Per-position masked evaluation of one example: the log-probability of
/// the true class with each position masked, the gradient of that
/// log-probability at the mask embedding, and the resulting score table.
#[derive(Debug, Clone)]
pub struct MaskedScores {
    /// `len` entries, all non-positive.
    pub base_logprob: Vec<f64>,
    /// `len x EMBED_DIM`, row k is the gradient at the mask in position k.
    pub mask_gradients: Vec<f64>,
    pub table: ScoreTable,
}

/// One masked forward-backward pass per position: exactly `len` of them.
pub fn masked_gradients(
    params: &ClassifierParams,
    tokens: &[WordId],
    target: usize,
) -> (Vec<f64>, Vec<f64>) {
    let l = tokens.len();
    let mut base = Vec::with_capacity(l);
    let mut grads = vec![0.0; l * EMBED_DIM];
    let mut masked = tokens.to_vec();
    for k in 0..l {
        let orig = masked[k];
        masked[k] = Vocabulary::MASK;
        let (logp, dmean) = params
            .logprob_and_mean_grad(&masked, target)
            .expect("masked sentence is non-empty");
        masked[k] = orig;
        base.push(logp);
        let inv = 1.0 / l as f64;
        for (g, d) in grads[k * EMBED_DIM..(k + 1) * EMBED_DIM].iter_mut().zip(&dmean) {
            *g = d * inv;
        }
    }
    (base, grads)
}

/// First-order score for every (position, word) pair: the masked base
/// log-probability plus the inner product of the mask-position gradient
/// with the embedding difference. Computed literally per entry so a scalar
/// recomputation reproduces it bit for bit.
pub fn approx_scores(
    params: &ClassifierParams,
    base_logprob: &[f64],
    mask_gradients: &[f64],
    words: &[WordId],
) -> ScoreTable {
    let l = base_logprob.len();
    let mask_row = params.embedding_row(Vocabulary::MASK);
    let mut values = Vec::with_capacity(l * words.len());
    for k in 0..l {
        let g = &mask_gradients[k * EMBED_DIM..(k + 1) * EMBED_DIM];
        let base = base_logprob[k];
        for &w in words {
            let row = params.embedding_row(w);
            let mut dot = 0.0;
            for i in 0..EMBED_DIM {
                dot += g[i] * (row[i] - mask_row[i]);
            }
            values.push(base + dot);
        }
    }
    ScoreTable {
        values,
        num_positions: l,
        num_words: words.len(),
    }
}

/// Masked scoring pipeline for one example.
pub fn masked_scores(
    params: &ClassifierParams,
    example: &LabeledExample,
    words: &[WordId],
) -> MaskedScores {
    let (base_logprob, mask_gradients) = masked_gradients(params, &example.tokens, example.label);
    let table = approx_scores(params, &base_logprob, &mask_gradients, words);
    MaskedScores {
        base_logprob,
        mask_gradients,
        table,
    }
}

/// Cheaper scores from a single gradient pass on the unmasked sentence:
/// the original log-probability plus the inner product of the position
/// gradient with the embedding difference from the word currently at that
/// position. Returns the base log-probability alongside the table.
pub fn unmasked_scores(
    params: &ClassifierParams,
    example: &LabeledExample,
    words: &[WordId],
) -> (f64, ScoreTable) {
    let tokens = &example.tokens;
    let l = tokens.len();
    let (logp, dmean) = params
        .logprob_and_mean_grad(tokens, example.label)
        .expect("example sentence is non-empty");
    // Under mean pooling the per-position gradient is the mean gradient
    // scaled by 1/len, identical at every position.
    let inv = 1.0 / l as f64;
    let g: Vec<f64> = dmean.iter().map(|d| d * inv).collect();
    let mut values = Vec::with_capacity(l * words.len());
    for k in 0..l {
        let here = params.embedding_row(tokens[k]).to_vec();
        for &w in words {
            let row = params.embedding_row(w);
            let mut dot = 0.0;
            for i in 0..EMBED_DIM {
                dot += g[i] * (row[i] - here[i]);
            }
            values.push(logp + dot);
        }
    }
    (
        logp,
        ScoreTable {
            values,
            num_positions: l,
            num_words: words.len(),
        },
    )
}

/// One substitution to verify.
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    pub position: u32,
    pub slot: u32,
    pub score: f64,
}

fn sort_candidates(candidates: &mut [Candidate], words: &[WordId]) {
    candidates.sort_unstable_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| words[a.slot as usize].0.cmp(&words[b.slot as usize].0))
            .then_with(|| a.position.cmp(&b.position))
    });
}

/// All non-identity substitutions, ascending by score; ties break on word
/// id, then position.
pub fn rank_all_substitutions(
    table: &ScoreTable,
    tokens: &[WordId],
    words: &[WordId],
) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(tokens.len() * words.len());
    for k in 0..tokens.len() {
        for (slot, &w) in words.iter().enumerate() {
            if tokens[k] == w {
                continue;
            }
            out.push(Candidate {
                position: k as u32,
                slot: slot as u32,
                score: table.at(k, slot),
            });
        }
    }
    sort_candidates(&mut out, words);
    out
}

/// One candidate per word at its best position, same global ordering.
pub fn rank_top_positions(
    table: &ScoreTable,
    tokens: &[WordId],
    words: &[WordId],
) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(words.len());
    for slot in 0..words.len() {
        if let Some(k) = table.argmin_position(tokens, words, slot) {
            out.push(Candidate {
                position: k as u32,
                slot: slot as u32,
                score: table.at(k, slot),
            });
        }
    }
    sort_candidates(&mut out, words);
    out
}

/// Mutable per-example search state shared by the two phases.
#[derive(Debug)]
pub struct SearchState {
    flipped: Vec<bool>,
    queried: Vec<bool>, // position-major, len * num_words
    flips: Vec<u32>,    // slots in discovery order
    num_words: usize,
    pub phase1_queries: u64,
    pub phase2_queries: u64,
}

impl SearchState {
    pub fn new(len: usize, num_words: usize) -> Self {
        Self {
            flipped: vec![false; num_words],
            queried: vec![false; len * num_words],
            flips: Vec::new(),
            num_words,
            phase1_queries: 0,
            phase2_queries: 0,
        }
    }

    pub fn flips(&self) -> &[u32] {
        &self.flips
    }
}

/// Walk ranked candidates, verifying each on the classifier; record verified
/// flips in the ledger and stop after `patience` consecutive failures. A
/// word is marked successful at most once per example: later candidates for
/// an already-successful word are skipped without querying.
pub fn phase1(
    params: &ClassifierParams,
    example: &LabeledExample,
    words: &[WordId],
    candidates: &[Candidate],
    patience: usize,
    ledger: &mut SuccessLedger,
    state: &mut SearchState,
) {
    let mut buf = example.tokens.clone();
    let mut fails = 0usize;
    for cand in candidates {
        let slot = cand.slot as usize;
        if state.flipped[slot] {
            continue;
        }
        let pos = cand.position as usize;
        let orig = buf[pos];
        buf[pos] = words[slot];
        let pred = params.predict(&buf).expect("substituted sentence is non-empty");
        buf[pos] = orig;
        state.queried[pos * state.num_words + slot] = true;
        state.phase1_queries += 1;
        if pred != example.label {
            state.flipped[slot] = true;
            state.flips.push(cand.slot);
            ledger.record(example.label, words[slot]);
            fails = 0;
        } else {
            fails += 1;
            if fails >= patience {
                break;
            }
        }
    }
}

/// Order the not-yet-successful words by ledger evidence: verified flips in
/// this class descending, then total verified flips descending, then word
/// id ascending.
fn phase2_order(
    words: &[WordId],
    label: usize,
    ledger: &SuccessLedger,
    state: &SearchState,
) -> Vec<u32> {
    let mut order: Vec<u32> = (0..words.len() as u32)
        .filter(|&s| !state.flipped[s as usize])
        .collect();
    order.sort_unstable_by(|&a, &b| {
        let wa = words[a as usize];
        let wb = words[b as usize];
        ledger
            .count(label, wb)
            .cmp(&ledger.count(label, wa))
            .then_with(|| ledger.total(wb).cmp(&ledger.total(wa)))
            .then_with(|| wa.0.cmp(&wb.0))
    });
    order
}

/// Verify each remaining word only at its best-scoring position, in ledger
/// order, under an independent patience counter. Pairs phase 1 already
/// queried are skipped without counting as attempts.
pub fn phase2(
    params: &ClassifierParams,
    example: &LabeledExample,
    words: &[WordId],
    table: &ScoreTable,
    patience: usize,
    ledger: &mut SuccessLedger,
    state: &mut SearchState,
) {
    let order = phase2_order(words, example.label, ledger, state);
    let mut buf = example.tokens.clone();
    let mut fails = 0usize;
    for slot_u32 in order {
        let slot = slot_u32 as usize;
        let Some(pos) = table.argmin_position(&example.tokens, words, slot) else {
            continue; // word occupies every position; nothing to substitute
        };
        if state.queried[pos * state.num_words + slot] {
            continue;
        }
        let orig = buf[pos];
        buf[pos] = words[slot];
        let pred = params.predict(&buf).expect("substituted sentence is non-empty");
        buf[pos] = orig;
        state.queried[pos * state.num_words + slot] = true;
        state.phase2_queries += 1;
        if pred != example.label {
            state.flipped[slot] = true;
            state.flips.push(slot_u32);
            ledger.record(example.label, words[slot]);
            fails = 0;
        } else {
            fails += 1;
            if fails >= patience {
                break;
            }
        }
    }
}

/// Accounting for one processed example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleStats {
    pub index: usize,
    pub phase1_queries: u64,
    pub phase2_queries: u64,
    pub gradient_passes: u64,
    pub flips_found: usize,
    pub elapsed_micros: u64,
}

/// Result of an estimation run.
#[derive(Debug, Clone)]
pub struct EstimateOutcome {
    pub capability: CapabilityVector,
    /// `1 - mean(estimated capability)`; an upper bound on the true
    /// robustness because only verified flips are counted.
    pub robustness_estimate: f64,
    pub per_example: Vec<ExampleStats>,
    /// Verified flip words per example, ascending by word id.
    pub flip_sets: Vec<Vec<WordId>>,
    pub ledger: SuccessLedger,
    pub total_queries: u64,
    pub total_gradient_passes: u64,
}

fn process_example(
    params: &ClassifierParams,
    example: &LabeledExample,
    index: usize,
    words: &[WordId],
    config: &EstimatorConfig,
    ledger: &mut SuccessLedger,
) -> (Vec<u32>, ExampleStats) {
    let start = Instant::now();
    let (table, candidates, gradient_passes) = match config.variant {
        Variant::Full => {
            let scores = masked_scores(params, example, words);
            let candidates = rank_all_substitutions(&scores.table, &example.tokens, words);
            (scores.table, candidates, example.tokens.len() as u64)
        }
        Variant::TopPosition => {
            let scores = masked_scores(params, example, words);
            let candidates = rank_top_positions(&scores.table, &example.tokens, words);
            (scores.table, candidates, example.tokens.len() as u64)
        }
        Variant::Unmasked => {
            let (_, table) = unmasked_scores(params, example, words);
            let candidates = rank_all_substitutions(&table, &example.tokens, words);
            (table, candidates, 1)
        }
    };
    let mut state = SearchState::new(example.tokens.len(), words.len());
    phase1(params, example, words, &candidates, config.patience, ledger, &mut state);
    phase2(params, example, words, &table, config.patience, ledger, &mut state);
    let stats = ExampleStats {
        index,
        phase1_queries: state.phase1_queries,
        phase2_queries: state.phase2_queries,
        gradient_passes,
        flips_found: state.flips.len(),
        elapsed_micros: start.elapsed().as_micros() as u64,
    };
    (state.flips, stats)
}

fn assemble_outcome(
    results: Vec<(Vec<u32>, ExampleStats)>,
    words: &[WordId],
    dplus: &CorrectSubset,
    config: &EstimatorConfig,
    ledger: SuccessLedger,
) -> EstimateOutcome {
    let n = results.len();
    let mut counts = vec![0u64; words.len()];
    let mut per_example = Vec::with_capacity(n);
    let mut flip_sets = Vec::with_capacity(n);
    let mut total_queries = 0;
    let mut total_gradient_passes = 0;
    for (flips, stats) in results {
        total_queries += stats.phase1_queries + stats.phase2_queries;
        total_gradient_passes += stats.gradient_passes;
        per_example.push(stats);
        let mut set: Vec<WordId> = flips.iter().map(|&s| words[s as usize]).collect();
        set.sort_unstable();
        for &s in &flips {
            counts[s as usize] += 1;
        }
        flip_sets.push(set);
    }
    let values: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let basis = format!(
        "{}:two-phase[variant={},patience={},ledger={}]",
        dplus.basis,
        config.variant,
        config.patience,
        match config.ledger_mode {
            LedgerMode::Serial => "serial",
            LedgerMode::Snapshot => "snapshot",
        }
    );
    let capability = CapabilityVector {
        words: words.to_vec(),
        values,
        basis,
        dplus_size: n,
    };
    let robustness_estimate = capability.robustness();
    EstimateOutcome {
        capability,
        robustness_estimate,
        per_example,
        flip_sets,
        ledger,
        total_queries,
        total_gradient_passes,
    }
}

/// Run the estimator over a correct subset. Examples are processed in
/// dataset order; in serial ledger mode each example's verified flips are
/// visible to all later examples, in snapshot mode every example sees the
/// run-start ledger and counts merge at the end.
pub fn estimate(
    params: &ClassifierParams,
    dplus: &CorrectSubset,
    words: &[WordId],
    config: &EstimatorConfig,
) -> EstimateOutcome {
    assert!(config.patience >= 1, "patience must be at least 1");
    assert!(!dplus.is_empty(), "correct subset must be non-empty");
    let mut results = Vec::with_capacity(dplus.len());
    match config.ledger_mode {
        LedgerMode::Serial => {
            let mut ledger = SuccessLedger::new(dplus.num_classes, params.vocab_size());
            for (i, ex) in dplus.examples().iter().enumerate() {
                results.push(process_example(params, ex, i, words, config, &mut ledger));
            }
            assemble_outcome(results, words, dplus, config, ledger)
        }
        LedgerMode::Snapshot => {
            let mut master = SuccessLedger::new(dplus.num_classes, params.vocab_size());
            let mut scratch = SuccessLedger::new(dplus.num_classes, params.vocab_size());
            for (i, ex) in dplus.examples().iter().enumerate() {
                scratch.clear();
                let out = process_example(params, ex, i, words, config, &mut scratch);
                master.merge(&scratch);
                results.push(out);
            }
            assemble_outcome(results, words, dplus, config, master)
        }
    }
}

/// Parallel snapshot-mode estimation: identical results to sequential
/// snapshot mode, examples distributed over threads. Serial mode cannot be
/// parallelized without changing its semantics, so it is rejected.
#[cfg(feature = "parallel")]
pub fn par_estimate(
    params: &ClassifierParams,
    dplus: &CorrectSubset,
    words: &[WordId],
    config: &EstimatorConfig,
) -> Result<EstimateOutcome, EstimatorError> {
    if config.ledger_mode == LedgerMode::Serial {
        return Err(EstimatorError::SerialNotParallelizable);
    }
    assert!(config.patience >= 1, "patience must be at least 1");
    assert!(!dplus.is_empty(), "correct subset must be non-empty");
    let per_example: Vec<(Vec<u32>, ExampleStats, SuccessLedger)> = dplus
        .examples()
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut scratch = SuccessLedger::new(dplus.num_classes, params.vocab_size());
            let (flips, stats) = process_example(params, ex, i, words, config, &mut scratch);
            (flips, stats, scratch)
        })
        .collect();
    let mut master = SuccessLedger::new(dplus.num_classes, params.vocab_size());
    let mut results = Vec::with_capacity(per_example.len());
    for (flips, stats, scratch) in per_example {
        master.merge(&scratch);
        results.push((flips, stats));
    }
    Ok(assemble_outcome(results, words, dplus, config, master))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, Split};
    use crate::oracle;

    fn ids(raw: &[u32]) -> Vec<WordId> {
        raw.iter().map(|&i| WordId(i)).collect()
    }

    /// A hand-built two-class model over embedding dimension 0: the
    /// prediction is 1 iff the mean of dimension 0 is positive (ties go to
    /// class 0). `values` assigns dimension-0 embedding entries per word.
    fn directional_params(vocab_size: usize, values: &[(WordId, f64)]) -> ClassifierParams {
        let mut p = ClassifierParams::zeros(vocab_size, 2).unwrap();
        for &(w, v) in values {
            p.embedding[w.index() * EMBED_DIM] = v;
        }
        p.hidden_w[0] = 1.0; // dim 0 -> hidden 0
        p.output_w[1] = 10.0; // hidden 0 -> class 1 logit
        p
    }

    #[test]
    fn masked_gradients_single_position() {
        let params = ClassifierParams::init(10, 2, 1).unwrap();
        let ex = LabeledExample {
            tokens: ids(&[5]),
            label: 0,
        };
        let (base, grads) = masked_gradients(&params, &ex.tokens, ex.label);
        assert_eq!(base.len(), 1);
        assert_eq!(grads.len(), EMBED_DIM);
        // The single masked sentence is just the mask token.
        let lp = params.forward_logprob(&[Vocabulary::MASK]).unwrap();
        assert_eq!(base[0], lp[0]);
        assert!(base[0] <= 0.0);
    }

    #[test]
    fn masked_base_logprobs_nonpositive() {
        let params = ClassifierParams::init(20, 4, 2).unwrap();
        let (base, _) = masked_gradients(&params, &ids(&[3, 8, 12, 5]), 2);
        assert!(base.iter().all(|&b| b <= 0.0));
    }

    #[test]
    fn masked_gradient_matches_finite_differences() {
        let params = ClassifierParams::init(20, 3, 9).unwrap();
        let tokens = ids(&[4, 9, 13]);
        let target = 1;
        let (_, grads) = masked_gradients(&params, &tokens, target);
        let h = 1e-5;
        for k in 0..tokens.len() {
            let mut masked = tokens.clone();
            masked[k] = Vocabulary::MASK;
            for coord in [0usize, 7, EMBED_DIM - 1] {
                let mut p = params.clone();
                let idx = Vocabulary::MASK.index() * EMBED_DIM + coord;
                p.embedding[idx] += h;
                let up = p.forward_logprob(&masked).unwrap()[target];
                p.embedding[idx] -= 2.0 * h;
                let down = p.forward_logprob(&masked).unwrap()[target];
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[k * EMBED_DIM + coord];
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-4,
                    "position {k} coord {coord}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn score_at_mask_word_equals_base_exactly() {
        let params = ClassifierParams::init(15, 3, 4).unwrap();
        let ex = LabeledExample {
            tokens: ids(&[3, 7, 9]),
            label: 1,
        };
        // Include the mask itself as a candidate: its embedding difference
        // is the zero vector, so the score must equal the base bit for bit.
        let words = vec![Vocabulary::MASK, WordId(5)];
        let scores = masked_scores(&params, &ex, &words);
        for k in 0..3 {
            assert_eq!(scores.table.at(k, 0), scores.base_logprob[k]);
        }
    }

    #[test]
    fn doubling_embedding_difference_doubles_score_term() {
        let mut params = ClassifierParams::init(15, 2, 6).unwrap();
        let (w1, w2) = (WordId(5), WordId(6));
        // e_{w2} - e_mask = 2 (e_{w1} - e_mask)
        for i in 0..EMBED_DIM {
            let mask = params.embedding[Vocabulary::MASK.index() * EMBED_DIM + i];
            let a = params.embedding[w1.index() * EMBED_DIM + i];
            params.embedding[w2.index() * EMBED_DIM + i] = 2.0 * a - mask;
        }
        let ex = LabeledExample {
            tokens: ids(&[3, 8]),
            label: 0,
        };
        let scores = masked_scores(&params, &ex, &[w1, w2]);
        for k in 0..2 {
            let base = scores.base_logprob[k];
            let t1 = scores.table.at(k, 0) - base;
            let t2 = scores.table.at(k, 1) - base;
            assert!((t2 - 2.0 * t1).abs() < 1e-12, "{t2} != 2 * {t1}");
        }
    }

    #[test]
    fn scores_match_scalar_recomputation() {
        let params = ClassifierParams::init(12, 3, 8).unwrap();
        let ex = LabeledExample {
            tokens: ids(&[2, 5, 9]),
            label: 2,
        };
        let words = ids(&[3, 4, 6, 7, 10]);
        let scores = masked_scores(&params, &ex, &words);
        let mask_row: Vec<f64> = params.embedding_row(Vocabulary::MASK).to_vec();
        for k in 0..3 {
            for (slot, w) in words.iter().enumerate() {
                let row = params.embedding_row(*w);
                let g = &scores.mask_gradients[k * EMBED_DIM..(k + 1) * EMBED_DIM];
                let mut dot = 0.0;
                for i in 0..EMBED_DIM {
                    dot += g[i] * (row[i] - mask_row[i]);
                }
                let expected = scores.base_logprob[k] + dot;
                assert_eq!(scores.table.at(k, slot), expected);
            }
        }
    }

    #[test]
    fn unmasked_scores_identity_word_equals_base() {
        let params = ClassifierParams::init(12, 2, 3).unwrap();
        let ex = LabeledExample {
            tokens: ids(&[4, 7]),
            label: 0,
        };
        // Score of substituting the word already at the position: zero
        // difference vector, so exactly the base log-probability.
        let words = ids(&[4, 9]);
        let (base, table) = unmasked_scores(&params, &ex, &words);
        assert_eq!(table.at(0, 0), base);
        let lp = params.forward_logprob(&ex.tokens).unwrap()[0];
        assert_eq!(base, lp);
    }

    /// Instance where the score ordering front-loads failures: patience 1
    /// stops phase 1 after exactly one query.
    #[test]
    fn phase1_patience_one_single_query() {
        let params = ClassifierParams::zeros(8, 2).unwrap(); // constant class 0
        let ex = LabeledExample {
            tokens: ids(&[2, 3]),
            label: 0,
        };
        let words = ids(&[4, 5, 6]);
        let scores = masked_scores(&params, &ex, &words);
        let candidates = rank_all_substitutions(&scores.table, &ex.tokens, &words);
        let mut ledger = SuccessLedger::new(2, 8);
        let mut state = SearchState::new(2, 3);
        phase1(&params, &ex, &words, &candidates, 1, &mut ledger, &mut state);
        assert_eq!(state.phase1_queries, 1);
        assert!(state.flips().is_empty());
    }

    #[test]
    fn phase1_success_resets_failure_counter() {
        // Words: one strong flipper ordered first, then duds. With patience
        // 2 and the success first, the walk survives two subsequent duds.
        let flipper = WordId(2);
        let duds = [WordId(3), WordId(4)];
        let params = directional_params(
            8,
            &[(flipper, 50.0), (duds[0], -1.0), (duds[1], -1.0), (WordId(5), -2.0), (WordId(6), -2.0)],
        );
        let ex = LabeledExample {
            tokens: ids(&[5, 6]),
            label: 0,
        };
        assert_eq!(params.predict(&ex.tokens).unwrap(), 0);
        let words = vec![flipper, duds[0], duds[1]];
        let scores = masked_scores(&params, &ex, &words);
        let candidates = rank_all_substitutions(&scores.table, &ex.tokens, &words);
        let mut ledger = SuccessLedger::new(2, 8);
        let mut state = SearchState::new(2, 3);
        phase1(&params, &ex, &words, &candidates, 2, &mut ledger, &mut state);
        // The flipper succeeds on its first candidate; its second position
        // is skipped; then 2 consecutive dud failures hit patience. Had the
        // counter not reset, the walk would have stopped earlier.
        assert_eq!(state.flips().len(), 1);
        assert_eq!(words[state.flips()[0] as usize], flipper);
        assert_eq!(state.phase1_queries, 3);
        assert_eq!(ledger.count(0, flipper), 1);
    }

    #[test]
    fn phase2_orders_by_ledger_count() {
        let words = ids(&[5, 6, 7]);
        let mut ledger = SuccessLedger::new(2, 10);
        for _ in 0..2 {
            ledger.record(0, WordId(7));
        }
        for _ in 0..5 {
            ledger.record(0, WordId(6));
        }
        let state = SearchState::new(1, 3);
        let order = phase2_order(&words, 0, &ledger, &state);
        assert_eq!(order, vec![1, 2, 0]); // count 5, count 2, count 0
    }

    #[test]
    fn phase2_ties_break_on_total_then_word_id() {
        let words = ids(&[5, 6, 7]);
        let mut ledger = SuccessLedger::new(3, 10);
        // Equal counts in class 0; word 7 has more flips overall.
        ledger.record(0, WordId(6));
        ledger.record(0, WordId(7));
        ledger.record(1, WordId(7));
        let state = SearchState::new(1, 3);
        let order = phase2_order(&words, 0, &ledger, &state);
        assert_eq!(order, vec![2, 1, 0]);
    }

    /// The constructed miss: saturated gradients make phase-1 scores
    /// uninformative for one example, but the ledger built on an earlier
    /// example routes phase 2 straight to the strong word.
    #[test]
    fn phase2_recovers_flip_missed_by_phase1() {
        let strong = WordId(12);
        let mut values: Vec<(WordId, f64)> = (2..12).map(|i| (WordId(i), -1.0)).collect();
        values.push((strong, 60.0));
        // Sentence words: a/b mild for the first example, huge negatives
        // for the second so its masked means saturate tanh.
        values.push((WordId(13), -0.4));
        values.push((WordId(14), -0.6));
        values.push((WordId(15), -50.0));
        values.push((WordId(16), -50.0));
        let params = directional_params(20, &values);

        let first = LabeledExample {
            tokens: ids(&[13, 14]),
            label: 0,
        };
        let second = LabeledExample {
            tokens: ids(&[15, 16]),
            label: 0,
        };
        assert_eq!(params.predict(&first.tokens).unwrap(), 0);
        assert_eq!(params.predict(&second.tokens).unwrap(), 0);

        let mut words: Vec<WordId> = (2..13).map(WordId).collect(); // duds + strong
        words.sort_unstable();

        // Saturation check: every masked score of the second example ties
        // with its base, so ranking degenerates to word id and phase 1
        // burns its patience on duds.
        let scores2 = masked_scores(&params, &second, &words);
        for k in 0..2 {
            for slot in 0..words.len() {
                assert_eq!(scores2.table.at(k, slot), scores2.base_logprob[k]);
            }
        }

        let config = EstimatorConfig {
            patience: 3,
            variant: Variant::Full,
            ledger_mode: LedgerMode::Serial,
        };
        let ds = Dataset::new(vec![first, second], 2, Split::Train).unwrap();
        let classify = |t: &[WordId]| params.predict(t).unwrap();
        let dplus = CorrectSubset::new(classify, &ds, None);
        let outcome = estimate(&params, &dplus, &words, &config);

        // Both examples flip on the strong word; the second found it in
        // phase 2 (phase 1 found nothing for it).
        assert!(outcome.flip_sets[0].contains(&strong));
        assert!(outcome.flip_sets[1].contains(&strong));
        assert_eq!(outcome.per_example[1].phase1_queries, 3); // patience burn
        assert!(outcome.per_example[1].phase2_queries >= 1);
        assert_eq!(outcome.per_example[1].flips_found, 1);
    }

    fn toy_trained_instance() -> (ClassifierParams, CorrectSubset, Vec<WordId>) {
        // Small two-class dataset with informative words; trained long
        // enough to classify correctly.
        let mut examples = Vec::new();
        for i in 0..16 {
            let (a, b, label) = if i % 2 == 0 { (2u32, 3u32, 0) } else { (8, 9, 1) };
            examples.push(LabeledExample {
                tokens: ids(&[a, b, a + (i % 3), b]),
                label,
            });
        }
        let ds = Dataset::new(examples, 2, Split::Train).unwrap();
        let texts: Vec<String> = (0..12).map(|i| format!("t{i}")).collect();
        let vocab = Vocabulary::build(texts.iter().map(String::as_str), 1).unwrap();
        let config = crate::model::TrainConfig {
            steps: 400,
            batch_size: 8,
            ..Default::default()
        };
        let (params, _) = crate::model::train(&ds, &vocab, &config, None).unwrap();
        let classify = |t: &[WordId]| params.predict(t).unwrap();
        let dplus = CorrectSubset::new(classify, &ds, None);
        assert!(!dplus.is_empty());
        let words = vocab.usable_words();
        (params, dplus, words)
    }

    #[test]
    fn infinite_patience_matches_brute_force() {
        let (params, dplus, words) = toy_trained_instance();
        let classify = |t: &[WordId]| params.predict(t).unwrap();
        let matrix = oracle::brute_force_matrix(classify, &dplus, &words);

        let config = EstimatorConfig {
            patience: 64 * words.len() + 1,
            variant: Variant::Full,
            ledger_mode: LedgerMode::Serial,
        };
        let outcome = estimate(&params, &dplus, &words, &config);
        for (row, flips) in outcome.flip_sets.iter().enumerate() {
            assert_eq!(flips, &matrix.row_flip_words(row), "row {row}");
        }
        for (slot, &v) in outcome.capability.values.iter().enumerate() {
            assert_eq!(v, matrix.flip_capability(slot));
        }
        assert_eq!(outcome.robustness_estimate, matrix.robustness());
    }

    #[test]
    fn estimate_is_sound_and_deterministic() {
        let (params, dplus, words) = toy_trained_instance();
        let classify = |t: &[WordId]| params.predict(t).unwrap();
        let matrix = oracle::brute_force_matrix(classify, &dplus, &words);
        for patience in [1usize, 2, 8] {
            let config = EstimatorConfig {
                patience,
                variant: Variant::Full,
                ledger_mode: LedgerMode::Serial,
            };
            let a = estimate(&params, &dplus, &words, &config);
            let b = estimate(&params, &dplus, &words, &config);
            assert_eq!(a.capability.values, b.capability.values);
            assert_eq!(a.total_queries, b.total_queries);
            for (slot, &v) in a.capability.values.iter().enumerate() {
                assert!(v <= matrix.flip_capability(slot));
            }
            assert!(a.robustness_estimate >= matrix.robustness());
        }
    }

    #[test]
    fn variant_accounting() {
        let (params, dplus, words) = toy_trained_instance();
        let patience = 4;
        let top = estimate(
            &params,
            &dplus,
            &words,
            &EstimatorConfig {
                patience,
                variant: Variant::TopPosition,
                ledger_mode: LedgerMode::Serial,
            },
        );
        for stats in &top.per_example {
            assert!(stats.phase1_queries <= words.len() as u64);
            let len = dplus.examples()[stats.index].tokens.len() as u64;
            assert_eq!(stats.gradient_passes, len);
        }
        let unmasked = estimate(
            &params,
            &dplus,
            &words,
            &EstimatorConfig {
                patience,
                variant: Variant::Unmasked,
                ledger_mode: LedgerMode::Snapshot,
            },
        );
        for stats in &unmasked.per_example {
            assert_eq!(stats.gradient_passes, 1);
        }
        assert_eq!(unmasked.total_gradient_passes, dplus.len() as u64);
    }

    #[test]
    fn snapshot_total_flips_monotone_in_patience() {
        let (params, dplus, words) = toy_trained_instance();
        let mut last_total = 0usize;
        for patience in [1usize, 2, 4, 16, 64, 1024] {
            let config = EstimatorConfig {
                patience,
                variant: Variant::Full,
                ledger_mode: LedgerMode::Snapshot,
            };
            let outcome = estimate(&params, &dplus, &words, &config);
            let total: usize = outcome.per_example.iter().map(|s| s.flips_found).sum();
            assert!(
                total >= last_total,
                "patience {patience}: {total} < {last_total}"
            );
            last_total = total;
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_snapshot_matches_sequential_snapshot() {
        let (params, dplus, words) = toy_trained_instance();
        let config = EstimatorConfig {
            patience: 8,
            variant: Variant::Full,
            ledger_mode: LedgerMode::Snapshot,
        };
        let seq = estimate(&params, &dplus, &words, &config);
        let par = par_estimate(&params, &dplus, &words, &config).unwrap();
        assert_eq!(seq.capability.values, par.capability.values);
        assert_eq!(seq.flip_sets, par.flip_sets);
        assert_eq!(seq.total_queries, par.total_queries);
        assert_eq!(seq.ledger, par.ledger);

        let serial_config = EstimatorConfig {
            ledger_mode: LedgerMode::Serial,
            ..config
        };
        assert!(matches!(
            par_estimate(&params, &dplus, &words, &serial_config),
            Err(EstimatorError::SerialNotParallelizable)
        ));
    }
}
