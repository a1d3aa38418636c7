//! Augmentation-based hardening against single-word substitutions.
//!
//! Each training iteration transforms its batch: a configurable fraction
//! receives gradient-guided augmentation (the single substitution with the
//! lowest first-order score, i.e. the one most likely to cause a
//! misclassification), and the rest draw among leaving the example
//! unchanged, substituting a uniformly random word, or substituting a word
//! that is markedly more frequent in some other class. Labels and sentence
//! lengths are always preserved and at most one token changes.
//!
//! Augmentation operates on per-iteration copies; the stored dataset is
//! never mutated. Within a batch, augmentations are independent (and
//! parallelized when the `parallel` feature is on); the training step
//! itself remains single-writer.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{special_words, CorpusError, Dataset, FrequencyTable, LabeledExample, Vocabulary, WordId};
use crate::estimator::unmasked_scores;
use crate::model::{self, BatchAugmenter, ClassifierParams, ModelError, TrainConfig, TrainLog};
use crate::util::derive_seed2;

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("bad augmentation policy: {0}")]
    BadPolicy(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Relative weights for the non-gradient half of each batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixWeights {
    pub original: f64,
    pub random: f64,
    pub special: f64,
}

impl Default for MixWeights {
    fn default() -> Self {
        // Uniform thirds.
        Self {
            original: 1.0,
            random: 1.0,
            special: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    /// Fraction of each batch receiving gradient-guided augmentation.
    pub gradient_fraction: f64,
    pub mix: MixWeights,
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            gradient_fraction: 0.5,
            mix: MixWeights::default(),
            seed: 0,
        }
    }
}

/// Replace one uniformly chosen position with a uniformly chosen usable
/// word different from the current one. Label and length are unchanged;
/// Hamming distance from the input is exactly 1.
pub fn random_augment(
    example: &LabeledExample,
    usable: &[WordId],
    rng: &mut ChaCha8Rng,
) -> LabeledExample {
    assert!(usable.len() >= 2, "need at least two candidate words");
    let mut out = example.clone();
    let pos = rng.random_range(0..out.tokens.len());
    let current = out.tokens[pos];
    let mut word = usable[rng.random_range(0..usable.len())];
    while word == current {
        word = usable[rng.random_range(0..usable.len())];
    }
    out.tokens[pos] = word;
    out
}

/// Apply the substitution with the globally minimal first-order score over
/// all (position, word) pairs; ties break on lower position, then lower
/// word id. One forward-backward pass per call. The word already at a
/// position participates (its score is the unperturbed log-probability), so
/// the augmentation can leave the example unchanged in the degenerate case
/// where no substitution looks harmful.
pub fn gradient_augment(
    params: &ClassifierParams,
    example: &LabeledExample,
    usable: &[WordId],
) -> LabeledExample {
    let (_, table) = unmasked_scores(params, example, usable);
    let mut best: Option<(f64, usize, usize)> = None;
    for pos in 0..example.tokens.len() {
        for slot in 0..usable.len() {
            let v = table.at(pos, slot);
            if best.map_or(true, |(bv, _, _)| v < bv) {
                best = Some((v, pos, slot));
            }
        }
    }
    let mut out = example.clone();
    if let Some((_, pos, slot)) = best {
        out.tokens[pos] = usable[slot];
    }
    out
}

/// Replace one uniformly chosen position with a uniform draw from the
/// class's special-word set. Falls back to [`random_augment`] when the set
/// is empty; the flag reports whether the fallback was taken.
pub fn special_word_augment(
    example: &LabeledExample,
    special: &[WordId],
    usable: &[WordId],
    rng: &mut ChaCha8Rng,
) -> (LabeledExample, bool) {
    if special.is_empty() {
        return (random_augment(example, usable, rng), true);
    }
    let mut out = example.clone();
    let pos = rng.random_range(0..out.tokens.len());
    out.tokens[pos] = special[rng.random_range(0..special.len())];
    (out, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AugKind {
    Gradient,
    Original,
    Random,
    Special,
}

/// How one batch was transformed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BatchComposition {
    pub step: usize,
    pub gradient: usize,
    pub original: usize,
    pub random: usize,
    pub special: usize,
    /// Special-word draws that fell back to random augmentation because the
    /// class had no special words.
    pub special_fallbacks: usize,
}

/// Batch transform implementing the defense policy; plugs into the trainer
/// as its augmenter hook and keeps per-step composition records.
pub struct DefenseAugmenter {
    policy: AugmentationPolicy,
    usable: Vec<WordId>,
    special: Vec<Vec<WordId>>, // per class
    pub compositions: Vec<BatchComposition>,
}

impl DefenseAugmenter {
    pub fn new(
        policy: AugmentationPolicy,
        vocab: &Vocabulary,
        freq: &FrequencyTable,
    ) -> Result<Self, DefenseError> {
        if !(0.0..=1.0).contains(&policy.gradient_fraction) {
            return Err(DefenseError::BadPolicy(
                "gradient_fraction must lie in [0, 1]".into(),
            ));
        }
        let m = policy.mix;
        if m.original < 0.0 || m.random < 0.0 || m.special < 0.0 {
            return Err(DefenseError::BadPolicy("mix weights must be non-negative".into()));
        }
        if m.original + m.random + m.special <= 0.0 {
            return Err(DefenseError::BadPolicy("mix weights must sum to a positive value".into()));
        }
        let special = (0..freq.num_classes())
            .map(|class| special_words(freq, class))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            policy,
            usable: vocab.usable_words(),
            special,
            compositions: Vec::new(),
        })
    }

    /// Special-word sets, one per class.
    pub fn special_tables(&self) -> &[Vec<WordId>] {
        &self.special
    }

    fn draw_kind(&self, rng: &mut ChaCha8Rng) -> AugKind {
        let m = self.policy.mix;
        let total = m.original + m.random + m.special;
        let dart = rng.random::<f64>() * total;
        if dart < m.original {
            AugKind::Original
        } else if dart < m.original + m.random {
            AugKind::Random
        } else {
            AugKind::Special
        }
    }
}

impl BatchAugmenter for DefenseAugmenter {
    fn augment(&mut self, params: &ClassifierParams, batch: &mut [LabeledExample], step: usize) {
        let b = batch.len();
        if b == 0 {
            return;
        }
        let n_grad = ((self.policy.gradient_fraction * b as f64).ceil() as usize).min(b);

        // The gradient half is re-selected every iteration via a seeded
        // shuffle; the remainder draws its kind from the mix.
        let mut step_rng = ChaCha8Rng::seed_from_u64(derive_seed2(self.policy.seed, step as u64, 0));
        let mut perm: Vec<usize> = (0..b).collect();
        for i in (1..b).rev() {
            let j = step_rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let mut kinds = vec![AugKind::Original; b];
        for (rank, &slot) in perm.iter().enumerate() {
            kinds[slot] = if rank < n_grad {
                AugKind::Gradient
            } else {
                self.draw_kind(&mut step_rng)
            };
        }

        // Per-slot transforms are independent; each non-gradient slot owns
        // a derived random stream so parallel and sequential execution
        // agree bit for bit.
        let apply = |(slot, ex): (usize, &mut LabeledExample)| -> bool {
            match kinds[slot] {
                AugKind::Original => false,
                AugKind::Gradient => {
                    *ex = gradient_augment(params, ex, &self.usable);
                    false
                }
                AugKind::Random => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed2(
                        self.policy.seed,
                        step as u64,
                        1 + slot as u64,
                    ));
                    *ex = random_augment(ex, &self.usable, &mut rng);
                    false
                }
                AugKind::Special => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed2(
                        self.policy.seed,
                        step as u64,
                        1 + slot as u64,
                    ));
                    let (out, fallback) =
                        special_word_augment(ex, &self.special[ex.label], &self.usable, &mut rng);
                    *ex = out;
                    fallback
                }
            }
        };

        #[cfg(feature = "parallel")]
        let fallbacks: usize = batch
            .par_iter_mut()
            .enumerate()
            .map(apply)
            .filter(|&f| f)
            .count();
        #[cfg(not(feature = "parallel"))]
        let fallbacks: usize = batch.iter_mut().enumerate().map(apply).filter(|&f| f).count();

        let mut comp = BatchComposition {
            step,
            special_fallbacks: fallbacks,
            ..Default::default()
        };
        for kind in &kinds {
            match kind {
                AugKind::Gradient => comp.gradient += 1,
                AugKind::Original => comp.original += 1,
                AugKind::Random => comp.random += 1,
                AugKind::Special => comp.special += 1,
            }
        }
        self.compositions.push(comp);
    }
}

/// Continue training an already-trained classifier with per-iteration batch
/// augmentation, returning the hardened parameters, the loss log, and the
/// per-step augmentation composition.
pub fn harden(
    params: ClassifierParams,
    train: &Dataset,
    vocab: &Vocabulary,
    freq: &FrequencyTable,
    policy: &AugmentationPolicy,
    config: &TrainConfig,
) -> Result<(ClassifierParams, TrainLog, Vec<BatchComposition>), DefenseError> {
    let mut augmenter = DefenseAugmenter::new(*policy, vocab, freq)?;
    let (hardened, log) = model::continue_training(params, train, config, Some(&mut augmenter))?;
    Ok((hardened, log, augmenter.compositions))
}
