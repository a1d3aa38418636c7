//! A small differentiable text classifier with analytic gradients with
//! respect to any input position's embedding, plus its trainer.
//!
//! Architecture: mean-pooled word embeddings (width 32) -> affine -> tanh
//! (width 64) -> affine -> log-softmax. Mean pooling makes the network
//! permutation-invariant over token positions, unlike order-sensitive
//! transformer classifiers; substitution searches only need `f(y|x)`,
//! per-position embedding gradients, and a mask embedding, and this is the
//! smallest architecture that provides all three with hand-derivable
//! backprop.
//!
//! Parameters are immutable during evaluation, so any number of workers may
//! read them concurrently. Training is single-writer; the augmenter hook is
//! invoked serially per batch.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Dataset, LabeledExample, Vocabulary, WordId};

/// Embedding width.
pub const EMBED_DIM: usize = 32;
/// Hidden layer width.
pub const HIDDEN_DIM: usize = 64;
/// Upper bound on class count; keeps forward-pass buffers on the stack.
pub const MAX_CLASSES: usize = 16;

const CHECKPOINT_MAGIC: &[u8; 8] = b"WFCKPT01";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot classify an empty sentence")]
    EmptySentence,
    #[error("position {position} out of range for sentence of length {len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("classifier supports at most {MAX_CLASSES} classes, got {0}")]
    TooManyClasses(usize),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: usize },
    #[error("bad checkpoint: {reason}")]
    BadCheckpoint { reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// All learnable weights of the classifier, including the embedding table.
///
/// Row `Vocabulary::MASK` of the embedding table is the mask embedding; it
/// is trained by randomly masking tokens during training so the vector is
/// meaningful at estimation time.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    vocab_size: usize,
    num_classes: usize,
    /// `vocab_size x EMBED_DIM`, row-major.
    pub embedding: Vec<f64>,
    /// `EMBED_DIM x HIDDEN_DIM`, row-major.
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    /// `HIDDEN_DIM x num_classes`, row-major.
    pub output_w: Vec<f64>,
    pub output_b: Vec<f64>,
}

impl ClassifierParams {
    /// All-zero parameters; classifies everything as class 0.
    pub fn zeros(vocab_size: usize, num_classes: usize) -> Result<Self, ModelError> {
        if num_classes > MAX_CLASSES {
            return Err(ModelError::TooManyClasses(num_classes));
        }
        Ok(Self {
            vocab_size,
            num_classes,
            embedding: vec![0.0; vocab_size * EMBED_DIM],
            hidden_w: vec![0.0; EMBED_DIM * HIDDEN_DIM],
            hidden_b: vec![0.0; HIDDEN_DIM],
            output_w: vec![0.0; HIDDEN_DIM * num_classes],
            output_b: vec![0.0; num_classes],
        })
    }

    /// Seeded initialization, uniform in [-0.1, 0.1].
    pub fn init(vocab_size: usize, num_classes: usize, seed: u64) -> Result<Self, ModelError> {
        let mut params = Self::zeros(vocab_size, num_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for group in [
            &mut params.embedding,
            &mut params.hidden_w,
            &mut params.hidden_b,
            &mut params.output_w,
            &mut params.output_b,
        ] {
            for v in group.iter_mut() {
                *v = rng.random_range(-0.1..=0.1);
            }
        }
        Ok(params)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn embedding_row(&self, word: WordId) -> &[f64] {
        let start = word.index() * EMBED_DIM;
        &self.embedding[start..start + EMBED_DIM]
    }

    /// Mean of the token embeddings, the pooled representation the head
    /// operates on. Summation order is the token order, so results are
    /// bit-reproducible.
    pub fn mean_embedding(&self, tokens: &[WordId]) -> Result<[f64; EMBED_DIM], ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySentence);
        }
        let mut mean = [0.0f64; EMBED_DIM];
        for &t in tokens {
            let row = self.embedding_row(t);
            for (m, r) in mean.iter_mut().zip(row) {
                *m += r;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        for m in &mut mean {
            *m *= inv;
        }
        Ok(mean)
    }

    /// Hidden activations and log-probabilities for a pooled mean. Returns
    /// the tanh activations so backward passes can reuse them.
    fn head(&self, mean: &[f64; EMBED_DIM]) -> ([f64; HIDDEN_DIM], [f64; MAX_CLASSES]) {
        let mut act = [0.0f64; HIDDEN_DIM];
        act.copy_from_slice(&self.hidden_b);
        for (i, &m) in mean.iter().enumerate() {
            let row = &self.hidden_w[i * HIDDEN_DIM..(i + 1) * HIDDEN_DIM];
            for (a, w) in act.iter_mut().zip(row) {
                *a += m * w;
            }
        }
        for a in &mut act {
            *a = a.tanh();
        }

        let c = self.num_classes;
        let mut logits = [0.0f64; MAX_CLASSES];
        logits[..c].copy_from_slice(&self.output_b);
        for (j, &t) in act.iter().enumerate() {
            let row = &self.output_w[j * c..(j + 1) * c];
            for (z, w) in logits[..c].iter_mut().zip(row) {
                *z += t * w;
            }
        }
        // log-softmax in place
        let max = logits[..c].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits[..c].iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        for z in &mut logits[..c] {
            *z -= lse;
        }
        (act, logits)
    }

    /// Log-probabilities of each class for a sentence.
    pub fn forward_logprob(&self, tokens: &[WordId]) -> Result<Vec<f64>, ModelError> {
        let mean = self.mean_embedding(tokens)?;
        let (_, logprob) = self.head(&mean);
        Ok(logprob[..self.num_classes].to_vec())
    }

    /// Predicted class: argmax of the log-probabilities, ties broken by the
    /// lowest class index.
    pub fn predict(&self, tokens: &[WordId]) -> Result<usize, ModelError> {
        let mean = self.mean_embedding(tokens)?;
        let (_, logprob) = self.head(&mean);
        let mut best = 0;
        for c in 1..self.num_classes {
            if logprob[c] > logprob[best] {
                best = c;
            }
        }
        Ok(best)
    }

    /// Log-probability of `target` plus its gradient with respect to the
    /// pooled mean embedding. This is the single backward pass every
    /// substitution score is derived from.
    pub fn logprob_and_mean_grad(
        &self,
        tokens: &[WordId],
        target: usize,
    ) -> Result<(f64, [f64; EMBED_DIM]), ModelError> {
        let mean = self.mean_embedding(tokens)?;
        let (act, logprob) = self.head(&mean);
        let c = self.num_classes;

        // d logp[target] / d z = onehot(target) - softmax(z)
        let mut dz = [0.0f64; MAX_CLASSES];
        for i in 0..c {
            dz[i] = -logprob[i].exp();
        }
        dz[target] += 1.0;

        let mut da = [0.0f64; HIDDEN_DIM];
        for (j, a) in da.iter_mut().enumerate() {
            let row = &self.output_w[j * c..(j + 1) * c];
            let dt: f64 = row.iter().zip(&dz[..c]).map(|(w, d)| w * d).sum();
            *a = (1.0 - act[j] * act[j]) * dt;
        }

        let mut dmean = [0.0f64; EMBED_DIM];
        for (i, g) in dmean.iter_mut().enumerate() {
            let row = &self.hidden_w[i * HIDDEN_DIM..(i + 1) * HIDDEN_DIM];
            *g = row.iter().zip(&da).map(|(w, d)| w * d).sum();
        }
        Ok((logprob[target], dmean))
    }

    /// Gradient of `log f(target | tokens)` with respect to the embedding
    /// vector at `position`, whatever word or mask occupies it. Under mean
    /// pooling this is the mean gradient scaled by `1/len`.
    pub fn grad_wrt_position(
        &self,
        tokens: &[WordId],
        position: usize,
        target: usize,
    ) -> Result<Vec<f64>, ModelError> {
        if position >= tokens.len() {
            return Err(ModelError::PositionOutOfRange {
                position,
                len: tokens.len(),
            });
        }
        let (_, dmean) = self.logprob_and_mean_grad(tokens, target)?;
        let inv = 1.0 / tokens.len() as f64;
        Ok(dmean.iter().map(|g| g * inv).collect())
    }

    /// Accumulate `scale * d log f(target|tokens) / d theta` into `grads`
    /// and return the log-probability of the target class.
    fn logprob_backward(
        &self,
        tokens: &[WordId],
        target: usize,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64, ModelError> {
        let mean = self.mean_embedding(tokens)?;
        let (act, logprob) = self.head(&mean);
        let c = self.num_classes;

        let mut dz = [0.0f64; MAX_CLASSES];
        for i in 0..c {
            dz[i] = -logprob[i].exp();
        }
        dz[target] += 1.0;

        for (j, &t) in act.iter().enumerate() {
            for (i, d) in dz[..c].iter().enumerate() {
                grads.output_w[j * c + i] += scale * t * d;
            }
        }
        for (g, d) in grads.output_b.iter_mut().zip(&dz[..c]) {
            *g += scale * d;
        }

        let mut da = [0.0f64; HIDDEN_DIM];
        for (j, a) in da.iter_mut().enumerate() {
            let row = &self.output_w[j * c..(j + 1) * c];
            let dt: f64 = row.iter().zip(&dz[..c]).map(|(w, d)| w * d).sum();
            *a = (1.0 - act[j] * act[j]) * dt;
        }
        for (i, &m) in mean.iter().enumerate() {
            let row = &mut grads.hidden_w[i * HIDDEN_DIM..(i + 1) * HIDDEN_DIM];
            for (g, d) in row.iter_mut().zip(&da) {
                *g += scale * m * d;
            }
        }
        for (g, d) in grads.hidden_b.iter_mut().zip(&da) {
            *g += scale * d;
        }

        let mut dmean = [0.0f64; EMBED_DIM];
        for (i, g) in dmean.iter_mut().enumerate() {
            let row = &self.hidden_w[i * HIDDEN_DIM..(i + 1) * HIDDEN_DIM];
            *g = row.iter().zip(&da).map(|(w, d)| w * d).sum();
        }
        let token_scale = scale / tokens.len() as f64;
        for &t in tokens {
            let row = &mut grads.embedding[t.index() * EMBED_DIM..(t.index() + 1) * EMBED_DIM];
            for (g, d) in row.iter_mut().zip(&dmean) {
                *g += token_scale * d;
            }
        }
        Ok(logprob[target])
    }
}

/// Flat gradient (and velocity) storage matching [`ClassifierParams`].
#[derive(Debug, Clone)]
pub(crate) struct Gradients {
    pub embedding: Vec<f64>,
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    pub output_w: Vec<f64>,
    pub output_b: Vec<f64>,
}

impl Gradients {
    fn zeros_like(params: &ClassifierParams) -> Self {
        Self {
            embedding: vec![0.0; params.embedding.len()],
            hidden_w: vec![0.0; params.hidden_w.len()],
            hidden_b: vec![0.0; params.hidden_b.len()],
            output_w: vec![0.0; params.output_w.len()],
            output_b: vec![0.0; params.output_b.len()],
        }
    }

    fn clear(&mut self) {
        for group in [
            &mut self.embedding,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.output_w,
            &mut self.output_b,
        ] {
            group.fill(0.0);
        }
    }
}

/// Training hyperparameters. All randomness flows from `seed`, so a rerun
/// with the same configuration reproduces the parameters bit for bit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Probability of replacing a token with the mask id during training;
    /// keeps the mask embedding meaningful for masked scoring.
    pub mask_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            mask_prob: 0.1,
            seed: 0,
        }
    }
}

/// Per-batch transform applied before the masking step of each training
/// iteration; receives the current parameters so gradient-guided
/// augmentation can use them. Invoked serially, once per batch.
pub trait BatchAugmenter {
    fn augment(&mut self, params: &ClassifierParams, batch: &mut [LabeledExample], step: usize);
}

/// Mean loss per step.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

/// Train a fresh classifier on the dataset.
pub fn train(
    dataset: &Dataset,
    vocab: &Vocabulary,
    config: &TrainConfig,
    augmenter: Option<&mut dyn BatchAugmenter>,
) -> Result<(ClassifierParams, TrainLog), ModelError> {
    let params = ClassifierParams::init(vocab.len(), dataset.num_classes, config.seed)?;
    continue_training(params, dataset, config, augmenter)
}

/// Continue training existing parameters; used both by [`train`] and by
/// augmentation-based hardening.
pub fn continue_training(
    mut params: ClassifierParams,
    dataset: &Dataset,
    config: &TrainConfig,
    mut augmenter: Option<&mut dyn BatchAugmenter>,
) -> Result<(ClassifierParams, TrainLog), ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    assert!(config.batch_size >= 1, "batch_size must be at least 1");
    assert!(config.learning_rate > 0.0, "learning_rate must be positive");

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut grads = Gradients::zeros_like(&params);
    let mut velocity = Gradients::zeros_like(&params);
    let mut log = TrainLog::default();
    let mut batch: Vec<LabeledExample> = Vec::with_capacity(config.batch_size);

    for step in 0..config.steps {
        batch.clear();
        for _ in 0..config.batch_size {
            let idx = rng.random_range(0..dataset.len());
            batch.push(dataset.examples[idx].clone());
        }
        if let Some(aug) = augmenter.as_deref_mut() {
            aug.augment(&params, &mut batch, step);
        }
        // Random masking, applied after augmentation on the per-iteration copy.
        if config.mask_prob > 0.0 {
            for ex in &mut batch {
                for t in &mut ex.tokens {
                    if rng.random::<f64>() < config.mask_prob {
                        *t = Vocabulary::MASK;
                    }
                }
            }
        }

        grads.clear();
        let scale = -1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for ex in &batch {
            let logp = params.logprob_backward(&ex.tokens, ex.label, scale, &mut grads)?;
            loss -= logp;
        }
        loss /= batch.len() as f64;
        if !loss.is_finite() {
            return Err(ModelError::Divergence { step });
        }
        log.losses.push(loss);

        let mu = config.momentum;
        let lr = config.learning_rate;
        for (p, (v, g)) in [
            (&mut params.embedding, (&mut velocity.embedding, &grads.embedding)),
            (&mut params.hidden_w, (&mut velocity.hidden_w, &grads.hidden_w)),
            (&mut params.hidden_b, (&mut velocity.hidden_b, &grads.hidden_b)),
            (&mut params.output_w, (&mut velocity.output_w, &grads.output_w)),
            (&mut params.output_b, (&mut velocity.output_b, &grads.output_b)),
        ] {
            for i in 0..p.len() {
                v[i] = mu * v[i] + g[i];
                p[i] -= lr * v[i];
            }
        }
    }
    Ok((params, log))
}

/// Serialize parameters: magic, shape header, then row-major f64 payloads.
/// The round trip is bit-exact.
pub fn save_checkpoint(params: &ClassifierParams, path: &Path) -> Result<(), ModelError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&checkpoint_bytes(params))?;
    w.flush()?;
    Ok(())
}

/// The exact byte image written by [`save_checkpoint`]; also used for
/// content hashing in artifact headers.
pub fn checkpoint_bytes(params: &ClassifierParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for dim in [
        params.vocab_size as u32,
        EMBED_DIM as u32,
        HIDDEN_DIM as u32,
        params.num_classes as u32,
    ] {
        out.extend_from_slice(&dim.to_le_bytes());
    }
    for group in [
        &params.embedding,
        &params.hidden_w,
        &params.hidden_b,
        &params.output_w,
        &params.output_b,
    ] {
        for v in group.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_checkpoint(path: &Path) -> Result<ClassifierParams, ModelError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ClassifierParams, ModelError> {
    let bad = |reason: &str| ModelError::BadCheckpoint {
        reason: reason.into(),
    };
    if bytes.len() < 8 + 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing or unknown magic"));
    }
    let dim = |i: usize| {
        u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize
    };
    let (vocab_size, embed, hidden, num_classes) = (dim(0), dim(1), dim(2), dim(3));
    if embed != EMBED_DIM || hidden != HIDDEN_DIM {
        return Err(bad("architecture dimensions do not match this build"));
    }
    let mut params = ClassifierParams::zeros(vocab_size, num_classes)
        .map_err(|_| bad("class count out of range"))?;
    let expected = params.embedding.len()
        + params.hidden_w.len()
        + params.hidden_b.len()
        + params.output_w.len()
        + params.output_b.len();
    let payload = &bytes[24..];
    if payload.len() != expected * 8 {
        return Err(bad("payload length does not match shape header"));
    }
    let mut offset = 0;
    for group in [
        &mut params.embedding,
        &mut params.hidden_w,
        &mut params.hidden_b,
        &mut params.output_w,
        &mut params.output_b,
    ] {
        for v in group.iter_mut() {
            *v = f64::from_le_bytes(payload[offset..offset + 8].try_into().unwrap());
            offset += 8;
        }
    }
    Ok(params)
}
