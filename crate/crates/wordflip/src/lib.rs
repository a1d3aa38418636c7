//! Toolkit for measuring and improving a text classifier's robustness against
//! single-word substitutions.
//!
//! The crate is organized around one question: for each word in the
//! classifier's vocabulary, how many correctly classified sentences can that
//! word flip when substituted at some position? The per-word answer is the
//! word's *flip capability*; averaging over the vocabulary gives the
//! classifier's *robustness score*. Everything else builds on those two
//! quantities:
//!
//! - [`corpus`] — tokenization, vocabulary, datasets, per-class frequency
//!   tables.
//! - [`model`] — a small differentiable classifier (mean-pooled embeddings,
//!   one tanh hidden layer) with hand-derived gradients and an SGD trainer.
//! - [`oracle`] — exact brute-force computation of the flip matrix,
//!   capability vector, and robustness score.
//! - [`estimator`] — a budgeted two-phase search that ranks substitutions by
//!   a first-order score and verifies the most promising ones, producing a
//!   verified lower bound on capability (upper bound on robustness) at a
//!   fraction of the oracle's query cost.
//! - [`attack`] — single-word adversarial attacks driven by precomputed
//!   high-capability words, scored for similarity and fluency.
//! - [`defense`] — augmentation-based retraining that hardens a classifier
//!   against single-word substitutions.
//! - [`harness`] — metrics (clean accuracy, attack success rates), random
//!   baselines, histograms, and threshold curves.
//! - [`synth`] — a seeded generator for the bundled desk-scale corpus.
//! - [`pipeline`] — file-based experiment stages shared by the CLI and the
//!   acceptance suite.
//!
//! Data-parallel entry points (`par_*`) are available behind the `parallel`
//! feature (enabled by default); the plain functions are always sequential
//! and serve as the reference semantics.

pub mod attack;
pub mod corpus;
pub mod defense;
pub mod estimator;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod synth;
pub mod util;

pub use corpus::{Dataset, FrequencyTable, LabeledExample, Split, Vocabulary, WordId};
pub use model::{ClassifierParams, TrainConfig};
pub use oracle::{CapabilityVector, CorrectSubset, FlipMatrix};
