//! Metrics, random attack baselines, capability histograms, and threshold
//! curves, plus the line-oriented record format attack runs are stored in.
//!
//! Every aggregate here is recomputable from retained per-example records:
//! summaries are derived from record lists, never accumulated on the side.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

use crate::attack::{select_best, AttackConfig, AttackResult, AttackStatus, BigramLm, FlipCandidate};
use crate::corpus::{Dataset, LabeledExample, WordId};
use crate::model::ClassifierParams;
use crate::oracle::{CapabilityVector, CorrectSubset};
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("malformed attack record file: {reason}")]
    BadFile { reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fraction of examples the classifier labels correctly.
pub fn clean_accuracy<F>(classify: F, dataset: &Dataset) -> Result<f64, HarnessError>
where
    F: Fn(&[WordId]) -> usize,
{
    if dataset.is_empty() {
        return Err(HarnessError::EmptyTestSet);
    }
    let correct = dataset
        .examples
        .iter()
        .filter(|ex| classify(&ex.tokens) == ex.label)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// One attacked example, in the shape shared by the main attack and the
/// random baselines. `changed_positions` is non-empty only on success.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub example_index: usize,
    pub status: AttackStatus,
    pub changed_positions: Vec<usize>,
    pub original_words: Vec<WordId>,
    pub replacement_words: Vec<WordId>,
    pub similarity: f64,
    pub ppl_ratio: f64,
    pub joint_score: Option<f64>,
    pub queries: u64,
    pub flips_found: usize,
    pub max_similarity: f64,
    pub min_ppl_ratio: f64,
}

impl AttackRecord {
    pub fn from_result(example_index: usize, result: &AttackResult) -> Self {
        Self {
            example_index,
            status: result.status,
            changed_positions: result.changed_position.into_iter().collect(),
            original_words: result.original_word.into_iter().collect(),
            replacement_words: result.replacement_word.into_iter().collect(),
            similarity: result.similarity,
            ppl_ratio: result.ppl_ratio,
            joint_score: result.joint_score,
            queries: result.queries,
            flips_found: result.flips_found,
            max_similarity: result.max_similarity,
            min_ppl_ratio: result.min_ppl_ratio,
        }
    }
}

/// Aggregates derived from a record list. The denominator is the number of
/// correctly classified test examples, i.e. the attacked population.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttackSummary {
    pub denominator: usize,
    pub successes: usize,
    pub single_word_successes: usize,
    pub attack_success_rate: f64,
    pub single_word_success_rate: f64,
    pub mean_queries: f64,
}

/// Summarize a run. The success rate counts `Success` records; the
/// single-word rate counts only those whose emitted adversarial sentence
/// changed exactly one word, so it never exceeds the success rate and the
/// two coincide for the single-word attack.
pub fn summarize(records: &[AttackRecord], denominator: usize) -> AttackSummary {
    assert!(denominator > 0, "denominator must be positive");
    let successes = records
        .iter()
        .filter(|r| r.status == AttackStatus::Success)
        .count();
    let single_word_successes = records
        .iter()
        .filter(|r| r.status == AttackStatus::Success && r.changed_positions.len() == 1)
        .count();
    let total_queries: u64 = records.iter().map(|r| r.queries).sum();
    AttackSummary {
        denominator,
        successes,
        single_word_successes,
        attack_success_rate: successes as f64 / denominator as f64,
        single_word_success_rate: single_word_successes as f64 / denominator as f64,
        mean_queries: if records.is_empty() {
            0.0
        } else {
            total_queries as f64 / records.len() as f64
        },
    }
}

fn baseline_record(
    params: &ClassifierParams,
    lm: &BigramLm,
    example: &LabeledExample,
    index: usize,
    flips: Vec<FlipCandidate>,
    queries: u64,
    config: &AttackConfig,
) -> AttackRecord {
    let selection = select_best(params, lm, &example.tokens, &flips, config);
    let mut record = AttackRecord {
        example_index: index,
        status: selection.status,
        changed_positions: Vec::new(),
        original_words: Vec::new(),
        replacement_words: Vec::new(),
        similarity: 0.0,
        ppl_ratio: 0.0,
        joint_score: None,
        queries,
        flips_found: flips.len(),
        max_similarity: selection.max_similarity,
        min_ppl_ratio: selection.min_ppl_ratio,
    };
    if let Some((flip, sim, ratio, joint)) = selection.best {
        record.similarity = sim;
        record.ppl_ratio = ratio;
        record.joint_score = Some(joint);
        if record.status == AttackStatus::Success {
            record.changed_positions = flip.changes.iter().map(|&(p, _)| p).collect();
            record.original_words = flip
                .changes
                .iter()
                .map(|&(p, _)| example.tokens[p])
                .collect();
            record.replacement_words = flip.changes.iter().map(|&(_, w)| w).collect();
        }
    }
    record
}

fn random_word_not_equal(usable: &[WordId], current: WordId, rng: &mut ChaCha8Rng) -> WordId {
    let mut w = usable[rng.random_range(0..usable.len())];
    while w == current {
        w = usable[rng.random_range(0..usable.len())];
    }
    w
}

fn baseline_one(
    params: &ClassifierParams,
    lm: &BigramLm,
    example: &LabeledExample,
    index: usize,
    usable: &[WordId],
    budget: u64,
    max_changes: usize,
    config: &AttackConfig,
    seed: u64,
) -> AttackRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64));
    let len = example.tokens.len();
    let mut buf = example.tokens.clone();
    let mut flips = Vec::new();
    let mut positions: Vec<usize> = (0..len).collect();
    for _ in 0..budget {
        let n_changes = if max_changes <= 1 {
            1
        } else {
            rng.random_range(1..=max_changes.min(len))
        };
        // Distinct positions via partial shuffle.
        for i in 0..n_changes {
            let j = rng.random_range(i..positions.len());
            positions.swap(i, j);
        }
        let mut changes = Vec::with_capacity(n_changes);
        for &pos in &positions[..n_changes] {
            let w = random_word_not_equal(usable, example.tokens[pos], &mut rng);
            changes.push((pos, w));
        }
        changes.sort_unstable_by_key(|&(p, _)| p);
        for &(p, w) in &changes {
            buf[p] = w;
        }
        let pred = params.predict(&buf).expect("substituted sentence is non-empty");
        for &(p, _) in &changes {
            buf[p] = example.tokens[p];
        }
        if pred != example.label {
            flips.push(FlipCandidate { changes });
        }
    }
    baseline_record(params, lm, example, index, flips, budget, config)
}

/// Random single-word baseline: `budget` uniformly random single-word
/// substitutions per example, success judged exactly like the main attack.
pub fn random_single_word_baseline(
    params: &ClassifierParams,
    subset: &CorrectSubset,
    lm: &BigramLm,
    usable: &[WordId],
    budget: u64,
    config: &AttackConfig,
    seed: u64,
) -> Vec<AttackRecord> {
    run_baseline(params, subset, lm, usable, budget, 1, config, seed)
}

/// Random multi-word baseline: each attempt perturbs up to `max_changes`
/// distinct positions.
pub fn random_multi_word_baseline(
    params: &ClassifierParams,
    subset: &CorrectSubset,
    lm: &BigramLm,
    usable: &[WordId],
    budget: u64,
    max_changes: usize,
    config: &AttackConfig,
    seed: u64,
) -> Vec<AttackRecord> {
    run_baseline(params, subset, lm, usable, budget, max_changes, config, seed)
}

#[allow(clippy::too_many_arguments)]
fn run_baseline(
    params: &ClassifierParams,
    subset: &CorrectSubset,
    lm: &BigramLm,
    usable: &[WordId],
    budget: u64,
    max_changes: usize,
    config: &AttackConfig,
    seed: u64,
) -> Vec<AttackRecord> {
    let work = |(i, ex): (usize, &LabeledExample)| {
        baseline_one(params, lm, ex, i, usable, budget, max_changes, config, seed)
    };
    #[cfg(feature = "parallel")]
    {
        subset.examples().par_iter().enumerate().map(work).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        subset.examples().iter().enumerate().map(work).collect()
    }
}

/// Equal-width histogram of capability values over [0, 1] with
/// nearest-rank percentiles.
#[derive(Debug, Clone, PartialEq)]
pub struct CapabilityHistogram {
    /// `bins + 1` edges from 0 to 1.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// (percentile, value) pairs for 5, 25, 50, 75, 90, 95, 99.
    pub percentiles: Vec<(u8, f64)>,
}

/// Nearest-rank percentile of an ascending-sorted slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = (q / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn capability_histogram(capability: &CapabilityVector, bins: usize) -> CapabilityHistogram {
    assert!(bins >= 1);
    let mut counts = vec![0u64; bins];
    for &v in &capability.values {
        let bin = ((v * bins as f64) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut sorted = capability.values.clone();
    sorted.sort_by(f64::total_cmp);
    let percentiles = [5u8, 25, 50, 75, 90, 95, 99]
        .iter()
        .map(|&q| (q, percentile(&sorted, q as f64)))
        .collect();
    CapabilityHistogram {
        edges,
        counts,
        percentiles,
    }
}

/// Success rate as a function of the similarity threshold, recomputed from
/// per-example records: a record counts at threshold `t` iff it found any
/// flip whose similarity exceeds `t`. Non-increasing in `t`.
pub fn asr_vs_similarity_threshold(
    records: &[AttackRecord],
    thresholds: &[f64],
    denominator: usize,
) -> Vec<(f64, f64)> {
    thresholds
        .iter()
        .map(|&t| {
            let n = records
                .iter()
                .filter(|r| r.flips_found > 0 && r.max_similarity > t)
                .count();
            (t, n as f64 / denominator as f64)
        })
        .collect()
}

/// Success rate as a function of the perplexity-ratio ceiling: a record
/// counts at ceiling `t` iff it found any flip whose perplexity ratio is at
/// most `t`. Non-decreasing in `t`.
pub fn asr_vs_ppl_threshold(
    records: &[AttackRecord],
    thresholds: &[f64],
    denominator: usize,
) -> Vec<(f64, f64)> {
    thresholds
        .iter()
        .map(|&t| {
            let n = records
                .iter()
                .filter(|r| r.flips_found > 0 && r.min_ppl_ratio <= t)
                .count();
            (t, n as f64 / denominator as f64)
        })
        .collect()
}

/// One point of the robustness-versus-time trade-off table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub variant: String,
    pub patience: usize,
    pub robustness_estimate: f64,
    pub mean_example_micros: f64,
    pub total_queries: u64,
}

fn fmt_ids(ids: &[WordId]) -> String {
    if ids.is_empty() {
        return "-".into();
    }
    ids.iter()
        .map(|w| w.0.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_usizes(v: &[usize]) -> String {
    if v.is_empty() {
        return "-".into();
    }
    v.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_ids(s: &str) -> Result<Vec<WordId>, HarnessError> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.parse::<u32>().map(WordId).map_err(|_| HarnessError::BadFile {
                reason: format!("bad word id `{p}`"),
            })
        })
        .collect()
}

fn parse_usizes(s: &str) -> Result<Vec<usize>, HarnessError> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.parse::<usize>().map_err(|_| HarnessError::BadFile {
                reason: format!("bad position `{p}`"),
            })
        })
        .collect()
}

/// Write an attack run: one record per line plus a trailing summary line.
pub fn write_attack_records(
    path: &Path,
    records: &[AttackRecord],
    summary: &AttackSummary,
) -> Result<(), HarnessError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "#wordflip-attack v1")?;
    writeln!(
        w,
        "example\tstatus\tpositions\toriginal\treplacement\tsimilarity\tppl_ratio\tjoint\tqueries\tflips\tmax_similarity\tmin_ppl_ratio"
    )?;
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.example_index,
            r.status,
            fmt_usizes(&r.changed_positions),
            fmt_ids(&r.original_words),
            fmt_ids(&r.replacement_words),
            r.similarity,
            r.ppl_ratio,
            r.joint_score.map_or("-".into(), |j| j.to_string()),
            r.queries,
            r.flips_found,
            r.max_similarity,
            r.min_ppl_ratio,
        )?;
    }
    writeln!(
        w,
        "#summary denominator={} successes={} single_word_successes={} asr={} asr1={} mean_queries={}",
        summary.denominator,
        summary.successes,
        summary.single_word_successes,
        summary.attack_success_rate,
        summary.single_word_success_rate,
        summary.mean_queries,
    )?;
    w.flush()?;
    Ok(())
}

/// Read a file written by [`write_attack_records`].
pub fn read_attack_records(path: &Path) -> Result<(Vec<AttackRecord>, AttackSummary), HarnessError> {
    let bad = |reason: &str| HarnessError::BadFile {
        reason: reason.into(),
    };
    let file = File::open(path)?;
    let mut records = Vec::new();
    let mut summary = None;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.is_empty() || line.starts_with("example\t") || line == "#wordflip-attack v1" {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#summary ") {
            let mut s = AttackSummary {
                denominator: 0,
                successes: 0,
                single_word_successes: 0,
                attack_success_rate: 0.0,
                single_word_success_rate: 0.0,
                mean_queries: 0.0,
            };
            for part in rest.split_whitespace() {
                let (key, value) = part.split_once('=').ok_or_else(|| bad("bad summary field"))?;
                match key {
                    "denominator" => s.denominator = value.parse().map_err(|_| bad(key))?,
                    "successes" => s.successes = value.parse().map_err(|_| bad(key))?,
                    "single_word_successes" => {
                        s.single_word_successes = value.parse().map_err(|_| bad(key))?
                    }
                    "asr" => s.attack_success_rate = value.parse().map_err(|_| bad(key))?,
                    "asr1" => s.single_word_success_rate = value.parse().map_err(|_| bad(key))?,
                    "mean_queries" => s.mean_queries = value.parse().map_err(|_| bad(key))?,
                    _ => {}
                }
            }
            summary = Some(s);
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 12 {
            return Err(bad(&format!("wrong field count in `{line}`")));
        }
        records.push(AttackRecord {
            example_index: fields[0].parse().map_err(|_| bad("example index"))?,
            status: fields[1].parse().map_err(|_| bad("status"))?,
            changed_positions: parse_usizes(fields[2])?,
            original_words: parse_ids(fields[3])?,
            replacement_words: parse_ids(fields[4])?,
            similarity: fields[5].parse().map_err(|_| bad("similarity"))?,
            ppl_ratio: fields[6].parse().map_err(|_| bad("ppl_ratio"))?,
            joint_score: if fields[7] == "-" {
                None
            } else {
                Some(fields[7].parse().map_err(|_| bad("joint"))?)
            },
            queries: fields[8].parse().map_err(|_| bad("queries"))?,
            flips_found: fields[9].parse().map_err(|_| bad("flips"))?,
            max_similarity: fields[10].parse().map_err(|_| bad("max_similarity"))?,
            min_ppl_ratio: fields[11].parse().map_err(|_| bad("min_ppl_ratio"))?,
        });
    }
    let summary = summary.ok_or_else(|| bad("missing summary line"))?;
    Ok((records, summary))
}
