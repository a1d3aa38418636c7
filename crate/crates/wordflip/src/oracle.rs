//! Brute-force ground truth: the flip matrix over correctly classified
//! examples and candidate words, per-word flip capability, and the
//! classifier's robustness score.
//!
//! Everything here is generic over a `Fn(&[WordId]) -> usize` classify
//! function so the exact machinery can be exercised against hand-written
//! rule classifiers in tests as well as trained parameters.
//!
//! Row computation is embarrassingly parallel over examples; each worker
//! owns disjoint rows and the matrix is assembled by merge after all
//! workers complete (`par_brute_force_matrix`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Dataset, LabeledExample, WordId};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("example is not correctly classified; it does not belong to the correct subset")]
    NotCorrectlyClassified,
    #[error("malformed flip matrix file: {reason}")]
    BadFile { reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniform seeded subsampling spec for large runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSpec {
    pub max_size: usize,
    pub seed: u64,
}

/// The correctly classified subset of a dataset split, optionally
/// subsampled. Construction via [`CorrectSubset::new`] guarantees every
/// member is correctly classified, which downstream searches rely on.
#[derive(Debug, Clone)]
pub struct CorrectSubset {
    examples: Vec<LabeledExample>,
    /// Identifies how this subset was drawn (split, counts, sample seed).
    pub basis: String,
    pub num_classes: usize,
}

impl CorrectSubset {
    pub fn new<F>(classify: F, dataset: &Dataset, sample: Option<SampleSpec>) -> Self
    where
        F: Fn(&[WordId]) -> usize,
    {
        let mut indices: Vec<usize> = dataset
            .examples
            .iter()
            .enumerate()
            .filter(|(_, ex)| classify(&ex.tokens) == ex.label)
            .map(|(i, _)| i)
            .collect();
        let total_correct = indices.len();
        let basis;
        match sample {
            Some(spec) if total_correct > spec.max_size => {
                // Partial Fisher-Yates selection, then restore dataset order.
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                for i in 0..spec.max_size {
                    let j = rng.random_range(i..indices.len());
                    indices.swap(i, j);
                }
                indices.truncate(spec.max_size);
                indices.sort_unstable();
                basis = format!(
                    "{}:sample:n={}:of={}:seed={}",
                    dataset.split, spec.max_size, total_correct, spec.seed
                );
            }
            _ => {
                basis = format!("{}:all-correct:n={}", dataset.split, total_correct);
            }
        }
        let examples = indices
            .into_iter()
            .map(|i| dataset.examples[i].clone())
            .collect();
        Self {
            examples,
            basis,
            num_classes: dataset.num_classes,
        }
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Restrict to the first `n` examples; used for small sub-instances.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.examples.len());
        Self {
            examples: self.examples[..n].to_vec(),
            basis: format!("{}:head={}", self.basis, n),
            num_classes: self.num_classes,
        }
    }
}

/// The sentence set obtained by substituting `w` at each position of `x`:
/// exactly `len` sentences, replacement only, never insertion. The variant
/// where `w` already equals the token at that position is retained.
pub fn substitutions(x: &[WordId], w: WordId) -> Vec<Vec<WordId>> {
    (0..x.len())
        .map(|k| {
            let mut s = x.to_vec();
            s[k] = w;
            s
        })
        .collect()
}

/// True iff some member of `substitutions(example.tokens, w)` is
/// misclassified. Errors when the example is not correctly classified to
/// begin with.
pub fn flips<F>(classify: F, example: &LabeledExample, w: WordId) -> Result<bool, OracleError>
where
    F: Fn(&[WordId]) -> usize,
{
    if classify(&example.tokens) != example.label {
        return Err(OracleError::NotCorrectlyClassified);
    }
    let mut buf = example.tokens.clone();
    for k in 0..buf.len() {
        let orig = buf[k];
        if orig == w {
            // Identity substitution: yields the original sentence, which is
            // correctly classified by precondition.
            continue;
        }
        buf[k] = w;
        let flipped = classify(&buf) != example.label;
        buf[k] = orig;
        if flipped {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Classifier query accounting. Identity substitutions are skipped as
/// queries (they cannot flip a correctly classified example) but recorded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryCounter {
    pub queries: u64,
    pub skipped: u64,
}

impl QueryCounter {
    fn merge(&mut self, other: QueryCounter) {
        self.queries += other.queries;
        self.skipped += other.skipped;
    }
}

/// Binary matrix over (example, candidate word): entry set iff the word
/// flips the example at some position.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipMatrix {
    words: Vec<WordId>,
    n_rows: usize,
    bits: Vec<bool>, // row-major
    pub queries: QueryCounter,
}

impl FlipMatrix {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.words.len()
    }

    /// Candidate words, one per column.
    pub fn words(&self) -> &[WordId] {
        &self.words
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.words.len() + col]
    }

    /// Column mean: the fraction of examples this word flips.
    pub fn flip_capability(&self, col: usize) -> f64 {
        let w = self.words.len();
        let hits = (0..self.n_rows).filter(|&r| self.bits[r * w + col]).count();
        hits as f64 / self.n_rows as f64
    }

    /// One minus the mean of all entries: the fraction of (example, word)
    /// pairs that cannot be flipped.
    pub fn robustness(&self) -> f64 {
        let set = self.bits.iter().filter(|&&b| b).count();
        1.0 - set as f64 / (self.n_rows * self.words.len()) as f64
    }

    /// Word ids that flip a given example, ascending.
    pub fn row_flip_words(&self, row: usize) -> Vec<WordId> {
        let w = self.words.len();
        (0..w)
            .filter(|&c| self.bits[row * w + c])
            .map(|c| self.words[c])
            .collect()
    }

    pub fn capability_vector(&self, basis: &str) -> CapabilityVector {
        let values = (0..self.words.len())
            .map(|c| self.flip_capability(c))
            .collect();
        CapabilityVector {
            words: self.words.clone(),
            values,
            basis: basis.to_owned(),
            dplus_size: self.n_rows,
        }
    }
}

/// Per-word flip capability over a fixed correct subset.
#[derive(Debug, Clone, PartialEq)]
pub struct CapabilityVector {
    pub words: Vec<WordId>,
    pub values: Vec<f64>,
    /// Identifier of the subset the capability was measured on.
    pub basis: String,
    pub dplus_size: usize,
}

impl CapabilityVector {
    /// `1 - mean(capability)` over the candidate words.
    pub fn robustness(&self) -> f64 {
        let mean: f64 = self.values.iter().sum::<f64>() / self.values.len() as f64;
        1.0 - mean
    }
}

/// Write a capability table: provenance header, then one
/// `word_id <tab> word <tab> capability` row per candidate word.
pub fn save_capability(
    path: &Path,
    capability: &CapabilityVector,
    vocab: &crate::corpus::Vocabulary,
) -> Result<(), OracleError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "#wordflip-capability v1")?;
    writeln!(w, "#basis={}", capability.basis)?;
    writeln!(w, "#dplus={}", capability.dplus_size)?;
    writeln!(w, "word_id\tword\tcapability")?;
    for (id, value) in capability.words.iter().zip(&capability.values) {
        writeln!(w, "{}\t{}\t{}", id.0, vocab.word(*id), value)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_capability(path: &Path) -> Result<CapabilityVector, OracleError> {
    let bad = |reason: &str| OracleError::BadFile {
        reason: reason.into(),
    };
    let file = File::open(path)?;
    let mut words = Vec::new();
    let mut values = Vec::new();
    let mut basis = String::new();
    let mut dplus_size = 0usize;
    let mut saw_magic = false;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.is_empty() || line.starts_with("word_id\t") {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if rest == "wordflip-capability v1" {
                saw_magic = true;
            } else if let Some(v) = rest.strip_prefix("basis=") {
                basis = v.to_owned();
            } else if let Some(v) = rest.strip_prefix("dplus=") {
                dplus_size = v.parse().map_err(|_| bad("bad dplus="))?;
            }
            continue;
        }
        let mut it = line.split('\t');
        let id: u32 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad word_id field"))?;
        let _word = it.next().ok_or_else(|| bad("missing word field"))?;
        let value: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad capability field"))?;
        words.push(WordId(id));
        values.push(value);
    }
    if !saw_magic {
        return Err(bad("missing magic line"));
    }
    Ok(CapabilityVector {
        words,
        values,
        basis,
        dplus_size,
    })
}

fn flip_row<F>(classify: &F, example: &LabeledExample, words: &[WordId]) -> (Vec<bool>, QueryCounter)
where
    F: Fn(&[WordId]) -> usize,
{
    let mut buf = example.tokens.clone();
    let mut row = vec![false; words.len()];
    let mut counter = QueryCounter::default();
    for (j, &w) in words.iter().enumerate() {
        let mut flipped = false;
        for k in 0..buf.len() {
            let orig = buf[k];
            if orig == w {
                counter.skipped += 1;
                continue;
            }
            buf[k] = w;
            counter.queries += 1;
            if classify(&buf) != example.label {
                flipped = true;
            }
            buf[k] = orig;
        }
        row[j] = flipped;
    }
    (row, counter)
}

fn assemble(rows: Vec<(Vec<bool>, QueryCounter)>, words: &[WordId]) -> FlipMatrix {
    let n_rows = rows.len();
    let mut bits = Vec::with_capacity(n_rows * words.len());
    let mut queries = QueryCounter::default();
    for (row, counter) in rows {
        bits.extend_from_slice(&row);
        queries.merge(counter);
    }
    FlipMatrix {
        words: words.to_vec(),
        n_rows,
        bits,
        queries,
    }
}

/// Exact flip matrix by full enumeration: every candidate word at every
/// position of every example, identity substitutions excepted. Total
/// queries are therefore `sum(len_i) * |words|` minus the recorded skips.
pub fn brute_force_matrix<F>(classify: F, dplus: &CorrectSubset, words: &[WordId]) -> FlipMatrix
where
    F: Fn(&[WordId]) -> usize,
{
    let rows = dplus
        .examples()
        .iter()
        .map(|ex| flip_row(&classify, ex, words))
        .collect();
    assemble(rows, words)
}

/// Parallel twin of [`brute_force_matrix`]; identical output, rows computed
/// across threads.
#[cfg(feature = "parallel")]
pub fn par_brute_force_matrix<F>(classify: F, dplus: &CorrectSubset, words: &[WordId]) -> FlipMatrix
where
    F: Fn(&[WordId]) -> usize + Sync,
{
    let rows = dplus
        .examples()
        .par_iter()
        .map(|ex| flip_row(&classify, ex, words))
        .collect();
    assemble(rows, words)
}

/// Extra provenance recorded in a serialized flip matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlipMatrixHeader {
    pub dataset_sha256: String,
    pub checkpoint_sha256: String,
    pub basis: String,
}

/// Serialize as a sparse list of set entries under a provenance header.
pub fn save_flip_matrix(
    path: &Path,
    matrix: &FlipMatrix,
    header: &FlipMatrixHeader,
) -> Result<(), OracleError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "#wordflip-flipmatrix v1")?;
    writeln!(w, "#rows={} cols={}", matrix.n_rows(), matrix.n_cols())?;
    writeln!(w, "#dataset_sha256={}", header.dataset_sha256)?;
    writeln!(w, "#checkpoint_sha256={}", header.checkpoint_sha256)?;
    writeln!(w, "#basis={}", header.basis)?;
    writeln!(
        w,
        "#queries={} skipped={}",
        matrix.queries.queries, matrix.queries.skipped
    )?;
    let ids: Vec<String> = matrix.words.iter().map(|id| id.0.to_string()).collect();
    writeln!(w, "#cols={}", ids.join(","))?;
    for r in 0..matrix.n_rows() {
        for c in 0..matrix.n_cols() {
            if matrix.get(r, c) {
                writeln!(w, "{r} {c}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_flip_matrix(path: &Path) -> Result<(FlipMatrix, FlipMatrixHeader), OracleError> {
    let bad = |reason: &str| OracleError::BadFile {
        reason: reason.into(),
    };
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut n_rows = None;
    let mut words: Option<Vec<WordId>> = None;
    let mut header = FlipMatrixHeader::default();
    let mut queries = QueryCounter::default();
    let mut entries: Vec<(usize, usize)> = Vec::new();
    let mut saw_magic = false;

    for line in reader.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if rest == "wordflip-flipmatrix v1" {
                saw_magic = true;
            } else if let Some(v) = rest.strip_prefix("dataset_sha256=") {
                header.dataset_sha256 = v.to_owned();
            } else if let Some(v) = rest.strip_prefix("checkpoint_sha256=") {
                header.checkpoint_sha256 = v.to_owned();
            } else if let Some(v) = rest.strip_prefix("basis=") {
                header.basis = v.to_owned();
            } else if let Some(v) = rest.strip_prefix("cols=") {
                let parsed: Result<Vec<WordId>, _> =
                    v.split(',').map(|s| s.parse::<u32>().map(WordId)).collect();
                words = Some(parsed.map_err(|_| bad("bad cols= ids"))?);
            } else if rest.starts_with("rows=") || rest.starts_with("queries=") {
                for part in rest.split_whitespace() {
                    if let Some(v) = part.strip_prefix("rows=") {
                        n_rows = Some(v.parse().map_err(|_| bad("bad rows="))?);
                    } else if let Some(v) = part.strip_prefix("queries=") {
                        queries.queries = v.parse().map_err(|_| bad("bad queries="))?;
                    } else if let Some(v) = part.strip_prefix("skipped=") {
                        queries.skipped = v.parse().map_err(|_| bad("bad skipped="))?;
                    }
                }
            }
            continue;
        }
        let mut it = line.split_whitespace();
        let r: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad entry row"))?;
        let c: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad entry col"))?;
        entries.push((r, c));
    }
    if !saw_magic {
        return Err(bad("missing magic line"));
    }
    let n_rows = n_rows.ok_or_else(|| bad("missing rows="))?;
    let words = words.ok_or_else(|| bad("missing cols="))?;
    let mut bits = vec![false; n_rows * words.len()];
    for (r, c) in entries {
        if r >= n_rows || c >= words.len() {
            return Err(bad("entry out of bounds"));
        }
        bits[r * words.len() + c] = true;
    }
    Ok((
        FlipMatrix {
            words,
            n_rows,
            bits,
            queries,
        },
        header,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use proptest::prelude::*;

    fn ids(raw: &[u32]) -> Vec<WordId> {
        raw.iter().map(|&i| WordId(i)).collect()
    }

    // Tiny vocabulary by convention: 0 = mask, 1 = unk, 2 = "good",
    // 3 = "dull", 4 = "plot", 5 = "bad", 6 = "fine".
    const GOOD: WordId = WordId(2);
    const DULL: WordId = WordId(3);
    const PLOT: WordId = WordId(4);
    const BAD: WordId = WordId(5);
    const FINE: WordId = WordId(6);

    /// Predict 1 iff the sentence contains "good".
    fn keyword_rule(tokens: &[WordId]) -> usize {
        usize::from(tokens.contains(&GOOD))
    }

    fn rule_dataset() -> Dataset {
        Dataset::new(
            vec![
                LabeledExample {
                    tokens: vec![DULL, PLOT],
                    label: 0,
                },
                LabeledExample {
                    tokens: vec![GOOD, PLOT],
                    label: 1,
                },
            ],
            2,
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn substitutions_definition() {
        let x = ids(&[10, 11]);
        let s = substitutions(&x, WordId(12));
        assert_eq!(s, vec![ids(&[12, 11]), ids(&[10, 12])]);
        // Identity variant is retained.
        let s = substitutions(&x, WordId(10));
        assert!(s.contains(&x));
        assert_eq!(s.len(), x.len());
    }

    #[test]
    fn flips_rule_classifier_cases() {
        let ds = rule_dataset();
        // "good" flips the class-0 example.
        assert!(flips(keyword_rule, &ds.examples[0], GOOD).unwrap());
        // "fine" flips the class-1 example by replacing its keyword.
        assert!(flips(keyword_rule, &ds.examples[1], FINE).unwrap());
        // "bad" cannot flip the class-0 example.
        assert!(!flips(keyword_rule, &ds.examples[0], BAD).unwrap());
    }

    #[test]
    fn flips_requires_correct_classification() {
        let wrong = LabeledExample {
            tokens: vec![DULL, PLOT],
            label: 1,
        };
        assert!(matches!(
            flips(keyword_rule, &wrong, GOOD),
            Err(OracleError::NotCorrectlyClassified)
        ));
    }

    #[test]
    fn brute_force_hand_enumeration() {
        let ds = rule_dataset();
        let dplus = CorrectSubset::new(keyword_rule, &ds, None);
        assert_eq!(dplus.len(), 2);
        let words = [GOOD, BAD, FINE];
        let m = brute_force_matrix(keyword_rule, &dplus, &words);
        // Row 0 (dull plot, label 0): only "good" flips.
        // Row 1 (good plot, label 1): "bad" and "fine" flip.
        assert!(m.get(0, 0) && !m.get(0, 1) && !m.get(0, 2));
        assert!(!m.get(1, 0) && m.get(1, 1) && m.get(1, 2));
        // Capability of "good" = (# class-0 examples) / |subset|.
        assert_eq!(m.flip_capability(0), 0.5);
        assert_eq!(m.robustness(), 0.5);
        // 2 examples x 2 positions x 3 words, minus the identity skip.
        assert_eq!(m.queries.queries, 11);
        assert_eq!(m.queries.skipped, 1);
    }

    #[test]
    fn constant_classifier_yields_zero_matrix() {
        let ds = rule_dataset();
        let constant = |_: &[WordId]| 0usize;
        let dplus = CorrectSubset::new(constant, &ds, None);
        assert_eq!(dplus.len(), 1); // only the class-0 example is "correct"
        let words = [GOOD, BAD, FINE];
        let m = brute_force_matrix(constant, &dplus, &words);
        assert!((0..m.n_rows()).all(|r| (0..m.n_cols()).all(|c| !m.get(r, c))));
        assert_eq!(m.robustness(), 1.0);
    }

    #[test]
    fn query_counter_full_accounting_without_skips() {
        let ds = rule_dataset();
        let dplus = CorrectSubset::new(keyword_rule, &ds, None);
        // None of these candidate words occurs in the sentences.
        let words = [BAD, FINE];
        let m = brute_force_matrix(keyword_rule, &dplus, &words);
        let expected: u64 = dplus
            .examples()
            .iter()
            .map(|ex| (ex.tokens.len() * words.len()) as u64)
            .sum();
        assert_eq!(m.queries.queries, expected);
        assert_eq!(m.queries.skipped, 0);
    }

    #[test]
    fn capability_extremes() {
        let all = FlipMatrix {
            words: ids(&[2, 3]),
            n_rows: 3,
            bits: vec![true; 6],
            queries: QueryCounter::default(),
        };
        assert_eq!(all.flip_capability(0), 1.0);
        assert_eq!(all.robustness(), 0.0);
        let none = FlipMatrix {
            words: ids(&[2, 3]),
            n_rows: 3,
            bits: vec![false; 6],
            queries: QueryCounter::default(),
        };
        assert_eq!(none.flip_capability(1), 0.0);
        assert_eq!(none.robustness(), 1.0);
    }

    #[test]
    fn matrix_agrees_with_flips_spot_checks() {
        let ds = rule_dataset();
        let dplus = CorrectSubset::new(keyword_rule, &ds, None);
        let words = [GOOD, BAD, FINE, DULL, PLOT];
        let m = brute_force_matrix(keyword_rule, &dplus, &words);
        for (r, ex) in dplus.examples().iter().enumerate() {
            for (c, &w) in words.iter().enumerate() {
                assert_eq!(m.get(r, c), flips(keyword_rule, ex, w).unwrap());
            }
        }
    }

    #[test]
    fn subsampling_is_seeded_and_order_preserving() {
        let examples: Vec<LabeledExample> = (0..50)
            .map(|i| LabeledExample {
                tokens: vec![WordId(2 + (i % 5) as u32)],
                label: 0,
            })
            .collect();
        let ds = Dataset::new(examples, 2, Split::Train).unwrap();
        let constant = |_: &[WordId]| 0usize;
        let spec = SampleSpec {
            max_size: 10,
            seed: 3,
        };
        let a = CorrectSubset::new(constant, &ds, Some(spec));
        let b = CorrectSubset::new(constant, &ds, Some(spec));
        assert_eq!(a.examples(), b.examples());
        assert_eq!(a.len(), 10);
        assert!(a.basis.contains("seed=3"));
        // A sample cap above the population size keeps everything.
        let c = CorrectSubset::new(constant, &ds, Some(SampleSpec { max_size: 50, seed: 3 }));
        assert_eq!(c.len(), 50);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential() {
        let ds = rule_dataset();
        let dplus = CorrectSubset::new(keyword_rule, &ds, None);
        let words = [GOOD, BAD, FINE, DULL];
        let seq = brute_force_matrix(keyword_rule, &dplus, &words);
        let par = par_brute_force_matrix(keyword_rule, &dplus, &words);
        assert_eq!(seq, par);
    }

    #[test]
    fn flip_matrix_file_round_trip() {
        let ds = rule_dataset();
        let dplus = CorrectSubset::new(keyword_rule, &ds, None);
        let words = [GOOD, BAD, FINE];
        let m = brute_force_matrix(keyword_rule, &dplus, &words);
        let header = FlipMatrixHeader {
            dataset_sha256: "d".repeat(64),
            checkpoint_sha256: "c".repeat(64),
            basis: dplus.basis.clone(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flips.txt");
        save_flip_matrix(&path, &m, &header).unwrap();
        let (loaded, loaded_header) = load_flip_matrix(&path).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(loaded_header, header);
    }

    proptest! {
        /// Robustness equals one minus the mean capability for any matrix.
        #[test]
        fn robustness_capability_identity(
            bits in proptest::collection::vec(any::<bool>(), 1..200),
            cols in 1usize..10,
        ) {
            let n_rows = bits.len() / cols;
            prop_assume!(n_rows >= 1);
            let bits = bits[..n_rows * cols].to_vec();
            let m = FlipMatrix {
                words: (0..cols as u32).map(|i| WordId(i + 2)).collect(),
                n_rows,
                bits,
                queries: QueryCounter::default(),
            };
            let mean_cap: f64 =
                (0..cols).map(|c| m.flip_capability(c)).sum::<f64>() / cols as f64;
            prop_assert!((m.robustness() - (1.0 - mean_cap)).abs() < 1e-12);

            let cap = m.capability_vector("test");
            prop_assert!((cap.robustness() - m.robustness()).abs() < 1e-12);
        }

        /// Column permutation invariance of brute force.
        #[test]
        fn brute_force_column_permutation(perm_seed in 0u64..32) {
            let ds = rule_dataset();
            let dplus = CorrectSubset::new(keyword_rule, &ds, None);
            let words = [GOOD, BAD, FINE, DULL, PLOT];
            let m = brute_force_matrix(keyword_rule, &dplus, &words);
            let mut permuted: Vec<WordId> = words.to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
            for i in (1..permuted.len()).rev() {
                let j = rng.random_range(0..=i);
                permuted.swap(i, j);
            }
            let mp = brute_force_matrix(keyword_rule, &dplus, &permuted);
            for (c, w) in permuted.iter().enumerate() {
                let orig_col = words.iter().position(|x| x == w).unwrap();
                for r in 0..m.n_rows() {
                    prop_assert_eq!(mp.get(r, c), m.get(r, orig_col));
                }
            }
        }
    }
}
