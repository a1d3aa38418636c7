//! Dataset ingestion, tokenization, vocabulary construction, and per-class
//! word frequency tables.
//!
//! All structures here are immutable after construction and safe to share
//! across worker threads.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::sha256_hex;

/// Sentences longer than this are truncated at ingestion.
pub const MAX_SENTENCE_LEN: usize = 64;

/// String form of the reserved mask token. Angle brackets cannot survive
/// tokenization, so no corpus word can collide with it.
pub const MASK_TOKEN: &str = "<mask>";
/// String form of the reserved unknown-word token.
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("record {record}: {reason}")]
    BadRecord { record: usize, reason: String },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("malformed {kind} file: {reason}")]
    BadFile { kind: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Index of a word in a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WordId(pub u32);

impl WordId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Lowercase and split on every non-alphanumeric character.
///
/// Deterministic for a fixed input and idempotent on its own joined output.
/// An empty or punctuation-only string yields an empty list; callers that
/// need a classifiable sentence must reject that themselves.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// The ordered word set shared by the classifier, the oracle, and every
/// search built on top of them.
///
/// Layout: index 0 is the mask token, index 1 the unknown token, and corpus
/// words follow in descending training frequency (ties broken
/// lexicographically). The two reserved entries are excluded from capability
/// averaging and from substitution candidates.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, WordId>,
}

impl Vocabulary {
    pub const MASK: WordId = WordId(0);
    pub const UNK: WordId = WordId(1);
    /// Number of reserved entries at the front of the table.
    pub const RESERVED: usize = 2;

    /// Build a vocabulary from raw training texts, keeping every word that
    /// occurs at least `min_freq` times.
    pub fn build<'a, I>(texts: I, min_freq: u64) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        assert!(min_freq >= 1, "min_freq must be at least 1");
        let mut counts: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut kept: Vec<(String, u64)> =
            counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut words = Vec::with_capacity(kept.len() + Self::RESERVED);
        words.push(MASK_TOKEN.to_owned());
        words.push(UNK_TOKEN.to_owned());
        words.extend(kept.into_iter().map(|(w, _)| w));
        Ok(Self::from_words(words))
    }

    fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), WordId(i as u32)))
            .collect();
        Self { words, index }
    }

    /// Total number of entries, reserved tokens included.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Number of real (non-reserved) words.
    pub fn usable_len(&self) -> usize {
        self.words.len() - Self::RESERVED
    }

    /// Ids of all real words, ascending. This is the column set for flip
    /// matrices and the candidate set for substitutions.
    pub fn usable_words(&self) -> Vec<WordId> {
        (Self::RESERVED..self.words.len())
            .map(|i| WordId(i as u32))
            .collect()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id.index()]
    }

    pub fn lookup(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    /// Map a token to its id, or to the unknown id if out of vocabulary.
    pub fn id_or_unk(&self, word: &str) -> WordId {
        self.lookup(word).unwrap_or(Self::UNK)
    }

    /// Tokenize, map to ids (unknowns included), and truncate.
    pub fn encode(&self, text: &str) -> Vec<WordId> {
        let mut ids: Vec<WordId> = tokenize(text).iter().map(|t| self.id_or_unk(t)).collect();
        ids.truncate(MAX_SENTENCE_LEN);
        ids
    }
}

/// A tokenized sentence and its class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    /// Word ids; non-empty, at most [`MAX_SENTENCE_LEN`] long.
    pub tokens: Vec<WordId>,
    /// Class index in `[0, num_classes)`.
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// An encoded dataset split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    /// Validate invariants: at least one example, at least two classes,
    /// labels in range, and every sentence non-empty and within the length
    /// cap.
    pub fn new(
        examples: Vec<LabeledExample>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self, CorpusError> {
        if examples.is_empty() {
            return Err(CorpusError::EmptyDataset);
        }
        if num_classes < 2 {
            return Err(CorpusError::TooFewClasses(num_classes));
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.tokens.is_empty() {
                return Err(CorpusError::BadRecord {
                    record: i,
                    reason: "no tokens".into(),
                });
            }
            if ex.tokens.len() > MAX_SENTENCE_LEN {
                return Err(CorpusError::BadRecord {
                    record: i,
                    reason: format!("sentence longer than {MAX_SENTENCE_LEN}"),
                });
            }
            if ex.label >= num_classes {
                return Err(CorpusError::BadRecord {
                    record: i,
                    reason: format!("label {} out of range", ex.label),
                });
            }
        }
        Ok(Self {
            examples,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Stable content fingerprint used in artifact headers.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(self.num_classes as u64).to_le_bytes());
        for ex in &self.examples {
            bytes.extend_from_slice(&(ex.label as u64).to_le_bytes());
            bytes.extend_from_slice(&(ex.tokens.len() as u64).to_le_bytes());
            for t in &ex.tokens {
                bytes.extend_from_slice(&t.0.to_le_bytes());
            }
        }
        sha256_hex(&bytes)
    }
}

/// One line of a raw dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub text: String,
    pub label: usize,
}

/// Read a tab-delimited dataset file with a `text`/`label` header row.
pub fn read_records(path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let text_col = headers.iter().position(|h| h == "text");
    let label_col = headers.iter().position(|h| h == "label");
    let (text_col, label_col) = match (text_col, label_col) {
        (Some(t), Some(l)) => (t, l),
        _ => {
            return Err(CorpusError::BadFile {
                kind: "dataset",
                reason: "header must contain `text` and `label` columns".into(),
            })
        }
    };
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let text = row.get(text_col).unwrap_or("").to_owned();
        let label: usize = row
            .get(label_col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| CorpusError::BadRecord {
                record: i,
                reason: "label is not a non-negative integer".into(),
            })?;
        records.push(RawRecord { text, label });
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    Ok(records)
}

/// Write records in the format accepted by [`read_records`].
pub fn write_records(path: &Path, records: &[RawRecord]) -> Result<(), CorpusError> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(path)?;
    writer.write_record(["text", "label"])?;
    for r in records {
        writer.write_record([r.text.as_str(), &r.label.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Encode raw records against a vocabulary.
///
/// `num_classes` defaults to `max label + 1` when absent. Records that
/// tokenize to nothing are rejected: they cannot be classified.
pub fn encode_dataset(
    records: &[RawRecord],
    vocab: &Vocabulary,
    num_classes: Option<usize>,
    split: Split,
) -> Result<Dataset, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let inferred = records.iter().map(|r| r.label).max().unwrap_or(0) + 1;
    let num_classes = num_classes.unwrap_or(inferred);
    let mut examples = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let tokens = vocab.encode(&r.text);
        if tokens.is_empty() {
            return Err(CorpusError::BadRecord {
                record: i,
                reason: "text tokenizes to nothing".into(),
            });
        }
        examples.push(LabeledExample {
            tokens,
            label: r.label,
        });
    }
    Dataset::new(examples, num_classes, split)
}

/// Exact per-(word, class) occurrence counts over a training split.
#[derive(Debug, Clone)]
pub struct FrequencyTable {
    counts: Vec<u64>, // word-major: counts[word * num_classes + class]
    num_classes: usize,
    total: u64,
    /// Additive constant applied to counts before taking logs.
    pub smoothing: f64,
}

impl FrequencyTable {
    /// Count every token occurrence in the dataset. Default smoothing is 1
    /// so zero-count words stay usable in log space.
    pub fn from_dataset(dataset: &Dataset, vocab_size: usize) -> Self {
        let num_classes = dataset.num_classes;
        let mut counts = vec![0u64; vocab_size * num_classes];
        let mut total = 0u64;
        for ex in &dataset.examples {
            for t in &ex.tokens {
                counts[t.index() * num_classes + ex.label] += 1;
                total += 1;
            }
        }
        Self {
            counts,
            num_classes,
            total,
            smoothing: 1.0,
        }
    }

    pub fn with_smoothing(mut self, smoothing: f64) -> Self {
        self.smoothing = smoothing;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len() / self.num_classes
    }

    /// Total token occurrences counted; equals the sum over all cells.
    pub fn total_tokens(&self) -> u64 {
        self.total
    }

    pub fn count(&self, word: WordId, class: usize) -> u64 {
        self.counts[word.index() * self.num_classes + class]
    }

    /// `ln(count + smoothing)`.
    pub fn log_freq(&self, word: WordId, class: usize) -> f64 {
        (self.count(word, class) as f64 + self.smoothing).ln()
    }
}

/// Words that occur much more frequently in some other class than in `class`:
/// those whose best cross-class log-frequency gap exceeds 1.
///
/// With smoothing 0, words absent from every class produce NaN gaps and are
/// excluded, which is the intended degenerate behavior. Errors when the
/// table has fewer than two classes (no "other" class exists).
pub fn special_words(freq: &FrequencyTable, class: usize) -> Result<Vec<WordId>, CorpusError> {
    if freq.num_classes() < 2 {
        return Err(CorpusError::TooFewClasses(freq.num_classes()));
    }
    assert!(class < freq.num_classes(), "class index out of range");
    let mut out = Vec::new();
    for w in 0..freq.vocab_size() {
        let word = WordId(w as u32);
        let own = freq.log_freq(word, class);
        let best_other = (0..freq.num_classes())
            .filter(|&y| y != class)
            .map(|y| freq.log_freq(word, y))
            .fold(f64::NEG_INFINITY, f64::max);
        if best_other - own > 1.0 {
            out.push(word);
        }
    }
    Ok(out)
}

/// Serialize vocabulary and per-class counts as one line-oriented table.
pub fn save_vocab_table(
    path: &Path,
    vocab: &Vocabulary,
    freq: &FrequencyTable,
) -> Result<(), CorpusError> {
    assert_eq!(vocab.len(), freq.vocab_size(), "vocab/table size mismatch");
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "#wordflip-vocab v1")?;
    writeln!(w, "#classes={} smoothing={}", freq.num_classes(), freq.smoothing)?;
    write!(w, "word\tindex")?;
    for c in 0..freq.num_classes() {
        write!(w, "\tcount{c}")?;
    }
    writeln!(w)?;
    for i in 0..vocab.len() {
        let id = WordId(i as u32);
        write!(w, "{}\t{}", vocab.word(id), i)?;
        for c in 0..freq.num_classes() {
            write!(w, "\t{}", freq.count(id, c))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Load a table written by [`save_vocab_table`].
pub fn load_vocab_table(path: &Path) -> Result<(Vocabulary, FrequencyTable), CorpusError> {
    let bad = |reason: &str| CorpusError::BadFile {
        kind: "vocab",
        reason: reason.into(),
    };
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let magic = lines.next().ok_or_else(|| bad("empty file"))??;
    if magic != "#wordflip-vocab v1" {
        return Err(bad("unrecognized magic line"));
    }
    let meta = lines.next().ok_or_else(|| bad("missing metadata line"))??;
    let mut num_classes = None;
    let mut smoothing = 1.0f64;
    for part in meta.trim_start_matches('#').split_whitespace() {
        if let Some(v) = part.strip_prefix("classes=") {
            num_classes = Some(v.parse::<usize>().map_err(|_| bad("bad classes="))?);
        } else if let Some(v) = part.strip_prefix("smoothing=") {
            smoothing = v.parse::<f64>().map_err(|_| bad("bad smoothing="))?;
        }
    }
    let num_classes = num_classes.ok_or_else(|| bad("missing classes="))?;
    let _header = lines.next().ok_or_else(|| bad("missing column header"))??;

    let mut words = Vec::new();
    let mut counts = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 + num_classes {
            return Err(bad(&format!("row {i}: wrong field count")));
        }
        let index: usize = fields[1].parse().map_err(|_| bad("bad index field"))?;
        if index != i {
            return Err(bad(&format!("row {i}: non-sequential index {index}")));
        }
        words.push(fields[0].to_owned());
        for c in 0..num_classes {
            counts.push(
                fields[2 + c]
                    .parse::<u64>()
                    .map_err(|_| bad("bad count field"))?,
            );
        }
    }
    if words.len() < Vocabulary::RESERVED
        || words[Vocabulary::MASK.index()] != MASK_TOKEN
        || words[Vocabulary::UNK.index()] != UNK_TOKEN
    {
        return Err(bad("reserved token rows missing or out of place"));
    }
    let total = counts.iter().sum();
    Ok((
        Vocabulary::from_words(words),
        FrequencyTable {
            counts,
            num_classes,
            total,
            smoothing,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_basic() {
        assert_eq!(tokenize("Good movie!"), vec!["good", "movie"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("A B a b"), vec!["a", "b", "a", "b"]);
        assert_eq!(tokenize("..!?"), Vec::<String>::new());
    }

    #[test]
    fn build_vocab_counts_and_order() {
        let corpus = ["a a b", "a c"];
        let v = Vocabulary::build(corpus.iter().copied(), 2).unwrap();
        assert_eq!(v.usable_len(), 1);
        assert_eq!(v.word(WordId(2)), "a");

        let v = Vocabulary::build(corpus.iter().copied(), 1).unwrap();
        assert_eq!(v.usable_len(), 3);
        // "a" occurs 3 times, then "b"/"c" tie broken lexicographically.
        assert_eq!(v.word(WordId(2)), "a");
        assert_eq!(v.word(WordId(3)), "b");
        assert_eq!(v.word(WordId(4)), "c");
    }

    #[test]
    fn build_vocab_rejects_empty_corpus() {
        assert!(matches!(
            Vocabulary::build(["", "  .."].iter().copied(), 1),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn vocab_reserved_and_unk_mapping() {
        let v = Vocabulary::build(["x y"].iter().copied(), 1).unwrap();
        assert_eq!(v.word(Vocabulary::MASK), MASK_TOKEN);
        assert_eq!(v.word(Vocabulary::UNK), UNK_TOKEN);
        assert_eq!(v.id_or_unk("zebra"), Vocabulary::UNK);
        assert_ne!(v.id_or_unk("x"), Vocabulary::UNK);
    }

    fn tiny_dataset() -> (Vocabulary, Dataset) {
        let vocab = Vocabulary::build(["a a", "b c"].iter().copied(), 1).unwrap();
        let records = vec![
            RawRecord {
                text: "a a".into(),
                label: 0,
            },
            RawRecord {
                text: "b c".into(),
                label: 1,
            },
        ];
        let ds = encode_dataset(&records, &vocab, None, Split::Train).unwrap();
        (vocab, ds)
    }

    #[test]
    fn class_frequencies_exact_counts() {
        let (vocab, ds) = tiny_dataset();
        let freq = FrequencyTable::from_dataset(&ds, vocab.len());
        let a = vocab.lookup("a").unwrap();
        assert_eq!(freq.count(a, 0), 2);
        assert_eq!(freq.count(a, 1), 0);
        assert_eq!(freq.total_tokens(), 4);
        // Sum over all cells equals total occurrences.
        let sum: u64 = (0..vocab.len())
            .flat_map(|w| (0..2).map(move |c| (w, c)))
            .map(|(w, c)| freq.count(WordId(w as u32), c))
            .sum();
        assert_eq!(sum, freq.total_tokens());
    }

    #[test]
    fn special_words_hand_arithmetic() {
        // Two classes; word "t" occurs 10 times in class 1, once in class 0.
        let vocab = Vocabulary::build(["t u"].iter().copied(), 1).unwrap();
        let t = vocab.lookup("t").unwrap();
        let u = vocab.lookup("u").unwrap();
        let mk = |counts: &[(WordId, usize, u64)], smoothing: f64| {
            let mut table = vec![0u64; vocab.len() * 2];
            let mut total = 0;
            for &(w, c, n) in counts {
                table[w.index() * 2 + c] = n;
                total += n;
            }
            FrequencyTable {
                counts: table,
                num_classes: 2,
                total,
                smoothing,
            }
        };

        // ln 10 - ln 1 = 2.30 > 1: t is special for class 0.
        let freq = mk(&[(t, 1, 10), (t, 0, 1), (u, 0, 5), (u, 1, 5)], 0.0);
        let t0 = special_words(&freq, 0).unwrap();
        assert!(t0.contains(&t));
        // Equal counts: excluded everywhere.
        assert!(!t0.contains(&u));
        assert!(!special_words(&freq, 1).unwrap().contains(&u));

        // ln 2 - ln 1 = 0.69 <= 1: excluded.
        let freq = mk(&[(t, 1, 2), (t, 0, 1)], 0.0);
        assert!(!special_words(&freq, 0).unwrap().contains(&t));
    }

    #[test]
    fn special_words_gap_property() {
        let (vocab, ds) = tiny_dataset();
        let freq = FrequencyTable::from_dataset(&ds, vocab.len());
        for class in 0..2 {
            for w in special_words(&freq, class).unwrap() {
                let own = freq.log_freq(w, class);
                let best = (0..2)
                    .filter(|&y| y != class)
                    .map(|y| freq.log_freq(w, y))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(best - own > 1.0);
            }
        }
    }

    #[test]
    fn special_words_needs_two_classes() {
        let vocab = Vocabulary::build(["a"].iter().copied(), 1).unwrap();
        let freq = FrequencyTable {
            counts: vec![0; vocab.len()],
            num_classes: 1,
            total: 0,
            smoothing: 1.0,
        };
        assert!(matches!(
            special_words(&freq, 0),
            Err(CorpusError::TooFewClasses(1))
        ));
    }

    #[test]
    fn encode_dataset_rejects_empty_text() {
        let vocab = Vocabulary::build(["a"].iter().copied(), 1).unwrap();
        let records = vec![RawRecord {
            text: "!!!".into(),
            label: 0,
        }];
        assert!(matches!(
            encode_dataset(&records, &vocab, Some(2), Split::Train),
            Err(CorpusError::BadRecord { .. })
        ));
    }

    #[test]
    fn encode_dataset_truncates_long_sentences() {
        let vocab = Vocabulary::build(["a"].iter().copied(), 1).unwrap();
        let long = vec!["a"; MAX_SENTENCE_LEN + 10].join(" ");
        let records = vec![RawRecord {
            text: long,
            label: 0,
        }];
        let ds = encode_dataset(&records, &vocab, Some(2), Split::Train).unwrap();
        assert_eq!(ds.examples[0].tokens.len(), MAX_SENTENCE_LEN);
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.tsv");
        let records = vec![
            RawRecord {
                text: "solid debut album".into(),
                label: 2,
            },
            RawRecord {
                text: "markets fell sharply".into(),
                label: 0,
            },
        ];
        write_records(&path, &records).unwrap();
        assert_eq!(read_records(&path).unwrap(), records);
    }

    #[test]
    fn vocab_table_round_trip() {
        let (vocab, ds) = tiny_dataset();
        let freq = FrequencyTable::from_dataset(&ds, vocab.len());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        save_vocab_table(&path, &vocab, &freq).unwrap();
        let (v2, f2) = load_vocab_table(&path).unwrap();
        assert_eq!(v2.len(), vocab.len());
        for i in 0..vocab.len() {
            let id = WordId(i as u32);
            assert_eq!(v2.word(id), vocab.word(id));
            for c in 0..2 {
                assert_eq!(f2.count(id, c), freq.count(id, c));
            }
        }
        assert_eq!(f2.smoothing, freq.smoothing);
        assert_eq!(f2.total_tokens(), freq.total_tokens());
    }

    proptest! {
        #[test]
        fn tokenize_idempotent(text in ".{0,80}") {
            let once = tokenize(&text);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn vocab_order_independent(mut texts in proptest::collection::vec("[a-d ]{0,12}", 1..8)) {
            let has_tokens = texts.iter().any(|t| !tokenize(t).is_empty());
            prop_assume!(has_tokens);
            let forward = Vocabulary::build(texts.iter().map(String::as_str), 1).unwrap();
            texts.reverse();
            let backward = Vocabulary::build(texts.iter().map(String::as_str), 1).unwrap();
            prop_assert_eq!(forward.len(), backward.len());
            for i in 0..forward.len() {
                prop_assert_eq!(forward.word(WordId(i as u32)), backward.word(WordId(i as u32)));
            }
        }
    }
}
