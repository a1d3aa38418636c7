//! File-based experiment stages: each stage reads its inputs from the
//! output directory, writes its artifacts there, echoes the configuration
//! (seeds included), and appends its wall time to `timings.tsv`.
//!
//! Metric artifacts (vocabulary, checkpoints, capability tables, attack
//! records, the machine-readable report) are byte-reproducible under a
//! fixed configuration; accounting logs that carry wall-clock times
//! (`timings.tsv`, `estimator_*_log.tsv`, `sweep.tsv`) are not, and are the
//! only artifacts excluded from that guarantee.

use std::fs;
use std::fs::OpenOptions;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{self, AttackConfig, BigramLm};
use crate::corpus::{
    encode_dataset, load_vocab_table, read_records, save_vocab_table, write_records,
    CorpusError, Dataset, FrequencyTable, Split, Vocabulary, WordId,
};
use crate::defense::{self, AugmentationPolicy, DefenseError, MixWeights};
use crate::estimator::{self, EstimatorConfig, LedgerMode, Variant};
use crate::harness::{
    self, asr_vs_ppl_threshold, asr_vs_similarity_threshold, capability_histogram, AttackRecord,
    AttackSummary, HarnessError,
};
use crate::model::{self, ClassifierParams, ModelError, TrainConfig};
use crate::oracle::{
    self, load_capability, save_capability, CorrectSubset, FlipMatrixHeader, OracleError,
    SampleSpec,
};
use crate::synth::{self, SynthConfig};
use crate::util::sha256_hex;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing artifact `{0}`; run the producing stage first")]
    MissingArtifact(PathBuf),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config write error: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("report serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// Train/test dataset files; default to `train.tsv` / `test.tsv` under
    /// the output directory.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub min_freq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSection {
    pub patience: usize,
    pub variant: Variant,
    pub ledger: LedgerMode,
    /// Capability runs use at most this many correctly classified examples,
    /// drawn by seeded uniform sampling.
    pub sample_size: usize,
    pub sample_seed: u64,
    pub sweep_patience: Vec<usize>,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            patience: 256,
            variant: Variant::Full,
            ledger: LedgerMode::Serial,
            sample_size: 1000,
            sample_seed: 11,
            sweep_patience: vec![128, 256, 512, 1024, 2048],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseSection {
    pub steps: usize,
    pub gradient_fraction: f64,
    pub mix: MixWeights,
    pub seed: u64,
}

impl Default for DefenseSection {
    fn default() -> Self {
        Self {
            steps: 2000,
            gradient_fraction: 0.5,
            mix: MixWeights::default(),
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Complete experiment configuration; a flat TOML file with one section per
/// subsystem. Every random choice in a run flows from the seeds recorded
/// here.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: TrainConfig,
    pub estimator: EstimatorSection,
    pub attack: AttackConfig,
    pub defense: DefenseSection,
    pub synth: SynthConfig,
    pub run: RunSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        fs::write(path, toml::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn out_dir(&self) -> &Path {
        &self.run.out_dir
    }

    pub fn train_path(&self) -> PathBuf {
        self.data
            .train
            .clone()
            .unwrap_or_else(|| self.run.out_dir.join("train.tsv"))
    }

    pub fn test_path(&self) -> PathBuf {
        self.data
            .test
            .clone()
            .unwrap_or_else(|| self.run.out_dir.join("test.tsv"))
    }

    fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            patience: self.estimator.patience,
            variant: self.estimator.variant,
            ledger_mode: self.estimator.ledger,
        }
    }

    fn defense_train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.defense.steps,
            seed: self.defense.seed,
            ..self.model
        }
    }

    fn sample_spec(&self) -> SampleSpec {
        SampleSpec {
            max_size: self.estimator.sample_size,
            seed: self.estimator.sample_seed,
        }
    }
}

/// Which checkpoint a stage targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Vanilla,
    Defended,
}

impl Target {
    fn suffix(self) -> &'static str {
        match self {
            Target::Vanilla => "",
            Target::Defended => "_defended",
        }
    }

    fn checkpoint(self, out: &Path) -> PathBuf {
        match self {
            Target::Vanilla => out.join("model.ckpt"),
            Target::Defended => out.join("model_defended.ckpt"),
        }
    }
}

fn prepare_out_dir(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    fs::create_dir_all(cfg.out_dir())?;
    cfg.save(&cfg.out_dir().join("config_echo.toml"))?;
    Ok(())
}

fn record_timing(cfg: &ExperimentConfig, stage: &str, seconds: f64) -> Result<(), PipelineError> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(cfg.out_dir().join("timings.tsv"))?;
    writeln!(file, "{stage}\t{seconds:.3}")?;
    Ok(())
}

fn require(path: PathBuf) -> Result<PathBuf, PipelineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact(path))
    }
}

fn load_splits(
    cfg: &ExperimentConfig,
    vocab: &Vocabulary,
) -> Result<(Dataset, Dataset), PipelineError> {
    let train_raw = read_records(&require(cfg.train_path())?)?;
    let test_raw = read_records(&require(cfg.test_path())?)?;
    let num_classes = train_raw
        .iter()
        .chain(&test_raw)
        .map(|r| r.label)
        .max()
        .unwrap_or(0)
        + 1;
    let train = encode_dataset(&train_raw, vocab, Some(num_classes), Split::Train)?;
    let test = encode_dataset(&test_raw, vocab, Some(num_classes), Split::Test)?;
    Ok((train, test))
}

fn load_model_artifacts(
    cfg: &ExperimentConfig,
    target: Target,
) -> Result<(Vocabulary, FrequencyTable, ClassifierParams), PipelineError> {
    let (vocab, freq) = load_vocab_table(&require(cfg.out_dir().join("vocab.tsv"))?)?;
    let params = model::load_checkpoint(&require(target.checkpoint(cfg.out_dir()))?)?;
    Ok((vocab, freq, params))
}

/// Generate the bundled synthetic corpus into the configured data paths.
pub fn stage_gen_corpus(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let start = Instant::now();
    prepare_out_dir(cfg)?;
    let (train, test) = synth::generate(&cfg.synth);
    write_records(&cfg.train_path(), &train)?;
    write_records(&cfg.test_path(), &test)?;
    record_timing(cfg, "gen-corpus", start.elapsed().as_secs_f64())
}

/// Build vocabulary and frequency tables and train the vanilla classifier.
pub fn stage_train(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let start = Instant::now();
    prepare_out_dir(cfg)?;
    let train_raw = read_records(&require(cfg.train_path())?)?;
    let min_freq = cfg.data.min_freq.unwrap_or(1);
    let vocab = Vocabulary::build(train_raw.iter().map(|r| r.text.as_str()), min_freq)?;
    let (train, _) = load_splits(cfg, &vocab)?;
    let freq = FrequencyTable::from_dataset(&train, vocab.len());
    save_vocab_table(&cfg.out_dir().join("vocab.tsv"), &vocab, &freq)?;

    let (params, log) = model::train(&train, &vocab, &cfg.model, None)?;
    model::save_checkpoint(&params, &cfg.out_dir().join("model.ckpt"))?;
    let mut out = String::from("step\tloss\n");
    for (step, loss) in log.losses.iter().enumerate() {
        out.push_str(&format!("{step}\t{loss}\n"));
    }
    fs::write(cfg.out_dir().join("train_log.tsv"), out)?;
    record_timing(cfg, "train", start.elapsed().as_secs_f64())
}

/// Exact flip matrix and capability over the sampled correct subset of the
/// training split.
pub fn stage_bruteforce(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let start = Instant::now();
    prepare_out_dir(cfg)?;
    let (vocab, _, params) = load_model_artifacts(cfg, Target::Vanilla)?;
    let (train, _) = load_splits(cfg, &vocab)?;
    let classify = |t: &[WordId]| params.predict(t).expect("non-empty sentence");
    let dplus = CorrectSubset::new(classify, &train, Some(cfg.sample_spec()));
    let words = vocab.usable_words();

    #[cfg(feature = "parallel")]
    let matrix = oracle::par_brute_force_matrix(classify, &dplus, &words);
    #[cfg(not(feature = "parallel"))]
    let matrix = oracle::brute_force_matrix(classify, &dplus, &words);

    let header = FlipMatrixHeader {
        dataset_sha256: train.content_hash(),
        checkpoint_sha256: sha256_hex(&model::checkpoint_bytes(&params)),
        basis: dplus.basis.clone(),
    };
    oracle::save_flip_matrix(&cfg.out_dir().join("flip_matrix.txt"), &matrix, &header)?;
    let capability = matrix.capability_vector(&dplus.basis);
    save_capability(&cfg.out_dir().join("capability_exact.tsv"), &capability, &vocab)?;
    record_timing(cfg, "bruteforce", start.elapsed().as_secs_f64())
}

fn write_estimator_log(
    path: &Path,
    outcome: &estimator::EstimateOutcome,
) -> Result<(), PipelineError> {
    let mut out =
        String::from("example\tphase1_queries\tphase2_queries\tgradient_passes\tflips\telapsed_micros\n");
    for s in &outcome.per_example {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            s.index, s.phase1_queries, s.phase2_queries, s.gradient_passes, s.flips_found,
            s.elapsed_micros
        ));
    }
    out.push_str(&format!(
        "#totals queries={} gradient_passes={}\n",
        outcome.total_queries, outcome.total_gradient_passes
    ));
    fs::write(path, out)?;
    Ok(())
}

/// Estimated capability on the train sample and the test split.
pub fn stage_estimate(cfg: &ExperimentConfig, target: Target) -> Result<(), PipelineError> {
    let start = Instant::now();
    prepare_out_dir(cfg)?;
    let (vocab, _, params) = load_model_artifacts(cfg, target)?;
    let (train, test) = load_splits(cfg, &vocab)?;
    let words = vocab.usable_words();
    let config = cfg.estimator_config();
    let suffix = target.suffix();
    let classify = |t: &[WordId]| params.predict(t).expect("non-empty sentence");

    for (split_name, dataset) in [("train", &train), ("test", &test)] {
        let dplus = CorrectSubset::new(classify, dataset, Some(cfg.sample_spec()));
        let outcome = run_estimate(&params, &dplus, &words, &config);
        save_capability(
            &cfg.out_dir().join(format!("capability_{split_name}{suffix}.tsv")),
            &outcome.capability,
            &vocab,
        )?;
        write_estimator_log(
            &cfg.out_dir()
                .join(format!("estimator_{split_name}{suffix}_log.tsv")),
            &outcome,
        )?;
    }
    record_timing(cfg, &format!("estimate{suffix}"), start.elapsed().as_secs_f64())
}

/// Dispatch to the parallel estimator when the ledger mode allows it.
fn run_estimate(
    params: &ClassifierParams,
    dplus: &CorrectSubset,
    words: &[WordId],
    config: &EstimatorConfig,
) -> estimator::EstimateOutcome {
    #[cfg(feature = "parallel")]
    if config.ledger_mode == LedgerMode::Snapshot {
        return estimator::par_estimate(params, dplus, words, config)
            .expect("snapshot mode is parallelizable");
    }
    estimator::estimate(params, dplus, words, config)
}

/// Attack the correctly classified test subset with the top-capability
/// words, then run the equal-budget random baselines.
pub fn stage_attack(cfg: &ExperimentConfig, target: Target) -> Result<(), PipelineError> {
    let start = Instant::now();
    prepare_out_dir(cfg)?;
    let (vocab, _, params) = load_model_artifacts(cfg, target)?;
    let (train, test) = load_splits(cfg, &vocab)?;
    let suffix = target.suffix();
    let capability = load_capability(&require(
        cfg.out_dir().join(format!("capability_train{suffix}.tsv")),
    )?)?;
    let attack_words = attack::top_capacity_words(&capability, cfg.attack.candidate_words);
    let lm = BigramLm::train(&train, vocab.len());
    let classify = |t: &[WordId]| params.predict(t).expect("non-empty sentence");
    let subset = CorrectSubset::new(classify, &test, None);

    #[cfg(feature = "parallel")]
    let results = attack::par_run_attacks(&params, &subset, &attack_words, &lm, &cfg.attack);
    #[cfg(not(feature = "parallel"))]
    let results = attack::run_attacks(&params, &subset, &attack_words, &lm, &cfg.attack);

    let records: Vec<AttackRecord> = results
        .iter()
        .enumerate()
        .map(|(i, r)| AttackRecord::from_result(i, r))
        .collect();
    let summary = harness::summarize(&records, subset.len());
    harness::write_attack_records(
        &cfg.out_dir().join(format!("attack_records{suffix}.tsv")),
        &records,
        &summary,
    )?;

    // Random baselines get the attack's observed mean query budget.
    let budget = summary.mean_queries.ceil() as u64;
    let usable = vocab.usable_words();
    let single = harness::random_single_word_baseline(
        &params,
        &subset,
        &lm,
        &usable,
        budget,
        &cfg.attack,
        cfg.attack.seed ^ 0x5151,
    );
    harness::write_attack_records(
        &cfg.out_dir().join(format!("baseline_single{suffix}.tsv")),
        &single,
        &harness::summarize(&single, subset.len()),
    )?;
    let multi = harness::random_multi_word_baseline(
        &params,
        &subset,
        &lm,
        &usable,
        budget,
        3,
        &cfg.attack,
        cfg.attack.seed ^ 0x3333,
    );
    harness::write_attack_records(
        &cfg.out_dir().join(format!("baseline_multi{suffix}.tsv")),
        &multi,
        &harness::summarize(&multi, subset.len()),
    )?;
    record_timing(cfg, &format!("attack{suffix}"), start.elapsed().as_secs_f64())
}

/// Harden the vanilla classifier with augmented continued training.
pub fn stage_defend(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let start = Instant::now();
    prepare_out_dir(cfg)?;
    let (vocab, freq, params) = load_model_artifacts(cfg, Target::Vanilla)?;
    let (train, _) = load_splits(cfg, &vocab)?;
    let policy = AugmentationPolicy {
        gradient_fraction: cfg.defense.gradient_fraction,
        mix: cfg.defense.mix,
        seed: cfg.defense.seed,
    };
    let (hardened, log, compositions) = defense::harden(
        params,
        &train,
        &vocab,
        &freq,
        &policy,
        &cfg.defense_train_config(),
    )?;
    model::save_checkpoint(&hardened, &cfg.out_dir().join("model_defended.ckpt"))?;
    let mut out = String::from("step\tloss\tgradient\toriginal\trandom\tspecial\tspecial_fallbacks\n");
    for (loss, comp) in log.losses.iter().zip(&compositions) {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            comp.step, loss, comp.gradient, comp.original, comp.random, comp.special,
            comp.special_fallbacks
        ));
    }
    fs::write(cfg.out_dir().join("defense_log.tsv"), out)?;
    record_timing(cfg, "defend", start.elapsed().as_secs_f64())
}

/// Estimator sweep over patience values and variants; one table row per
/// run, with the brute-force robustness as a reference when available.
pub fn stage_sweep(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let start = Instant::now();
    prepare_out_dir(cfg)?;
    let (vocab, _, params) = load_model_artifacts(cfg, Target::Vanilla)?;
    let (train, _) = load_splits(cfg, &vocab)?;
    let words = vocab.usable_words();
    let classify = |t: &[WordId]| params.predict(t).expect("non-empty sentence");
    let dplus = CorrectSubset::new(classify, &train, Some(cfg.sample_spec()));

    let mut out = String::from("#wordflip-sweep v1\n");
    let matrix_path = cfg.out_dir().join("flip_matrix.txt");
    if matrix_path.exists() {
        let (matrix, _) = oracle::load_flip_matrix(&matrix_path)?;
        out.push_str(&format!("#reference robustness={}\n", matrix.robustness()));
    }
    out.push_str("variant\tpatience\trobustness_estimate\tmean_example_micros\ttotal_queries\ttotal_gradient_passes\n");
    for variant in [Variant::Full, Variant::TopPosition, Variant::Unmasked] {
        for &patience in &cfg.estimator.sweep_patience {
            let config = EstimatorConfig {
                patience,
                variant,
                ledger_mode: cfg.estimator.ledger,
            };
            let outcome = run_estimate(&params, &dplus, &words, &config);
            let mean_micros = outcome
                .per_example
                .iter()
                .map(|s| s.elapsed_micros as f64)
                .sum::<f64>()
                / outcome.per_example.len() as f64;
            out.push_str(&format!(
                "{variant}\t{patience}\t{}\t{mean_micros:.1}\t{}\t{}\n",
                outcome.robustness_estimate, outcome.total_queries, outcome.total_gradient_passes
            ));
        }
    }
    fs::write(cfg.out_dir().join("sweep.tsv"), out)?;
    record_timing(cfg, "sweep", start.elapsed().as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub train_estimate: f64,
    pub train_basis: String,
    pub test_estimate: f64,
    pub test_basis: String,
    /// Brute-force robustness on the train sample, when computed.
    pub exact_train: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub clean_accuracy: f64,
    pub robustness: RobustnessReport,
    pub attack: AttackSummary,
    pub baseline_single: AttackSummary,
    pub baseline_multi: AttackSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub vocab_size: usize,
    pub usable_vocab: usize,
    pub num_classes: usize,
    pub train_dataset_sha256: String,
    pub test_dataset_sha256: String,
    pub checkpoint_sha256: String,
    pub defended_checkpoint_sha256: Option<String>,
    pub vanilla: TargetReport,
    pub defended: Option<TargetReport>,
    pub config: ExperimentConfig,
    /// Wall times per stage; informational only and excluded from the
    /// machine-readable report so reruns stay byte-identical.
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

fn target_report(
    cfg: &ExperimentConfig,
    test: &Dataset,
    target: Target,
) -> Result<TargetReport, PipelineError> {
    let params = model::load_checkpoint(&require(target.checkpoint(cfg.out_dir()))?)?;
    let classify = |t: &[WordId]| params.predict(t).expect("non-empty sentence");
    let clean = harness::clean_accuracy(classify, test)?;
    let suffix = target.suffix();
    let cap_train = load_capability(&require(
        cfg.out_dir().join(format!("capability_train{suffix}.tsv")),
    )?)?;
    let cap_test = load_capability(&require(
        cfg.out_dir().join(format!("capability_test{suffix}.tsv")),
    )?)?;
    let exact_path = cfg.out_dir().join("capability_exact.tsv");
    let exact_train = if target == Target::Vanilla && exact_path.exists() {
        Some(load_capability(&exact_path)?.robustness())
    } else {
        None
    };
    let read_summary = |name: &str| -> Result<AttackSummary, PipelineError> {
        let (records, stored) = harness::read_attack_records(&require(
            cfg.out_dir().join(format!("{name}{suffix}.tsv")),
        )?)?;
        // Recompute from the per-example records; the stored summary is a
        // convenience, not the source of truth.
        Ok(harness::summarize(&records, stored.denominator))
    };
    Ok(TargetReport {
        clean_accuracy: clean,
        robustness: RobustnessReport {
            train_estimate: cap_train.robustness(),
            train_basis: cap_train.basis.clone(),
            test_estimate: cap_test.robustness(),
            test_basis: cap_test.basis.clone(),
            exact_train,
        },
        attack: read_summary("attack_records")?,
        baseline_single: read_summary("baseline_single")?,
        baseline_multi: read_summary("baseline_multi")?,
    })
}

/// Assemble the report from stage artifacts, emit the capability histogram
/// and threshold-curve tables, and write both machine- and human-readable
/// forms.
pub fn stage_report(cfg: &ExperimentConfig) -> Result<Report, PipelineError> {
    let start = Instant::now();
    prepare_out_dir(cfg)?;
    let (vocab, _, params) = load_model_artifacts(cfg, Target::Vanilla)?;
    let (train, test) = load_splits(cfg, &vocab)?;

    let vanilla = target_report(cfg, &test, Target::Vanilla)?;
    let defended = if Target::Defended.checkpoint(cfg.out_dir()).exists() {
        Some(target_report(cfg, &test, Target::Defended)?)
    } else {
        None
    };

    // Histogram over the best capability table available (exact if present,
    // estimated otherwise).
    let exact_path = cfg.out_dir().join("capability_exact.tsv");
    let cap = if exact_path.exists() {
        load_capability(&exact_path)?
    } else {
        load_capability(&require(cfg.out_dir().join("capability_train.tsv"))?)?
    };
    let hist = capability_histogram(&cap, 20);
    let mut hist_out = String::from("#wordflip-histogram v1\nbin_lo\tbin_hi\tcount\n");
    for (i, count) in hist.counts.iter().enumerate() {
        hist_out.push_str(&format!("{}\t{}\t{}\n", hist.edges[i], hist.edges[i + 1], count));
    }
    for (q, v) in &hist.percentiles {
        hist_out.push_str(&format!("#p{q:02}={v}\n"));
    }
    fs::write(cfg.out_dir().join("capability_histogram.tsv"), hist_out)?;

    // Threshold curves from the vanilla attack records.
    let (records, stored) = harness::read_attack_records(&require(
        cfg.out_dir().join("attack_records.tsv"),
    )?)?;
    let sim_grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let ppl_grid: Vec<f64> = (0..=20).map(|i| 0.5 + i as f64 * 0.1).collect();
    let mut curve_out = String::from("#wordflip-asr-curve v1\nkind\tthreshold\tasr\n");
    for (t, v) in asr_vs_similarity_threshold(&records, &sim_grid, stored.denominator) {
        curve_out.push_str(&format!("similarity\t{t}\t{v}\n"));
    }
    for (t, v) in asr_vs_ppl_threshold(&records, &ppl_grid, stored.denominator) {
        curve_out.push_str(&format!("ppl_ratio\t{t}\t{v}\n"));
    }
    fs::write(cfg.out_dir().join("asr_curves.tsv"), curve_out)?;

    let timings_path = cfg.out_dir().join("timings.tsv");
    let timings = if timings_path.exists() {
        fs::read_to_string(&timings_path)?
            .lines()
            .filter_map(|l| {
                let (stage, secs) = l.split_once('\t')?;
                Some((stage.to_owned(), secs.parse().ok()?))
            })
            .collect()
    } else {
        Vec::new()
    };

    let report = Report {
        vocab_size: vocab.len(),
        usable_vocab: vocab.usable_len(),
        num_classes: train.num_classes,
        train_dataset_sha256: train.content_hash(),
        test_dataset_sha256: test.content_hash(),
        checkpoint_sha256: sha256_hex(&model::checkpoint_bytes(&params)),
        defended_checkpoint_sha256: defended
            .as_ref()
            .map(|_| -> Result<String, PipelineError> {
                let p = model::load_checkpoint(&Target::Defended.checkpoint(cfg.out_dir()))?;
                Ok(sha256_hex(&model::checkpoint_bytes(&p)))
            })
            .transpose()?,
        vanilla,
        defended,
        config: cfg.clone(),
        timings,
    };
    fs::write(
        cfg.out_dir().join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    fs::write(cfg.out_dir().join("report.txt"), render_report(&report))?;
    record_timing(cfg, "report", start.elapsed().as_secs_f64())?;
    Ok(report)
}

fn render_target(name: &str, t: &TargetReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("[{name}]\n"));
    s.push_str(&format!("  clean accuracy            {:.4}\n", t.clean_accuracy));
    s.push_str(&format!(
        "  robustness (train est.)   {:.4}   [{}]\n",
        t.robustness.train_estimate, t.robustness.train_basis
    ));
    if let Some(exact) = t.robustness.exact_train {
        s.push_str(&format!("  robustness (train exact)  {exact:.4}\n"));
    }
    s.push_str(&format!(
        "  robustness (test est.)    {:.4}   [{}]\n",
        t.robustness.test_estimate, t.robustness.test_basis
    ));
    let line = |label: &str, a: &AttackSummary| {
        format!(
            "  {label:<24}  asr {:.4}  asr1 {:.4}  mean queries {:.1}\n",
            a.attack_success_rate, a.single_word_success_rate, a.mean_queries
        )
    };
    s.push_str(&line("single-word attack", &t.attack));
    s.push_str(&line("random single baseline", &t.baseline_single));
    s.push_str(&line("random multi baseline", &t.baseline_multi));
    s
}

fn render_report(r: &Report) -> String {
    let mut s = String::new();
    s.push_str("wordflip experiment report\n");
    s.push_str("==========================\n\n");
    s.push_str(&format!(
        "vocabulary {} entries ({} usable), {} classes\n",
        r.vocab_size, r.usable_vocab, r.num_classes
    ));
    s.push_str(&format!("train data sha256  {}\n", r.train_dataset_sha256));
    s.push_str(&format!("test data sha256   {}\n", r.test_dataset_sha256));
    s.push_str(&format!("checkpoint sha256  {}\n\n", r.checkpoint_sha256));
    s.push_str(&render_target("vanilla", &r.vanilla));
    if let Some(d) = &r.defended {
        s.push('\n');
        s.push_str(&render_target("defended", d));
    }
    if !r.timings.is_empty() {
        s.push_str("\nstage wall times (seconds; informational)\n");
        for (stage, secs) in &r.timings {
            s.push_str(&format!("  {stage:<20} {secs:.3}\n"));
        }
    }
    s
}
