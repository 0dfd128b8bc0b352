//! Command-line interface.
//!
//! Every setting can come from a flag, from a config file given with
//! `--config`, or from a built-in default, in that order of precedence. The
//! seed additionally falls back to the `TOPICFORGE_SEED` environment
//! variable before the default. Config files are flat `key = value` lines
//! (`#` starts a comment); a run manifest JSON is also accepted, in which
//! case its `config` object is used, so any output directory can be
//! regenerated from its `manifest.json`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::artifacts::{self, RunManifest};
use crate::cards;
use crate::corpus::{self, Corpus, DocLength, PhiSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::gibbs::{self, ChainConfig, HyperParams};
use crate::heldout::{self, HeldoutConfig};
use crate::metrics::{self, RHAT_ACCEPTABLE};
use crate::plot;
use crate::summary::{self, EvalOptions, MergeMode, SweepOptions, TopicPool};

pub const SEED_ENV: &str = "TOPICFORGE_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "topicforge",
    version,
    about = "Topic models for market-basket data"
)]
pub struct Cli {
    /// Config file (key = value lines, or a run manifest)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode raw baskets into a corpus, split it and count co-occurrences
    Ingest(IngestArgs),
    /// Generate a synthetic corpus with planted topics
    Synth(SynthArgs),
    /// Run Gibbs chains and record posterior samples
    Train(TrainArgs),
    /// Score raw samples or a clustered model
    Evaluate(EvaluateArgs),
    /// Cluster pooled topics into a summary model
    Cluster(ClusterArgs),
    /// Evaluate clustered models over a threshold and size grid
    Sweep(SweepArgs),
    /// Plot-ready tables, charts and topic cards
    Report(ReportArgs),
    /// Convergence diagnostics on log-likelihood traces
    Diag(DiagArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Baskets as JSON lines: {"id": ..., "products": [...]}
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub min_basket_size: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Fraction of baskets held out for testing (0 disables the split)
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub docs: Option<usize>,
    #[arg(long)]
    pub doc_len_min: Option<usize>,
    #[arg(long)]
    pub doc_len_max: Option<usize>,
    /// Symmetric Dirichlet parameter of each document's topic mixture
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Draw topics from a symmetric Dirichlet with this concentration
    /// instead of disjoint uniform blocks
    #[arg(long)]
    pub concentration: Option<f64>,
    #[arg(long)]
    pub min_basket_size: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub alpha_sum: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub lag: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Id of the first chain; use distinct ranges for replication runs
    #[arg(long)]
    pub chain_offset: Option<u64>,
    #[arg(long)]
    pub loglik_every: Option<usize>,
    /// Also store per-document topic mixtures
    #[arg(long)]
    pub keep_theta: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct HeldoutArgs {
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Co-occurrence counts for coherence
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub particles: Option<usize>,
    /// Skip resampling earlier positions in the left-to-right estimator
    #[arg(long)]
    pub no_resample: bool,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub alpha_sum: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of posterior samples
    #[arg(long, conflicts_with = "model")]
    pub samples: Option<PathBuf>,
    /// Clustered model directory
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Clustered model from independent chains, for credibility
    #[arg(long, requires = "model")]
    pub replication_model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub heldout: HeldoutArgs,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub min_size: Option<usize>,
    /// Allow topics of the same sample to merge
    #[arg(long)]
    pub within_sample: bool,
    /// Corpus whose vocabulary labels the topic cards
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub top_n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Samples from independent chains, for credibility
    #[arg(long)]
    pub replication: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma list or start:stop:step
    #[arg(long)]
    pub thresholds: Option<String>,
    /// Comma list
    #[arg(long)]
    pub min_sizes: Option<String>,
    #[arg(long)]
    pub within_sample: bool,
    #[command(flatten)]
    pub heldout: HeldoutArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Sweep CSV to turn into per-metric tables
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    /// Clustered model to describe with topic cards
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Corpus whose vocabulary labels the topic cards
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render SVG charts
    #[arg(long)]
    pub svg: bool,
    #[arg(long)]
    pub top_n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    /// Run directories; each one is diagnosed as a separate model
    #[arg(long, num_args = 1.., required = true)]
    pub traces: Vec<PathBuf>,
    /// Leading fraction of each trace to discard
    #[arg(long)]
    pub discard: Option<f64>,
    /// Also write the table as CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Resolves settings by precedence and records the result.
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

/// Parses a flat `key = value` config, or the `config` map of a manifest.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    if text.trim_start().starts_with('{') {
        let m: RunManifest = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config manifest: {e}")))?;
        return Ok(m.config);
    }
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
        out.insert(normalize_key(k), v.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Settings {
            file,
            resolved: BTreeMap::new(),
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Settings::new(file))
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.file.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("config value {key} = {s:?} is invalid"))),
        }
    }

    fn record(&mut self, key: &str, value: String) {
        self.resolved.insert(key.to_string(), value);
    }

    pub fn value<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T> {
        let v = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<Option<T>> {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v.to_string());
        }
        Ok(v)
    }

    pub fn required<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T> {
        self.optional(key, flag)?
            .ok_or_else(|| Error::Config(format!("--{} is required", key.replace('_', "-"))))
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        let p = self.optional_path(key, flag)?;
        p.ok_or_else(|| Error::Config(format!("--{} is required", key.replace('_', "-"))))
    }

    pub fn optional_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let p = flag.or_else(|| self.file.get(key).map(PathBuf::from));
        if let Some(p) = &p {
            self.record(key, p.display().to_string());
        }
        Ok(p)
    }

    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = flag || self.file_value(key)?.unwrap_or(false);
        self.record(key, v.to_string());
        Ok(v)
    }

    /// Seed from the flag, the config file, `TOPICFORGE_SEED`, or 0.
    pub fn seed(&mut self, key: &str, flag: Option<u64>) -> Result<u64> {
        let v = match flag {
            Some(v) => v,
            None => match self.file_value(key)? {
                Some(v) => v,
                None => match std::env::var(SEED_ENV) {
                    Ok(s) => s.trim().parse().map_err(|_| {
                        Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))
                    })?,
                    Err(_) => 0,
                },
            },
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }

    pub fn manifest(&self, command: &str) -> RunManifest {
        let mut m = RunManifest::new(command);
        m.config = self.resolved.clone();
        m
    }
}

/// Parses `a,b,c` or `start:stop:step` (inclusive, values rounded to 9
/// decimals).
pub fn parse_thresholds(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse threshold list {s:?}"));
    let round = |x: f64| (x * 1e9).round() / 1e9;
    if s.contains(':') {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if step <= 0.0 || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| round(start + i as f64 * step)).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect()
}

pub fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse size list {s:?}")))
        })
        .collect()
}

pub const DEFAULT_THRESHOLDS: &str = "0:0.55:0.05";
pub const DEFAULT_MIN_SIZES: &str = "1,5,10,20";
pub const DEFAULT_TEST_FRACTION: f64 = 0.1;
pub const DEFAULT_THRESHOLD: f64 = 0.35;
pub const DEFAULT_MIN_SIZE: usize = 10;
pub const DEFAULT_DISCARD: f64 = 0.5;

/// Parses `argv` and runs the command, returning the process exit code:
/// 0 on success, 2 for usage or validation errors, 1 otherwise.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        // fails only if a pool already exists, as in repeated in-process runs
        if rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .is_err()
        {
            log::debug!("thread pool already initialized");
        }
    }
    match cli.command {
        Command::Ingest(a) => ingest(a, &mut settings),
        Command::Synth(a) => synth(a, &mut settings),
        Command::Train(a) => train(a, &mut settings),
        Command::Evaluate(a) => evaluate(a, &mut settings),
        Command::Cluster(a) => cluster(a, &mut settings),
        Command::Sweep(a) => sweep(a, &mut settings),
        Command::Report(a) => report(a, &mut settings),
        Command::Diag(a) => diag(a, &mut settings),
    }
}

fn add_input(manifest: &mut RunManifest, key: &str, path: &Path) -> Result<()> {
    manifest
        .inputs
        .insert(key.to_string(), artifacts::digest(path)?);
    Ok(())
}

/// Writes the corpus, its optional train/test split, and co-occurrence
/// counts of the training part.
fn write_corpus_bundle(out: &Path, corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<()> {
    artifacts::create_dir(out)?;
    artifacts::write_corpus(&out.join("corpus.jsonl"), corpus)?;
    let stats = if test_fraction > 0.0 {
        let (train, test) = corpus::split_corpus(corpus, test_fraction, seed)?;
        artifacts::write_corpus(&out.join("train.jsonl"), &train)?;
        artifacts::write_corpus(&out.join("test.jsonl"), &test)?;
        println!(
            "split {} documents into {} train / {} test",
            corpus.num_docs(),
            train.num_docs(),
            test.num_docs()
        );
        corpus::cooccurrence_stats(&train)?
    } else {
        corpus::cooccurrence_stats(corpus)?
    };
    artifacts::write_stats(&out.join("cooc.csv"), &stats)
}

fn check_fraction(f: f64) -> Result<()> {
    if (0.0..1.0).contains(&f) {
        Ok(())
    } else {
        Err(Error::Config(format!("test fraction {f} is not in [0, 1)")))
    }
}

fn ingest(a: IngestArgs, s: &mut Settings) -> Result<()> {
    let input = s.path("input", a.input)?;
    let out = s.path("out", a.out)?;
    let min_size = s.value(
        "min_basket_size",
        a.min_basket_size,
        corpus::DEFAULT_MIN_BASKET_SIZE,
    )?;
    let vocab_size = s.value("vocab_size", a.vocab_size, corpus::DEFAULT_VOCAB_SIZE)?;
    let fraction = s.value("test_fraction", a.test_fraction, DEFAULT_TEST_FRACTION)?;
    let seed = s.seed("seed", a.seed)?;
    check_fraction(fraction)?;
    if vocab_size == 0 {
        return Err(Error::Config("vocabulary size must be at least 1".into()));
    }

    let baskets = corpus::read_baskets(artifacts::open(&input)?)?;
    let vocab = Arc::new(corpus::build_vocabulary(&baskets, vocab_size)?);
    let (corpus, summary) = corpus::ingest_baskets(&baskets, vocab, min_size)?;
    write_corpus_bundle(&out, &corpus, fraction, seed)?;
    artifacts::write_json(&out.join("ingest.json"), &summary)?;

    let mut m = s.manifest("ingest");
    m.seeds.insert("split".into(), seed);
    add_input(&mut m, "input", &input)?;
    m.write(&out)?;
    println!(
        "kept {} baskets, dropped {} small, {} out-of-vocabulary tokens, V={}",
        summary.kept,
        summary.dropped_small,
        summary.tokens_dropped_oov,
        corpus.vocab_size()
    );
    Ok(())
}

fn synth(a: SynthArgs, s: &mut Settings) -> Result<()> {
    let out = s.path("out", a.out)?;
    let topics = s.value("topics", a.topics, 5)?;
    let vocab_size = s.value("vocab_size", a.vocab_size, 50)?;
    let docs = s.value("docs", a.docs, 2000)?;
    let len_min = s.value("doc_len_min", a.doc_len_min, 5)?;
    let len_max = s.value("doc_len_max", a.doc_len_max, 12)?;
    let alpha = s.value("alpha", a.alpha, 1.0)?;
    let concentration = s.optional("concentration", a.concentration)?;
    let min_size = s.value(
        "min_basket_size",
        a.min_basket_size,
        corpus::DEFAULT_MIN_BASKET_SIZE,
    )?;
    let fraction = s.value("test_fraction", a.test_fraction, DEFAULT_TEST_FRACTION)?;
    let seed = s.seed("seed", a.seed)?;
    check_fraction(fraction)?;

    let mut spec = SyntheticSpec::new(topics, vocab_size, docs, seed);
    spec.doc_len = if len_min == len_max {
        DocLength::Fixed(len_min)
    } else {
        DocLength::Uniform {
            min: len_min,
            max: len_max,
        }
    };
    spec.alpha = vec![alpha; topics];
    spec.min_basket_size = min_size;
    if let Some(c) = concentration {
        spec.phi = PhiSpec::Dirichlet { concentration: c };
    }
    let (corpus, truth) = corpus::generate_synthetic(&spec)?;
    write_corpus_bundle(&out, &corpus, fraction, corpus_split_seed(seed))?;
    artifacts::write_file(&out.join("truth_phi.csv"), |w| {
        artifacts::write_matrix_csv(w, &truth.phi)
    })?;
    artifacts::write_json(&out.join("truth.json"), &spec)?;

    let mut m = s.manifest("synth");
    m.seeds.insert("generator".into(), seed);
    m.seeds.insert("split".into(), corpus_split_seed(seed));
    m.write(&out)?;
    println!(
        "generated {} documents, {} tokens, K={topics}, V={vocab_size}",
        corpus.num_docs(),
        corpus.num_tokens()
    );
    Ok(())
}

fn corpus_split_seed(seed: u64) -> u64 {
    crate::rng::mix(seed, 1)
}

fn train(a: TrainArgs, s: &mut Settings) -> Result<()> {
    let corpus_path = s.path("corpus", a.corpus)?;
    let out = s.path("out", a.out)?;
    let topics: usize = s.required("topics", a.topics)?;
    let alpha_sum = s.value("alpha_sum", a.alpha_sum, gibbs::DEFAULT_ALPHA_SUM)?;
    let beta = s.value("beta", a.beta, gibbs::DEFAULT_BETA)?;
    let defaults = ChainConfig::default();
    let cfg = ChainConfig {
        iterations: s.value("iterations", a.iterations, defaults.iterations)?,
        burn_in: s.value("burn_in", a.burn_in, defaults.burn_in)?,
        lag: s.value("lag", a.lag, defaults.lag)?,
        chains: s.value("chains", a.chains, defaults.chains)?,
        seed: s.seed("seed", a.seed)?,
        loglik_every: s.value("loglik_every", a.loglik_every, defaults.loglik_every)?,
        keep_theta: s.switch("keep_theta", a.keep_theta)?,
    };
    let offset = s.value("chain_offset", a.chain_offset, 0)?;
    cfg.validate()?;

    let corpus = artifacts::read_corpus(&corpus_path)?;
    let hp = HyperParams::symmetric(topics, alpha_sum, beta, corpus.vocab_size())?;
    let outputs = gibbs::run_chains(&corpus, &hp, &cfg, offset)?;
    artifacts::write_chain_outputs(&out, &outputs)?;

    let mut m = s.manifest("train");
    m.seeds.insert("base".into(), cfg.seed);
    for o in &outputs {
        m.seeds.insert(
            format!("chain_{}", o.chain_id),
            crate::rng::chain_seed(cfg.seed, o.chain_id),
        );
    }
    add_input(&mut m, "corpus", &corpus_path)?;
    m.write(&out)?;
    let n: usize = outputs.iter().map(|o| o.samples.len()).sum();
    println!(
        "recorded {n} samples from {} chains in {}",
        outputs.len(),
        out.display()
    );
    Ok(())
}

struct EvalInputs {
    test: Corpus,
    stats: corpus::CoocStats,
    opts: EvalOptions,
}

/// Default test/co-occurrence files: `test.jsonl` and `cooc.csv` next to the
/// training corpus named in a run directory's manifest.
fn inputs_near_training_corpus(run_dir: &Path) -> Option<(PathBuf, PathBuf)> {
    let m: RunManifest = artifacts::read_json(&run_dir.join(artifacts::MANIFEST_FILE)).ok()?;
    let corpus = PathBuf::from(m.config.get("corpus")?);
    let dir = corpus.parent()?;
    Some((dir.join("test.jsonl"), dir.join("cooc.csv")))
}

fn eval_inputs(
    a: HeldoutArgs,
    s: &mut Settings,
    run_dir: Option<&Path>,
    manifest: &mut RunManifest,
) -> Result<EvalInputs> {
    let fallback = run_dir.and_then(inputs_near_training_corpus);
    let test_flag = a.test.or_else(|| {
        (!s.file.contains_key("test"))
            .then(|| fallback.as_ref().map(|f| f.0.clone()))
            .flatten()
    });
    let stats_flag = a.stats.or_else(|| {
        (!s.file.contains_key("stats"))
            .then(|| fallback.as_ref().map(|f| f.1.clone()))
            .flatten()
    });
    let test_path = s.path("test", test_flag)?;
    let stats_path = s.path("stats", stats_flag)?;
    let heldout = HeldoutConfig {
        particles: s.value("particles", a.particles, heldout::DEFAULT_PARTICLES)?,
        seed: s.seed("heldout_seed", a.seed)?,
        resample_previous: !s.switch("no_resample", a.no_resample)?,
    };
    heldout.validate()?;
    let opts = EvalOptions {
        heldout,
        top_n: s.value("top_n", a.top_n, metrics::DEFAULT_TOP_N)?,
        alpha_sum: s.value("alpha_sum", a.alpha_sum, gibbs::DEFAULT_ALPHA_SUM)?,
    };
    if opts.top_n < 2 {
        return Err(Error::Config("top-n must be at least 2".into()));
    }
    let test = artifacts::read_corpus(&test_path)?;
    let stats = artifacts::read_stats(&stats_path)?;
    add_input(manifest, "test", &test_path)?;
    add_input(manifest, "stats", &stats_path)?;
    manifest.seeds.insert("heldout".into(), heldout.seed);
    Ok(EvalInputs { test, stats, opts })
}

fn evaluate(a: EvaluateArgs, s: &mut Settings) -> Result<()> {
    let samples_dir = s.optional_path("samples", a.samples)?;
    let model_dir = s.optional_path("model", a.model)?;
    let rep_dir = s.optional_path("replication_model", a.replication_model)?;
    let out = s.path("out", a.out)?;
    let mut m = RunManifest::new("evaluate");
    match (samples_dir, model_dir) {
        (Some(dir), None) => {
            let inputs = eval_inputs(a.heldout, s, Some(&dir), &mut m)?;
            let samples = artifacts::read_samples(&dir)?;
            add_input(&mut m, "samples", &dir)?;
            let report =
                summary::evaluate_samples(&samples, &inputs.test, &inputs.stats, &inputs.opts)?;
            artifacts::create_dir(&out)?;
            for (sample, ev) in samples.iter().zip(&report.samples) {
                let stem = artifacts::sample_stem(sample.chain_id, sample.iteration);
                artifacts::write_file(&out.join(format!("quality_{stem}.csv")), |w| {
                    artifacts::write_quality_csv(w, &ev.topics)
                })?;
            }
            artifacts::write_json(&out.join("summary.json"), &report)?;
            println!(
                "{} samples: perplexity {:.4} ± {:.4}, NPMI {:.4}",
                report.samples.len(),
                report.perplexity.mean,
                report.perplexity.se,
                report.npmi.mean
            );
        }
        (None, Some(dir)) => {
            let inputs = eval_inputs(a.heldout, s, None, &mut m)?;
            let model = artifacts::read_model(&dir)?;
            add_input(&mut m, "model", &dir)?;
            let rep = match &rep_dir {
                Some(r) => {
                    add_input(&mut m, "replication_model", r)?;
                    Some(artifacts::read_model(r)?)
                }
                None => None,
            };
            let report = summary::evaluate_model(
                &model,
                &inputs.test,
                &inputs.stats,
                rep.as_ref(),
                &inputs.opts,
            )?;
            artifacts::create_dir(&out)?;
            artifacts::write_file(&out.join("quality.csv"), |w| {
                artifacts::write_quality_csv(w, &report.topics)
            })?;
            artifacts::write_json(&out.join("summary.json"), &report)?;
            println!(
                "{} clustered topics: perplexity {:.4} ± {:.4}, NPMI {:.4}",
                report.n_topics, report.perplexity.mean, report.perplexity.se, report.npmi.mean
            );
        }
        _ => {
            return Err(Error::Config(
                "give exactly one of --samples or --model".into(),
            ))
        }
    }
    m.config = s.resolved().clone();
    m.write(&out)
}

fn cluster(a: ClusterArgs, s: &mut Settings) -> Result<()> {
    let samples_dir = s.path("samples", a.samples)?;
    let out = s.path("out", a.out)?;
    let threshold = s.value("threshold", a.threshold, DEFAULT_THRESHOLD)?;
    let min_size = s.value("min_size", a.min_size, DEFAULT_MIN_SIZE)?;
    let mode = MergeMode::from_allow_within(s.switch("within_sample", a.within_sample)?);
    let corpus_path = s.optional_path("corpus", a.corpus)?;
    let top_n = s.value("top_n", a.top_n, metrics::DEFAULT_TOP_N)?;

    let samples = artifacts::read_samples(&samples_dir)?;
    let pool = TopicPool::from_samples(&samples)?;
    let dist = summary::pool_distances(&pool)?;
    let clustering = summary::agglomerate(&pool, &dist, threshold, mode)?;
    let model = summary::filter_clusters(&clustering, min_size)?;
    artifacts::write_model(&out, &model, &pool)?;
    artifacts::write_file(&out.join("merges.csv"), |w| {
        writeln!(w, "kept,absorbed,distance,size")?;
        for step in &clustering.merges {
            writeln!(
                w,
                "{},{},{},{}",
                step.kept,
                step.absorbed,
                crate::fmt::sig9(step.distance),
                step.size
            )?;
        }
        Ok(())
    })?;

    let mut m = s.manifest("cluster");
    add_input(&mut m, "samples", &samples_dir)?;
    if let Some(p) = corpus_path {
        let corpus = artifacts::read_corpus(&p)?;
        write_cards(&out, &cards::model_cards(&model, corpus.vocab(), top_n)?)?;
        add_input(&mut m, "corpus", &p)?;
    }
    m.write(&out)?;
    println!(
        "{} topics pooled from {} samples -> {} clusters, {} with at least {min_size} members",
        pool.len(),
        pool.num_samples(),
        clustering.clusters.len(),
        model.len()
    );
    Ok(())
}

fn write_cards(out: &Path, cards: &[cards::TopicCard]) -> Result<()> {
    artifacts::write_file(&out.join("cards.txt"), |w| {
        w.write_all(cards::render_text(cards).as_bytes())?;
        Ok(())
    })?;
    artifacts::write_json(&out.join("cards.json"), &cards)
}

fn sweep(a: SweepArgs, s: &mut Settings) -> Result<()> {
    let samples_dir = s.path("samples", a.samples)?;
    let rep_dir = s.optional_path("replication", a.replication)?;
    let out = s.path("out", a.out)?;
    let thresholds =
        parse_thresholds(&s.value("thresholds", a.thresholds, DEFAULT_THRESHOLDS.to_string())?)?;
    let min_sizes =
        parse_sizes(&s.value("min_sizes", a.min_sizes, DEFAULT_MIN_SIZES.to_string())?)?;
    let mode = MergeMode::from_allow_within(s.switch("within_sample", a.within_sample)?);
    let mut m = RunManifest::new("sweep");
    let inputs = eval_inputs(a.heldout, s, Some(&samples_dir), &mut m)?;
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Config(format!("threshold {t} is not in [0, 1]")));
    }
    if min_sizes.contains(&0) {
        return Err(Error::Config(
            "minimum cluster sizes must be at least 1".into(),
        ));
    }

    let pool = TopicPool::from_samples(&artifacts::read_samples(&samples_dir)?)?;
    add_input(&mut m, "samples", &samples_dir)?;
    let rep_pool = match &rep_dir {
        Some(d) => {
            add_input(&mut m, "replication", d)?;
            Some(TopicPool::from_samples(&artifacts::read_samples(d)?)?)
        }
        None => None,
    };
    let opts = SweepOptions {
        thresholds,
        min_sizes,
        mode,
        eval: inputs.opts,
    };
    let report = summary::sweep(&pool, rep_pool.as_ref(), &inputs.test, &inputs.stats, &opts)?;
    artifacts::create_dir(&out)?;
    artifacts::write_file(&out.join("sweep.csv"), |w| report.write_csv(w))?;
    artifacts::write_json(&out.join("sweep.json"), &report)?;
    m.config = s.resolved().clone();
    m.write(&out)?;
    println!(
        "swept {} cells over a pool of {} topics into {}",
        report.cells.len(),
        pool.len(),
        out.join("sweep.csv").display()
    );
    Ok(())
}

fn report(a: ReportArgs, s: &mut Settings) -> Result<()> {
    let sweep_path = s.optional_path("sweep", a.sweep)?;
    let model_dir = s.optional_path("model", a.model)?;
    let corpus_path = s.optional_path("corpus", a.corpus)?;
    let out = s.path("out", a.out)?;
    let svg = s.switch("svg", a.svg)?;
    let top_n = s.value("top_n", a.top_n, metrics::DEFAULT_TOP_N)?;
    if sweep_path.is_none() && model_dir.is_none() {
        return Err(Error::Config("give --sweep, --model, or both".into()));
    }
    artifacts::create_dir(&out)?;
    let mut m = s.manifest("report");

    if let Some(p) = &sweep_path {
        let rows = summary::read_sweep_csv(artifacts::open(p)?)?;
        add_input(&mut m, "sweep", p)?;
        write_sweep_tables(&out, &rows, svg)?;
        println!("wrote plot tables for {} sweep rows", rows.len());
    }
    if let Some(dir) = &model_dir {
        let corpus_path = corpus_path
            .ok_or_else(|| Error::Config("--corpus is required to label topic cards".into()))?;
        let model = artifacts::read_model(dir)?;
        let corpus = artifacts::read_corpus(&corpus_path)?;
        let cards = cards::model_cards(&model, corpus.vocab(), top_n)?;
        write_cards(&out, &cards)?;
        add_input(&mut m, "model", dir)?;
        add_input(&mut m, "corpus", &corpus_path)?;
        println!("wrote {} topic cards", cards.len());
    }
    m.write(&out)
}

/// One table per metric (`plot_<metric>.csv`) plus cluster counts, each
/// with one row per grid cell; optionally one chart per table with a line
/// per minimum size.
fn write_sweep_tables(out: &Path, rows: &[summary::SweepCsvRow], svg: bool) -> Result<()> {
    use crate::fmt::sig9;
    let mut metrics: Vec<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
    metrics.dedup();
    metrics.sort_unstable();
    metrics.dedup();
    let sizes = {
        let mut v: Vec<usize> = rows.iter().map(|r| r.min_size).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let opt = |x: Option<f64>| x.map(sig9).unwrap_or_default();
    for metric in &metrics {
        let sel: Vec<&summary::SweepCsvRow> = rows.iter().filter(|r| r.metric == *metric).collect();
        artifacts::write_file(&out.join(format!("plot_{metric}.csv")), |w| {
            writeln!(w, "threshold,min_size,mean,stderr,n_clusters")?;
            for r in &sel {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    sig9(r.threshold),
                    r.min_size,
                    opt(r.mean),
                    opt(r.stderr),
                    r.n_clusters
                )?;
            }
            Ok(())
        })?;
        if svg {
            let series = sizes
                .iter()
                .map(|&k| plot::Series {
                    name: format!("min size {k}"),
                    points: sel
                        .iter()
                        .filter(|r| r.min_size == k)
                        .filter_map(|r| r.mean.map(|y| (r.threshold, y)))
                        .collect(),
                })
                .collect::<Vec<_>>();
            let chart = plot::line_chart(metric, "cosine distance threshold", metric, &series);
            artifacts::write_file(&out.join(format!("plot_{metric}.svg")), |w| {
                w.write_all(chart.as_bytes())?;
                Ok(())
            })?;
        }
    }
    let first = metrics.first().copied();
    let counts: Vec<&summary::SweepCsvRow> = rows
        .iter()
        .filter(|r| Some(r.metric.as_str()) == first)
        .collect();
    artifacts::write_file(&out.join("plot_n_clusters.csv"), |w| {
        writeln!(w, "threshold,min_size,n_clusters")?;
        for r in &counts {
            writeln!(w, "{},{},{}", sig9(r.threshold), r.min_size, r.n_clusters)?;
        }
        Ok(())
    })?;
    if svg {
        let series = sizes
            .iter()
            .map(|&k| plot::Series {
                name: format!("min size {k}"),
                points: counts
                    .iter()
                    .filter(|r| r.min_size == k)
                    .map(|r| (r.threshold, r.n_clusters as f64))
                    .collect(),
            })
            .collect::<Vec<_>>();
        let chart = plot::line_chart("clusters", "cosine distance threshold", "clusters", &series);
        artifacts::write_file(&out.join("plot_n_clusters.svg"), |w| {
            w.write_all(chart.as_bytes())?;
            Ok(())
        })?;
    }
    Ok(())
}

/// R-hat of one run directory's traces after discarding a leading fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagRow {
    pub model: String,
    pub chains: usize,
    pub points: usize,
    pub rhat: f64,
}

impl DiagRow {
    pub fn passes(&self) -> bool {
        self.rhat < RHAT_ACCEPTABLE
    }
}

pub fn diagnose(dir: &Path, discard: f64) -> Result<DiagRow> {
    let traces = artifacts::read_traces(dir)?;
    if traces.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{} holds {} chain trace(s); R-hat needs at least 2",
            dir.display(),
            traces.len()
        )));
    }
    let kept: Vec<Vec<f64>> = traces
        .values()
        .map(|t| {
            let skip = (t.len() as f64 * discard).floor() as usize;
            t[skip..].iter().map(|p| p.loglik).collect()
        })
        .collect();
    let points = kept.iter().map(Vec::len).min().unwrap_or(0);
    Ok(DiagRow {
        model: dir.display().to_string(),
        chains: kept.len(),
        points,
        rhat: metrics::rhat(&kept)?,
    })
}

fn diag(a: DiagArgs, s: &mut Settings) -> Result<()> {
    let discard = s.value("discard", a.discard, DEFAULT_DISCARD)?;
    let out = s.optional_path("out", a.out)?;
    if !(0.0..1.0).contains(&discard) {
        return Err(Error::Config(format!(
            "discard fraction {discard} is not in [0, 1)"
        )));
    }
    let rows = a
        .traces
        .iter()
        .map(|d| diagnose(d, discard))
        .collect::<Result<Vec<_>>>()?;
    let mut table = String::from("model,chains,points,rhat,status\n");
    for r in &rows {
        table.push_str(&format!(
            "{},{},{},{},{}\n",
            artifacts::csv_field(&r.model),
            r.chains,
            r.points,
            crate::fmt::sig9(r.rhat),
            if r.passes() { "pass" } else { "fail" }
        ));
    }
    print!("{table}");
    if let Some(p) = out {
        artifacts::write_file(&p, |w| {
            w.write_all(table.as_bytes())?;
            Ok(())
        })?;
        let mut m = s.manifest("diag");
        for (i, d) in a.traces.iter().enumerate() {
            add_input(&mut m, &format!("traces_{i}"), d)?;
        }
        artifacts::write_json(&p.with_extension("manifest.json"), &m)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_grammar() {
        let t = parse_thresholds(DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(t, summary::default_thresholds());
        assert_eq!(parse_thresholds("0.1, 0.35").unwrap(), vec![0.1, 0.35]);
        assert!(parse_thresholds("0:1").is_err());
        assert!(parse_thresholds("a").is_err());
        assert_eq!(parse_sizes(DEFAULT_MIN_SIZES).unwrap(), vec![1, 5, 10, 20]);
    }

    #[test]
    fn config_precedence() {
        let file = parse_config("# run\ntopics = 7\nburn-in=3\n\nbeta = 0.5 # trailing\n").unwrap();
        let mut s = Settings::new(file);
        assert_eq!(s.value("topics", Some(9usize), 1).unwrap(), 9);
        assert_eq!(s.value("burn_in", None, 1usize).unwrap(), 3);
        assert_eq!(s.value("beta", None, 0.01).unwrap(), 0.5);
        assert_eq!(s.value("lag", None, 4usize).unwrap(), 4);
        assert_eq!(s.resolved()["topics"], "9");
        assert_eq!(s.resolved()["lag"], "4");
        assert!(parse_config("nonsense").is_err());
        let mut bad = Settings::new(parse_config("topics = x").unwrap());
        assert!(matches!(
            bad.value("topics", None, 1usize),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn manifest_is_a_config() {
        let mut s = Settings::new(BTreeMap::new());
        s.value("topics", Some(4usize), 1).unwrap();
        let text = serde_json::to_string(&s.manifest("train")).unwrap();
        assert_eq!(parse_config(&text).unwrap()["topics"], "4");
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(main_with_args(["topicforge", "train", "--bogus"]), 2);
        assert_eq!(main_with_args(["topicforge", "train"]), 2);
        assert_eq!(main_with_args(["topicforge", "--version"]), 0);
    }
}
