//! On-disk formats for run outputs.
//!
//! Every numeric CSV field is written with 9 significant digits and every
//! row ends with a newline. JSON files are pretty-printed with a trailing
//! newline. Nothing written here depends on wall-clock time, so rerunning a
//! command with the same inputs reproduces its outputs byte for byte.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CoocStats, Corpus};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::gibbs::{ChainOutput, PosteriorSample, TracePoint};
use crate::heldout::{DocResult, PerplexityReport};
use crate::matrix::Matrix;
use crate::metrics::{MeanSe, TopicQuality, TopicRef};
use crate::summary::{ClusteredModel, MergeMode, SampleOrigin, TopicCluster, TopicPool};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CENTROIDS_FILE: &str = "centroids.csv";
pub const MODEL_FILE: &str = "model.json";

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::file(path, e))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::file(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::file(path, e))
}

/// Writes with `f` into `path`, flushing before returning.
pub fn write_file<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    Corpus::read_jsonl(open(path)?)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_file(path, |w| corpus.write_jsonl(w))
}

pub fn read_stats(path: &Path) -> Result<CoocStats> {
    CoocStats::read_csv(open(path)?)
}

pub fn write_stats(path: &Path, stats: &CoocStats) -> Result<()> {
    write_file(path, |w| stats.write_csv(w))
}

/// Quotes a CSV field when it contains a separator, quote or line break.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Splits one CSV line, honoring double-quoted fields.
pub fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut field = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                field.push('"');
                chars.next();
            }
            ('"', true) => quoted = false,
            ('"', false) if field.is_empty() => quoted = true,
            (',', false) => out.push(std::mem::take(&mut field)),
            _ => field.push(c),
        }
    }
    out.push(field);
    out
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Record {
        line,
        message: format!("not a number: {s:?}"),
    })
}

fn parse_opt_f64(s: &str, line: usize) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(s, line).map(Some)
    }
}

fn opt_sig9(x: Option<f64>) -> String {
    x.map(sig9).unwrap_or_default()
}

fn expect_header(line: Option<std::io::Result<String>>, header: &str) -> Result<()> {
    match line.transpose()? {
        Some(l) if l.trim_end() == header => Ok(()),
        Some(_) => Err(Error::Record {
            line: 1,
            message: format!("expected header {header:?}"),
        }),
        None => Err(Error::EmptyInput),
    }
}

/// Writes a matrix as headerless CSV, one row per line.
pub fn write_matrix_csv<W: Write>(mut w: W, m: &Matrix) -> Result<()> {
    let mut line = String::new();
    for row in m.iter_rows() {
        line.clear();
        for (i, x) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&sig9(*x));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn read_matrix_csv<R: BufRead>(reader: R) -> Result<Matrix> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| parse_f64(s, i + 1))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Matrix::from_rows(&rows)
}

/// JSON sidecar of one recorded sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub chain_id: u64,
    pub iteration: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub seed: u64,
    pub topics: usize,
    pub vocab_size: usize,
    pub has_theta: bool,
}

pub fn sample_stem(chain_id: u64, iteration: usize) -> String {
    format!("sample_c{chain_id:03}_i{iteration:08}")
}

pub fn trace_file(chain_id: u64) -> String {
    format!("trace_c{chain_id:03}.csv")
}

pub fn write_sample(dir: &Path, s: &PosteriorSample) -> Result<()> {
    let stem = sample_stem(s.chain_id, s.iteration);
    write_file(&dir.join(format!("{stem}.csv")), |w| {
        write_matrix_csv(w, &s.phi)
    })?;
    if let Some(theta) = &s.theta {
        write_file(&dir.join(format!("{stem}_theta.csv")), |w| {
            write_matrix_csv(w, theta)
        })?;
    }
    write_json(
        &dir.join(format!("{stem}.json")),
        &SampleMeta {
            chain_id: s.chain_id,
            iteration: s.iteration,
            alpha: s.alpha.clone(),
            beta: s.beta.clone(),
            seed: s.seed,
            topics: s.topics(),
            vocab_size: s.vocab_size(),
            has_theta: s.theta.is_some(),
        },
    )
}

pub fn write_trace<W: Write>(mut w: W, trace: &[TracePoint]) -> Result<()> {
    writeln!(w, "iteration,loglik")?;
    for p in trace {
        writeln!(w, "{},{}", p.iteration, sig9(p.loglik))?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<TracePoint>> {
    let mut lines = reader.lines();
    expect_header(lines.next(), "iteration,loglik")?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 2;
        let (it, ll) = line.split_once(',').ok_or_else(|| Error::Record {
            line: n,
            message: "expected iteration,loglik".into(),
        })?;
        out.push(TracePoint {
            iteration: it.trim().parse().map_err(|_| Error::Record {
                line: n,
                message: format!("bad iteration {it:?}"),
            })?,
            loglik: parse_f64(ll, n)?,
        });
    }
    Ok(out)
}

/// Writes every sample and trace of `outputs` into `dir`.
pub fn write_chain_outputs(dir: &Path, outputs: &[ChainOutput]) -> Result<()> {
    create_dir(dir)?;
    for out in outputs {
        for s in &out.samples {
            write_sample(dir, s)?;
        }
        write_file(&dir.join(trace_file(out.chain_id)), |w| {
            write_trace(w, &out.trace)
        })?;
    }
    Ok(())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::file(dir, err)))
        .collect::<Result<_>>()?;
    paths.sort();
    Ok(paths)
}

fn file_name(p: &Path) -> &str {
    p.file_name().and_then(|n| n.to_str()).unwrap_or("")
}

/// Loads all samples of a run directory, ordered by chain then iteration.
pub fn read_samples(dir: &Path) -> Result<Vec<PosteriorSample>> {
    let mut out = Vec::new();
    for path in sorted_entries(dir)? {
        let name = file_name(&path);
        if !(name.starts_with("sample_") && name.ends_with(".json")) {
            continue;
        }
        let meta: SampleMeta = read_json(&path)?;
        let stem = sample_stem(meta.chain_id, meta.iteration);
        let phi = read_matrix_csv(open(&dir.join(format!("{stem}.csv")))?)?;
        if phi.rows() != meta.topics || phi.cols() != meta.vocab_size {
            return Err(Error::InvalidInput(format!(
                "{stem}: matrix is {}x{}, sidecar says {}x{}",
                phi.rows(),
                phi.cols(),
                meta.topics,
                meta.vocab_size
            )));
        }
        let theta = if meta.has_theta {
            Some(read_matrix_csv(open(
                &dir.join(format!("{stem}_theta.csv")),
            )?)?)
        } else {
            None
        };
        out.push(PosteriorSample {
            phi,
            theta,
            alpha: meta.alpha,
            beta: meta.beta,
            chain_id: meta.chain_id,
            iteration: meta.iteration,
            seed: meta.seed,
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no samples found in {}",
            dir.display()
        )));
    }
    out.sort_by_key(|s| (s.chain_id, s.iteration));
    Ok(out)
}

/// Loads the log-likelihood traces of a run directory, keyed by chain id.
pub fn read_traces(dir: &Path) -> Result<BTreeMap<u64, Vec<TracePoint>>> {
    let mut out = BTreeMap::new();
    for path in sorted_entries(dir)? {
        let name = file_name(&path);
        let Some(id) = name
            .strip_prefix("trace_c")
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|r| r.parse::<u64>().ok())
        else {
            continue;
        };
        out.insert(id, read_trace(open(&path)?)?);
    }
    Ok(out)
}

pub fn write_heldout_csv<W: Write>(mut w: W, docs: &[DocResult]) -> Result<()> {
    writeln!(w, "doc_id,tokens,loglik")?;
    for d in docs {
        writeln!(
            w,
            "{},{},{}",
            csv_field(&d.doc_id),
            d.tokens,
            sig9(d.loglik)
        )?;
    }
    Ok(())
}

pub fn read_heldout_csv<R: BufRead>(reader: R) -> Result<Vec<DocResult>> {
    let mut lines = reader.lines();
    expect_header(lines.next(), "doc_id,tokens,loglik")?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 2;
        let f = split_csv_line(&line);
        if f.len() != 3 {
            return Err(Error::Record {
                line: n,
                message: "expected doc_id,tokens,loglik".into(),
            });
        }
        out.push(DocResult {
            doc_id: f[0].clone(),
            tokens: f[1].trim().parse().map_err(|_| Error::Record {
                line: n,
                message: "bad token count".into(),
            })?,
            loglik: parse_f64(&f[2], n)?,
        });
    }
    Ok(out)
}

/// Summary JSON of a held-out evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutSummary {
    pub perplexity: f64,
    pub stderr: f64,
    pub tokens: usize,
    pub docs: usize,
    pub particles: usize,
    pub seed: u64,
}

impl From<&PerplexityReport> for HeldoutSummary {
    fn from(r: &PerplexityReport) -> Self {
        HeldoutSummary {
            perplexity: r.perplexity,
            stderr: r.stderr,
            tokens: r.tokens,
            docs: r.docs.len(),
            particles: r.particles,
            seed: r.seed,
        }
    }
}

/// Writes `<stem>.csv` and `<stem>.json` for a held-out evaluation.
pub fn write_heldout(dir: &Path, stem: &str, report: &PerplexityReport) -> Result<()> {
    write_file(&dir.join(format!("{stem}.csv")), |w| {
        write_heldout_csv(w, &report.docs)
    })?;
    write_json(
        &dir.join(format!("{stem}.json")),
        &HeldoutSummary::from(report),
    )
}

pub fn write_quality_csv<W: Write>(mut w: W, topics: &[TopicQuality]) -> Result<()> {
    writeln!(w, "topic_index,npmi,cd_min,credibility")?;
    for (i, q) in topics.iter().enumerate() {
        writeln!(
            w,
            "{i},{},{},{}",
            sig9(q.npmi),
            opt_sig9(q.cd_min),
            opt_sig9(q.credibility)
        )?;
    }
    Ok(())
}

pub fn read_quality_csv<R: BufRead>(reader: R) -> Result<Vec<TopicQuality>> {
    let mut lines = reader.lines();
    expect_header(lines.next(), "topic_index,npmi,cd_min,credibility")?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 || f[0].trim().parse::<usize>().ok() != Some(out.len()) {
            return Err(Error::Record {
                line: n,
                message: "expected topic_index,npmi,cd_min,credibility in topic order".into(),
            });
        }
        out.push(TopicQuality {
            npmi: parse_f64(f[1], n)?,
            cd_min: parse_opt_f64(f[2], n)?,
            credibility: parse_opt_f64(f[3], n)?,
        });
    }
    Ok(out)
}

/// Aggregate topic quality with means and standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualitySummary {
    pub topics: usize,
    pub npmi: Option<MeanSe>,
    pub cd_min: Option<MeanSe>,
    pub credibility: Option<MeanSe>,
}

impl QualitySummary {
    pub fn from_topics(topics: &[TopicQuality]) -> Self {
        let col = |f: &dyn Fn(&TopicQuality) -> Option<f64>| {
            crate::metrics::mean_se(&topics.iter().filter_map(f).collect::<Vec<_>>())
        };
        QualitySummary {
            topics: topics.len(),
            npmi: col(&|q| Some(q.npmi)),
            cd_min: col(&|q| q.cd_min),
            credibility: col(&|q| q.credibility),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MemberRecord {
    sample_id: usize,
    topic_index: usize,
    chain_id: u64,
    iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClusterRecord {
    size: usize,
    pool_indices: Vec<usize>,
    members: Vec<MemberRecord>,
}

/// JSON manifest stored next to a clustered model's centroid matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelRecord {
    threshold: f64,
    min_size: usize,
    mode: MergeMode,
    num_samples: usize,
    vocab_size: usize,
    clusters: Vec<ClusterRecord>,
}

/// Writes `centroids.csv` and `model.json` into `dir`.
pub fn write_model(dir: &Path, model: &ClusteredModel, pool: &TopicPool) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join(CENTROIDS_FILE), |w| {
        write_matrix_csv(w, &model.centroids())
    })?;
    let clusters = model
        .clusters
        .iter()
        .map(|c| ClusterRecord {
            size: c.size(),
            pool_indices: c.pool_indices.clone(),
            members: c
                .members
                .iter()
                .map(|m| {
                    let SampleOrigin {
                        chain_id,
                        iteration,
                    } = pool.origin(m.sample_id);
                    MemberRecord {
                        sample_id: m.sample_id,
                        topic_index: m.topic_index,
                        chain_id,
                        iteration,
                    }
                })
                .collect(),
        })
        .collect();
    write_json(
        &dir.join(MODEL_FILE),
        &ModelRecord {
            threshold: model.threshold,
            min_size: model.min_size,
            mode: model.mode,
            num_samples: model.num_samples,
            vocab_size: pool.vocab_size(),
            clusters,
        },
    )
}

pub fn read_model(dir: &Path) -> Result<ClusteredModel> {
    let record: ModelRecord = read_json(&dir.join(MODEL_FILE))?;
    let centroids = read_matrix_csv(open(&dir.join(CENTROIDS_FILE))?)?;
    if centroids.rows() != record.clusters.len() || centroids.cols() != record.vocab_size {
        return Err(Error::InvalidInput(format!(
            "{}: centroid matrix does not match the manifest",
            dir.display()
        )));
    }
    let clusters = record
        .clusters
        .into_iter()
        .zip(centroids.iter_rows())
        .map(|(c, row)| TopicCluster {
            members: c
                .members
                .iter()
                .map(|m| TopicRef {
                    sample_id: m.sample_id,
                    topic_index: m.topic_index,
                })
                .collect(),
            pool_indices: c.pool_indices,
            centroid: row.to_vec(),
        })
        .collect();
    Ok(ClusteredModel {
        clusters,
        threshold: record.threshold,
        min_size: record.min_size,
        mode: record.mode,
        num_samples: record.num_samples,
    })
}

/// SHA-256 of a file, or of a directory's regular files in name order
/// (each hashed as name, NUL, contents), skipping run manifests.
pub fn digest(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let meta = fs::metadata(path).map_err(|e| Error::file(path, e))?;
    if meta.is_dir() {
        for p in sorted_entries(path)? {
            if !p.is_file() || file_name(&p) == MANIFEST_FILE {
                continue;
            }
            h.update(file_name(&p).as_bytes());
            h.update([0]);
            hash_file(&p, &mut h)?;
        }
    } else {
        hash_file(path, &mut h)?;
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn hash_file(path: &Path, h: &mut Sha256) -> Result<()> {
    let mut f = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::file(path, e))?;
        if n == 0 {
            return Ok(());
        }
        h.update(&buf[..n]);
    }
}

/// Provenance record written by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved settings, usable as a config file for a rerun.
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 digests of the inputs, keyed by config name.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: BTreeMap::new(),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}
