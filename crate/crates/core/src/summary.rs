//! Posterior summary by clustering topics across draws.
//!
//! Topics from many posterior samples are pooled and merged bottom-up with
//! average-linkage agglomerative clustering on cosine distance. Merges stop
//! at a distance threshold and, in constrained mode, never join two topics
//! from the same sample, so a cluster's size counts how many draws
//! contain that topic (its recurrence). Each cluster is summarized by the
//! mean of its members.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CoocStats, Corpus};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::gibbs::PosteriorSample;
use crate::heldout::{self, HeldoutConfig};
use crate::matrix::Matrix;
use crate::metrics::{self, mean_se, MeanSe, TopicQuality, TopicRef};

/// Where a pooled sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOrigin {
    pub chain_id: u64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub topic: TopicRef,
    pub vector: Vec<f64>,
}

/// Bag of topics drawn from several posterior samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicPool {
    entries: Vec<PoolEntry>,
    origins: Vec<SampleOrigin>,
    topics_per_sample: usize,
    vocab_size: usize,
}

impl TopicPool {
    pub fn from_samples(samples: &[PosteriorSample]) -> Result<Self> {
        let origins = samples
            .iter()
            .map(|s| SampleOrigin {
                chain_id: s.chain_id,
                iteration: s.iteration,
            })
            .collect();
        let phis: Vec<&Matrix> = samples.iter().map(|s| &s.phi).collect();
        Self::build(&phis, origins)
    }

    /// Pool from bare topic matrices; origins are numbered by position.
    pub fn from_matrices(samples: &[Matrix]) -> Result<Self> {
        let origins = (0..samples.len())
            .map(|i| SampleOrigin {
                chain_id: 0,
                iteration: i,
            })
            .collect();
        let refs: Vec<&Matrix> = samples.iter().collect();
        Self::build(&refs, origins)
    }

    fn build(phis: &[&Matrix], origins: Vec<SampleOrigin>) -> Result<Self> {
        let first = phis
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot pool zero samples".into()))?;
        let (k, v) = (first.rows(), first.cols());
        let mut entries = Vec::with_capacity(phis.len() * k);
        for (s, phi) in phis.iter().enumerate() {
            if phi.cols() != v {
                return Err(Error::InvalidInput(format!(
                    "sample {s} covers {} products, expected {v}",
                    phi.cols()
                )));
            }
            phi.check_row_stochastic(1e-6)?;
            for (t, row) in phi.iter_rows().enumerate() {
                entries.push(PoolEntry {
                    topic: TopicRef {
                        sample_id: s,
                        topic_index: t,
                    },
                    vector: row.to_vec(),
                });
            }
        }
        Ok(TopicPool {
            entries,
            origins,
            topics_per_sample: k,
            vocab_size: v,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_samples(&self) -> usize {
        self.origins.len()
    }

    pub fn topics_per_sample(&self) -> usize {
        self.topics_per_sample
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn origin(&self, sample_id: usize) -> SampleOrigin {
        self.origins[sample_id]
    }

    /// Topic matrices regrouped by sample.
    pub fn sample_matrices(&self) -> Vec<Matrix> {
        let mut rows: Vec<Vec<&[f64]>> = vec![Vec::new(); self.num_samples()];
        for e in &self.entries {
            rows[e.topic.sample_id].push(&e.vector);
        }
        rows.iter()
            .map(|r| Matrix::from_rows(r).expect("pool rows share a width"))
            .collect()
    }
}

pub fn pool_topics(samples: &[PosteriorSample]) -> Result<TopicPool> {
    TopicPool::from_samples(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    /// Members of a cluster come from distinct samples.
    Constrained,
    /// Topics of the same sample may merge.
    WithinSample,
}

impl MergeMode {
    pub fn from_allow_within(allow_within_sample: bool) -> Self {
        if allow_within_sample {
            MergeMode::WithinSample
        } else {
            MergeMode::Constrained
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MergeMode::Constrained => "constrained",
            MergeMode::WithinSample => "within-sample",
        }
    }
}

/// Pairwise cosine distances between pool entries, condensed upper triangle.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            Ordering::Equal => 0.0,
            Ordering::Less => self.data[self.index(i, j)],
            Ordering::Greater => self.data[self.index(j, i)],
        }
    }

    fn set(&mut self, i: usize, j: usize, d: f64) {
        let idx = if i < j {
            self.index(i, j)
        } else {
            self.index(j, i)
        };
        self.data[idx] = d;
    }
}

pub fn pool_distances(pool: &TopicPool) -> Result<DistanceMatrix> {
    let unit = metrics::unit_rows(pool.entries.iter().map(|e| e.vector.as_slice()))?;
    let n = unit.len();
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let unit = &unit;
            (i + 1..n).map(move |j| 1.0 - metrics::dot(&unit[i], &unit[j]).clamp(0.0, 1.0))
        })
        .collect();
    Ok(DistanceMatrix { n, data })
}

/// A group of pooled topics and their mean distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCluster {
    pub members: Vec<TopicRef>,
    /// Positions in the pool, ascending.
    pub pool_indices: Vec<usize>,
    pub centroid: Vec<f64>,
}

impl TopicCluster {
    /// Recurrence: number of member topics.
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Arithmetic mean of the member distributions.
pub fn clustered_topic(members: &[&[f64]]) -> Vec<f64> {
    let v = members.first().map_or(0, |m| m.len());
    let mut out = vec![0.0; v];
    for m in members {
        for (o, x) in out.iter_mut().zip(m.iter()) {
            *o += x;
        }
    }
    let n = members.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// One merge: cluster `absorbed` joins cluster `kept` (`kept < absorbed`)
/// at average-linkage distance `distance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub kept: usize,
    pub absorbed: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone)]
pub struct Clustering {
    pub clusters: Vec<TopicCluster>,
    pub merges: Vec<MergeStep>,
    pub threshold: f64,
    pub mode: MergeMode,
    pub num_samples: usize,
}

#[derive(PartialEq)]
struct Candidate {
    distance: f64,
    i: usize,
    j: usize,
    vi: u32,
    vj: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.i.cmp(&other.i))
            .then(self.j.cmp(&other.j))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn disjoint(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x & y == 0)
}

/// Average-linkage agglomeration over precomputed distances.
///
/// Clusters are identified by their smallest pool index. At every step the
/// eligible pair with the smallest linkage distance merges, ties going to the
/// lowest id pair; a pair is eligible when its distance is strictly below
/// `threshold` and, in constrained mode, the two clusters share no sample.
/// Linkage distances are updated with the Lance-Williams rule, which for
/// average linkage equals the mean pairwise member distance.
pub fn agglomerate(
    pool: &TopicPool,
    distances: &DistanceMatrix,
    threshold: f64,
    mode: MergeMode,
) -> Result<Clustering> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "threshold {threshold} is not in [0, 1]"
        )));
    }
    let n = pool.len();
    if distances.len() != n {
        return Err(Error::InvalidInput(
            "distance matrix does not match the pool".into(),
        ));
    }
    let words = pool.num_samples().div_ceil(64).max(1);
    let mut samples = vec![0u64; n * words];
    for (i, e) in pool.entries.iter().enumerate() {
        let s = e.topic.sample_id;
        samples[i * words + s / 64] |= 1 << (s % 64);
    }
    let constrained = mode == MergeMode::Constrained;
    let eligible = |samples: &[u64], i: usize, j: usize| {
        !constrained
            || disjoint(
                &samples[i * words..(i + 1) * words],
                &samples[j * words..(j + 1) * words],
            )
    };

    let mut work = distances.clone();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut version = vec![0u32; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut heap = BinaryHeap::new();
    for i in 0..n {
        for j in i + 1..n {
            let d = work.get(i, j);
            if d < threshold && eligible(&samples, i, j) {
                heap.push(Reverse(Candidate {
                    distance: d,
                    i,
                    j,
                    vi: 0,
                    vj: 0,
                }));
            }
        }
    }

    let mut merges = Vec::new();
    while let Some(Reverse(c)) = heap.pop() {
        let (i, j) = (c.i, c.j);
        if !active[i] || !active[j] || version[i] != c.vi || version[j] != c.vj {
            continue;
        }
        debug_assert!(c.distance < threshold);
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in (0..n).filter(|&k| active[k] && k != i && k != j) {
            let d = (si * work.get(i, k) + sj * work.get(j, k)) / (si + sj);
            work.set(i, k, d);
        }
        active[j] = false;
        size[i] += size[j];
        version[i] += 1;
        let absorbed = std::mem::take(&mut members[j]);
        members[i].extend(absorbed);
        for w in 0..words {
            let bits = samples[j * words + w];
            samples[i * words + w] |= bits;
        }
        merges.push(MergeStep {
            kept: i,
            absorbed: j,
            distance: c.distance,
            size: size[i],
        });
        log::trace!("merge {i} <- {j} at {:.6} (size {})", c.distance, size[i]);
        for k in (0..n).filter(|&k| active[k] && k != i) {
            let d = work.get(i, k);
            if d < threshold && eligible(&samples, i, k) {
                let (a, b) = if i < k { (i, k) } else { (k, i) };
                heap.push(Reverse(Candidate {
                    distance: d,
                    i: a,
                    j: b,
                    vi: version[a],
                    vj: version[b],
                }));
            }
        }
    }

    let clusters = (0..n)
        .filter(|&i| active[i])
        .map(|i| {
            let mut idx = members[i].clone();
            idx.sort_unstable();
            let vectors: Vec<&[f64]> = idx
                .iter()
                .map(|&m| pool.entries[m].vector.as_slice())
                .collect();
            TopicCluster {
                members: idx.iter().map(|&m| pool.entries[m].topic).collect(),
                centroid: clustered_topic(&vectors),
                pool_indices: idx,
            }
        })
        .collect();
    Ok(Clustering {
        clusters,
        merges,
        threshold,
        mode,
        num_samples: pool.num_samples(),
    })
}

/// Clusters a pool at `threshold`; see [`agglomerate`].
pub fn constrained_ahc(
    pool: &TopicPool,
    threshold: f64,
    allow_within_sample: bool,
) -> Result<Vec<TopicCluster>> {
    let d = pool_distances(pool)?;
    Ok(agglomerate(
        pool,
        &d,
        threshold,
        MergeMode::from_allow_within(allow_within_sample),
    )?
    .clusters)
}

/// Clusters kept after filtering by recurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredModel {
    pub clusters: Vec<TopicCluster>,
    pub threshold: f64,
    pub min_size: usize,
    pub mode: MergeMode,
    pub num_samples: usize,
}

impl ClusteredModel {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn centroids(&self) -> Matrix {
        let rows: Vec<&[f64]> = self
            .clusters
            .iter()
            .map(|c| c.centroid.as_slice())
            .collect();
        Matrix::from_rows(&rows).expect("centroids share a width")
    }
}

/// Keeps clusters with at least `min_size` members.
pub fn filter_clusters(clustering: &Clustering, min_size: usize) -> Result<ClusteredModel> {
    if min_size == 0 {
        return Err(Error::Config(
            "minimum cluster size must be at least 1".into(),
        ));
    }
    let clusters: Vec<TopicCluster> = clustering
        .clusters
        .iter()
        .filter(|c| c.size() >= min_size)
        .cloned()
        .collect();
    if clusters.is_empty() {
        return Err(Error::EmptyModel {
            threshold: clustering.threshold,
            min_size,
        });
    }
    Ok(ClusteredModel {
        clusters,
        threshold: clustering.threshold,
        min_size,
        mode: clustering.mode,
        num_samples: clustering.num_samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub heldout: HeldoutConfig,
    pub top_n: usize,
    /// Total symmetric alpha used for held-out likelihood of clustered topics.
    pub alpha_sum: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            heldout: HeldoutConfig::default(),
            top_n: metrics::DEFAULT_TOP_N,
            alpha_sum: crate::gibbs::DEFAULT_ALPHA_SUM,
        }
    }
}

/// Generalization and per-topic quality of one set of topics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_topics: usize,
    pub perplexity: MeanSe,
    pub npmi: MeanSe,
    pub cd_min: Option<MeanSe>,
    pub credibility: Option<MeanSe>,
    pub topics: Vec<TopicQuality>,
}

fn coherence_all(topics: &Matrix, stats: &CoocStats, top_n: usize) -> Result<Vec<f64>> {
    topics
        .iter_rows()
        .map(|r| metrics::topic_coherence(r, stats, top_n))
        .collect()
}

fn distinctiveness_all(topics: &Matrix) -> Result<Option<Vec<f64>>> {
    match metrics::sample_distinctiveness(topics) {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scores clustered topics: held-out perplexity with the centroids as topics
/// under a symmetric prior, coherence and distinctiveness of the centroids,
/// and credibility as each centroid's best match among `replication`'s
/// centroids.
pub fn evaluate_model(
    model: &ClusteredModel,
    test: &Corpus,
    stats: &CoocStats,
    replication: Option<&ClusteredModel>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if model.is_empty() {
        return Err(Error::EmptyModel {
            threshold: model.threshold,
            min_size: model.min_size,
        });
    }
    let phi = model.centroids();
    let k = phi.rows();
    let alpha = vec![opts.alpha_sum / k as f64; k];
    let ppl = heldout::perplexity(test, &phi, &alpha, &opts.heldout)?;
    let npmi = coherence_all(&phi, stats, opts.top_n)?;
    let cd = distinctiveness_all(&phi)?;
    let cred = match replication {
        Some(r) if !r.is_empty() => Some(metrics::max_similarity_against(&phi, &r.centroids())?),
        _ => None,
    };
    let topics = (0..k)
        .map(|t| TopicQuality {
            npmi: npmi[t],
            cd_min: cd.as_ref().map(|c| c[t]),
            credibility: cred.as_ref().map(|c| c[t]),
        })
        .collect();
    Ok(EvalReport {
        n_topics: k,
        perplexity: MeanSe {
            mean: ppl.perplexity,
            se: ppl.stderr,
            n: ppl.docs.len(),
        },
        npmi: mean_se(&npmi).expect("at least one topic"),
        cd_min: cd.as_deref().and_then(mean_se),
        credibility: cred.as_deref().and_then(mean_se),
        topics,
    })
}

/// Per-sample scores for raw posterior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub chain_id: u64,
    pub iteration: usize,
    pub perplexity: f64,
    pub perplexity_se: f64,
    pub topics: Vec<TopicQuality>,
}

/// Raw-draw baseline: each sample's own perplexity, plus topic metrics with
/// credibility computed across all pooled samples. Standard errors are given
/// both over topics and over per-sample means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesReport {
    pub samples: Vec<SampleEval>,
    pub perplexity: MeanSe,
    pub npmi: MeanSe,
    pub cd_min: Option<MeanSe>,
    pub credibility: Option<MeanSe>,
    pub npmi_over_samples: MeanSe,
    pub cd_min_over_samples: Option<MeanSe>,
    pub credibility_over_samples: Option<MeanSe>,
}

pub fn evaluate_samples(
    samples: &[PosteriorSample],
    test: &Corpus,
    stats: &CoocStats,
    opts: &EvalOptions,
) -> Result<SamplesReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples to evaluate".into()));
    }
    let phis: Vec<Matrix> = samples.iter().map(|s| s.phi.clone()).collect();
    let cred = if samples.len() >= 2 {
        Some(metrics::sample_credibility(&phis)?)
    } else {
        None
    };
    let mut evals = Vec::with_capacity(samples.len());
    for (s, sample) in samples.iter().enumerate() {
        let ppl = heldout::perplexity(test, &sample.phi, &sample.alpha, &opts.heldout)?;
        let npmi = coherence_all(&sample.phi, stats, opts.top_n)?;
        let cd = distinctiveness_all(&sample.phi)?;
        let topics = (0..sample.topics())
            .map(|t| TopicQuality {
                npmi: npmi[t],
                cd_min: cd.as_ref().map(|c| c[t]),
                credibility: cred.as_ref().map(|c| c[s][t]),
            })
            .collect();
        evals.push(SampleEval {
            chain_id: sample.chain_id,
            iteration: sample.iteration,
            perplexity: ppl.perplexity,
            perplexity_se: ppl.stderr,
            topics,
        });
    }
    let all = |f: &dyn Fn(&TopicQuality) -> Option<f64>| -> Vec<f64> {
        evals
            .iter()
            .flat_map(|e| e.topics.iter().filter_map(f))
            .collect()
    };
    let per_sample = |f: &dyn Fn(&TopicQuality) -> Option<f64>| -> Vec<f64> {
        evals
            .iter()
            .filter_map(|e| {
                let xs: Vec<f64> = e.topics.iter().filter_map(f).collect();
                mean_se(&xs).map(|m| m.mean)
            })
            .collect()
    };
    let ppls: Vec<f64> = evals.iter().map(|e| e.perplexity).collect();
    Ok(SamplesReport {
        perplexity: mean_se(&ppls).expect("non-empty"),
        npmi: mean_se(&all(&|q| Some(q.npmi))).expect("non-empty"),
        cd_min: mean_se(&all(&|q| q.cd_min)),
        credibility: mean_se(&all(&|q| q.credibility)),
        npmi_over_samples: mean_se(&per_sample(&|q| Some(q.npmi))).expect("non-empty"),
        cd_min_over_samples: mean_se(&per_sample(&|q| q.cd_min)),
        credibility_over_samples: mean_se(&per_sample(&|q| q.credibility)),
        samples: evals,
    })
}

/// Default threshold grid: 0 to 0.55 in steps of 0.05.
pub fn default_thresholds() -> Vec<f64> {
    (0..12).map(|i| f64::from(i * 5) / 100.0).collect()
}

pub const DEFAULT_MIN_SIZES: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub thresholds: Vec<f64>,
    pub min_sizes: Vec<usize>,
    pub mode: MergeMode,
    pub eval: EvalOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            thresholds: default_thresholds(),
            min_sizes: DEFAULT_MIN_SIZES.to_vec(),
            mode: MergeMode::Constrained,
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub threshold: f64,
    pub min_size: usize,
    pub n_clusters: usize,
    /// `None` when no cluster reaches `min_size`.
    pub report: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

pub const SWEEP_METRICS: [&str; 4] = ["perplexity", "npmi", "cd_min", "credibility"];

/// One row of the long-format sweep table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub min_size: usize,
    pub metric: &'static str,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub n_clusters: usize,
}

impl SweepReport {
    pub fn rows(&self) -> Vec<SweepRow> {
        let mut out = Vec::with_capacity(self.cells.len() * SWEEP_METRICS.len());
        for c in &self.cells {
            for metric in SWEEP_METRICS {
                let stat = c.report.as_ref().and_then(|r| match metric {
                    "perplexity" => Some(r.perplexity),
                    "npmi" => Some(r.npmi),
                    "cd_min" => r.cd_min,
                    _ => r.credibility,
                });
                out.push(SweepRow {
                    threshold: c.threshold,
                    min_size: c.min_size,
                    metric,
                    mean: stat.map(|s| s.mean),
                    stderr: stat.map(|s| s.se),
                    n_clusters: c.n_clusters,
                });
            }
        }
        out
    }

    /// Long format: `threshold,min_size,metric,mean,stderr,n_clusters`;
    /// undefined values are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "threshold,min_size,metric,mean,stderr,n_clusters")?;
        let opt = |x: Option<f64>| x.map(sig9).unwrap_or_default();
        for r in self.rows() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                sig9(r.threshold),
                r.min_size,
                r.metric,
                opt(r.mean),
                opt(r.stderr),
                r.n_clusters
            )?;
        }
        Ok(())
    }
}

/// Parsed row of a sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCsvRow {
    pub threshold: f64,
    pub min_size: usize,
    pub metric: String,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub n_clusters: usize,
}

pub fn read_sweep_csv<R: BufRead>(reader: R) -> Result<Vec<SweepCsvRow>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "threshold,min_size,metric,mean,stderr,n_clusters" {
                return Err(Error::Record {
                    line: 1,
                    message: "unexpected sweep header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Record {
            line: i + 1,
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad("bad number"))
            }
        };
        out.push(SweepCsvRow {
            threshold: f[0].parse().map_err(|_| bad("bad threshold"))?,
            min_size: f[1].parse().map_err(|_| bad("bad min_size"))?,
            metric: f[2].to_string(),
            mean: opt(f[3])?,
            stderr: opt(f[4])?,
            n_clusters: f[5].parse().map_err(|_| bad("bad n_clusters"))?,
        });
    }
    Ok(out)
}

/// Evaluates every `(threshold, min_size)` cell. Each threshold clusters the
/// pool (and the replication pool) once; each cell filters both at the same
/// `min_size` and scores the model against the filtered replication.
pub fn sweep(
    pool: &TopicPool,
    replication: Option<&TopicPool>,
    test: &Corpus,
    stats: &CoocStats,
    opts: &SweepOptions,
) -> Result<SweepReport> {
    if opts.thresholds.is_empty() || opts.min_sizes.is_empty() {
        return Err(Error::Config("sweep grids must not be empty".into()));
    }
    let mut thresholds = opts.thresholds.clone();
    thresholds.sort_by(f64::total_cmp);
    let mut min_sizes = opts.min_sizes.clone();
    min_sizes.sort_unstable();
    min_sizes.dedup();

    let dist = pool_distances(pool)?;
    let rep_dist = replication.map(pool_distances).transpose()?;
    let mut cells = Vec::with_capacity(thresholds.len() * min_sizes.len());
    for &threshold in &thresholds {
        let clustering = agglomerate(pool, &dist, threshold, opts.mode)?;
        let rep_clustering = match (replication, &rep_dist) {
            (Some(r), Some(d)) => Some(agglomerate(r, d, threshold, opts.mode)?),
            _ => None,
        };
        let row: Vec<SweepCell> = min_sizes
            .par_iter()
            .map(|&min_size| {
                let model = match filter_clusters(&clustering, min_size) {
                    Ok(m) => m,
                    Err(Error::EmptyModel { .. }) => {
                        return Ok(SweepCell {
                            threshold,
                            min_size,
                            n_clusters: 0,
                            report: None,
                        })
                    }
                    Err(e) => return Err(e),
                };
                let rep_model = rep_clustering
                    .as_ref()
                    .and_then(|c| filter_clusters(c, min_size).ok());
                let report = evaluate_model(&model, test, stats, rep_model.as_ref(), &opts.eval)?;
                log::info!(
                    "threshold {threshold:.2} min size {min_size}: {} clusters",
                    model.len()
                );
                Ok(SweepCell {
                    threshold,
                    min_size,
                    n_clusters: model.len(),
                    report: Some(report),
                })
            })
            .collect::<Result<_>>()?;
        cells.extend(row);
    }
    Ok(SweepReport { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(samples: &[&[&[f64]]]) -> TopicPool {
        let mats: Vec<Matrix> = samples
            .iter()
            .map(|s| Matrix::from_rows(s).unwrap())
            .collect();
        TopicPool::from_matrices(&mats).unwrap()
    }

    const T1: [f64; 4] = [0.7, 0.3, 0.0, 0.0];
    const T2: [f64; 4] = [0.0, 0.0, 0.6, 0.4];
    const T1B: [f64; 4] = [0.68, 0.32, 0.0, 0.0];
    const T2B: [f64; 4] = [0.0, 0.0, 0.1, 0.9];

    fn hand_pool() -> TopicPool {
        pool(&[&[&T1, &T2], &[&T1B, &T2B]])
    }

    fn sizes(clusters: &[TopicCluster]) -> Vec<usize> {
        clusters.iter().map(TopicCluster::size).collect()
    }

    #[test]
    fn pool_keeps_provenance() {
        let p = hand_pool();
        assert_eq!(p.len(), 4);
        assert_eq!(p.num_samples(), 2);
        assert_eq!(
            p.entries()[3].topic,
            TopicRef {
                sample_id: 1,
                topic_index: 1
            }
        );
        assert_eq!(p.sample_matrices()[1].row(1), &T2B);
    }

    #[test]
    fn threshold_zero_keeps_singletons() {
        let p = pool(&[&[&T1, &T2], &[&T1, &T2]]);
        let c = constrained_ahc(&p, 0.0, false).unwrap();
        assert_eq!(sizes(&c), vec![1, 1, 1, 1]);
    }

    #[test]
    fn hand_case_thresholds() {
        let p = hand_pool();
        let c = constrained_ahc(&p, 0.3, false).unwrap();
        assert_eq!(sizes(&c), vec![2, 1, 1]);
        assert_eq!(c[0].pool_indices, vec![0, 2]);
        let c = constrained_ahc(&p, 0.4, false).unwrap();
        assert_eq!(sizes(&c), vec![2, 2]);
        assert_eq!(c[1].pool_indices, vec![1, 3]);
    }

    #[test]
    fn identical_orthogonal_samples() {
        let e = |i: usize| {
            let mut v = vec![0.0; 5];
            v[i] = 1.0;
            v
        };
        let rows: Vec<Vec<f64>> = (0..5).map(e).collect();
        let mats: Vec<Matrix> = (0..6).map(|_| Matrix::from_rows(&rows).unwrap()).collect();
        let p = TopicPool::from_matrices(&mats).unwrap();
        let c = constrained_ahc(&p, 0.3, false).unwrap();
        assert_eq!(sizes(&c), vec![6; 5]);
    }

    #[test]
    fn constraint_blocks_same_sample_merges() {
        // two identical topics inside one sample
        let p = pool(&[&[&T1, &T1]]);
        assert_eq!(sizes(&constrained_ahc(&p, 0.5, false).unwrap()), vec![1, 1]);
        assert_eq!(sizes(&constrained_ahc(&p, 0.5, true).unwrap()), vec![2]);
    }

    #[test]
    fn centroid_is_member_mean() {
        let c = clustered_topic(&[&T1, &T1B]);
        for (a, b) in c.iter().zip([0.69, 0.31, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(clustered_topic(&[&T2]), T2.to_vec());
        let v = [0.1, 0.2, 0.3, 0.4];
        let c = clustered_topic(&[&v, &v, &v]);
        for (a, b) in c.iter().zip(v) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn filter_by_recurrence() {
        let p = hand_pool();
        let d = pool_distances(&p).unwrap();
        let cl = agglomerate(&p, &d, 0.3, MergeMode::Constrained).unwrap();
        assert_eq!(filter_clusters(&cl, 1).unwrap().len(), 3);
        let m = filter_clusters(&cl, 2).unwrap();
        assert_eq!(m.len(), 1);
        assert!(m.clusters.iter().all(|c| c.size() <= cl.num_samples));
        assert!(matches!(
            filter_clusters(&cl, 3),
            Err(Error::EmptyModel { min_size: 3, .. })
        ));
    }

    #[test]
    fn ties_merge_lowest_pair_first() {
        // three identical topics from three samples: (0,1) merges first,
        // then 2 joins
        let p = pool(&[&[&T1], &[&T1], &[&T1]]);
        let d = pool_distances(&p).unwrap();
        let cl = agglomerate(&p, &d, 0.1, MergeMode::Constrained).unwrap();
        assert_eq!(cl.merges[0].kept, 0);
        assert_eq!(cl.merges[0].absorbed, 1);
        assert_eq!(cl.merges[1].absorbed, 2);
        assert_eq!(sizes(&cl.clusters), vec![3]);
    }

    #[test]
    fn default_grid() {
        let t = default_thresholds();
        assert_eq!(t.len(), 12);
        assert_eq!(t[3], 0.15);
        assert_eq!(t[11], 0.55);
    }

    fn random_pool(seed: u64, samples: usize, topics: usize, v: usize) -> TopicPool {
        use rand::Rng;
        let mut rng = crate::rng::seeded(seed);
        let mats: Vec<Matrix> = (0..samples)
            .map(|_| {
                let rows: Vec<Vec<f64>> = (0..topics)
                    .map(|_| {
                        // sparse-ish rows so that some pairs fall below threshold
                        let mut r: Vec<f64> = (0..v)
                            .map(|_| {
                                if rng.random::<f64>() < 0.4 {
                                    rng.random::<f64>()
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        r[rng.random_range(0..v)] += 0.5;
                        let s: f64 = r.iter().sum();
                        r.iter_mut().for_each(|x| *x /= s);
                        r
                    })
                    .collect();
                Matrix::from_rows(&rows).unwrap()
            })
            .collect();
        TopicPool::from_matrices(&mats).unwrap()
    }

    /// Replays the merge log and checks each merge against the raw distances.
    fn check_merges(pool: &TopicPool, cl: &Clustering) {
        let d = pool_distances(pool).unwrap();
        let mut groups: Vec<Vec<usize>> = (0..pool.len()).map(|i| vec![i]).collect();
        for m in &cl.merges {
            let (a, b) = (&groups[m.kept], &groups[m.absorbed]);
            assert!(!a.is_empty() && !b.is_empty() && m.kept < m.absorbed);
            let mut sum = 0.0;
            for &i in a {
                for &j in b {
                    sum += d.get(i, j);
                }
            }
            let mean = sum / (a.len() * b.len()) as f64;
            assert!((mean - m.distance).abs() < 1e-9, "{mean} vs {}", m.distance);
            assert!(m.distance < cl.threshold);
            if cl.mode == MergeMode::Constrained {
                for &i in a {
                    for &j in b {
                        assert_ne!(
                            pool.entries()[i].topic.sample_id,
                            pool.entries()[j].topic.sample_id
                        );
                    }
                }
            }
            let moved = std::mem::take(&mut groups[m.absorbed]);
            groups[m.kept].extend(moved);
            assert_eq!(groups[m.kept].len(), m.size);
        }
        let mut from_log: Vec<Vec<usize>> = groups
            .into_iter()
            .filter(|g| !g.is_empty())
            .map(|mut g| {
                g.sort_unstable();
                g
            })
            .collect();
        from_log.sort();
        let mut reported: Vec<Vec<usize>> =
            cl.clusters.iter().map(|c| c.pool_indices.clone()).collect();
        reported.sort();
        assert_eq!(from_log, reported);
    }

    fn check_partition(pool: &TopicPool, cl: &Clustering) {
        let mut seen = vec![0u32; pool.len()];
        for c in &cl.clusters {
            assert_eq!(c.members.len(), c.pool_indices.len());
            for (&i, m) in c.pool_indices.iter().zip(&c.members) {
                seen[i] += 1;
                assert_eq!(pool.entries()[i].topic, *m);
            }
            let sum: f64 = c.centroid.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            if cl.mode == MergeMode::Constrained {
                let mut ids: Vec<usize> = c.members.iter().map(|m| m.sample_id).collect();
                ids.sort_unstable();
                ids.dedup();
                assert_eq!(ids.len(), c.size());
                assert!(c.size() <= pool.num_samples());
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
    }

    #[test]
    fn merges_match_mean_pairwise_distance() {
        for seed in 0..4 {
            let pool = random_pool(seed, 6, 5, 12);
            let d = pool_distances(&pool).unwrap();
            for mode in [MergeMode::Constrained, MergeMode::WithinSample] {
                for t in [0.3, 0.6, 0.9] {
                    let cl = agglomerate(&pool, &d, t, mode).unwrap();
                    check_merges(&pool, &cl);
                    check_partition(&pool, &cl);
                }
            }
        }
    }

    #[test]
    fn clustering_is_deterministic() {
        let pool = random_pool(11, 5, 6, 10);
        let a = constrained_ahc(&pool, 0.5, false).unwrap();
        let b = constrained_ahc(&pool.clone(), 0.5, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distance_matrix_indexing() {
        let pool = random_pool(3, 2, 4, 6);
        let d = pool_distances(&pool).unwrap();
        for i in 0..pool.len() {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..pool.len() {
                let direct =
                    metrics::cosine_distance(&pool.entries()[i].vector, &pool.entries()[j].vector)
                        .unwrap();
                assert!((d.get(i, j) - direct).abs() < 1e-12);
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }

    /// Blocks of `width` products per planted topic, each sample's copy mixed
    /// with weight `eps[s][k]` into a random distribution over all products.
    fn perturbed_pool(
        k: usize,
        width: usize,
        noise: &[Vec<(f64, Vec<f64>)>],
    ) -> (TopicPool, Vec<Vec<f64>>) {
        let v = k * width;
        let planted: Vec<Vec<f64>> = (0..k)
            .map(|t| {
                (0..v)
                    .map(|j| {
                        if j / width == t {
                            1.0 / width as f64
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let mats: Vec<Matrix> = noise
            .iter()
            .map(|sample| {
                let rows: Vec<Vec<f64>> = sample
                    .iter()
                    .zip(&planted)
                    .map(|((eps, r), u)| {
                        let s: f64 = r.iter().sum();
                        u.iter()
                            .zip(r)
                            .map(|(a, b)| (1.0 - eps) * a + eps * b / s)
                            .collect()
                    })
                    .collect();
                Matrix::from_rows(&rows).unwrap()
            })
            .collect();
        (TopicPool::from_matrices(&mats).unwrap(), planted)
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn planted_topics_are_recovered(
            (k, width, noise) in (2usize..6, 3usize..8, 2usize..7).prop_flat_map(|(k, width, s)| {
                let v = k * width;
                let topic = (0.0f64..0.15, proptest::collection::vec(0.01f64..1.0, v));
                (Just(k), Just(width), proptest::collection::vec(proptest::collection::vec(topic, k), s))
            }),
            frac in 0.0f64..1.0,
        ) {
            let (pool, planted) = perturbed_pool(k, width, &noise);
            let delta = pool
                .entries()
                .iter()
                .map(|e| metrics::cosine_distance(&e.vector, &planted[e.topic.topic_index]).unwrap())
                .fold(0.0, f64::max);
            let (lo, hi) = (4.0 * delta, 0.5);
            prop_assume!(lo < hi);
            let threshold = lo + frac * (hi - lo);
            let clusters = constrained_ahc(&pool, threshold, false).unwrap();
            prop_assert_eq!(clusters.len(), k);
            for c in &clusters {
                prop_assert_eq!(c.size(), noise.len());
                let t = c.members[0].topic_index;
                prop_assert!(c.members.iter().all(|m| m.topic_index == t));
                let cd = metrics::cosine_distance(&c.centroid, &planted[t]).unwrap();
                prop_assert!(cd <= delta + 1e-12, "centroid CD {} > {}", cd, delta);
            }
        }
    }
}
