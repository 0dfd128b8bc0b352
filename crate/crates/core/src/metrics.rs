//! Topic quality: coherence (NPMI), distinctiveness, credibility, greedy
//! cross-sample alignment and the potential scale reduction factor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CoocStats;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_TOP_N: usize = 15;

/// Interpretation bands for reporting.
pub const NPMI_INCOHERENT: f64 = 0.0;
pub const NPMI_HIGHLY_COHERENT: f64 = 0.5;
pub const CD_HIGHLY_SIMILAR: f64 = 0.1;
pub const CD_HIGHLY_DISSIMILAR: f64 = 0.5;
pub const CREDIBILITY_LOW: f64 = 0.5;
pub const RHAT_ACCEPTABLE: f64 = 1.1;

/// Topic `topic_index` of sample `sample_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TopicRef {
    pub sample_id: usize,
    pub topic_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopicQuality {
    pub npmi: f64,
    /// Absent when the sample has a single topic.
    pub cd_min: Option<f64>,
    /// Absent when there is nothing to compare against.
    pub credibility: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
/// `None` for an empty slice; `se` is zero for a single value.
pub fn mean_se(xs: &[f64]) -> Option<MeanSe> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let se = if xs.len() > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Some(MeanSe {
        mean,
        se,
        n: xs.len(),
    })
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (uc, ur) = u.split_at(u.len() - u.len() % 4);
    let (vc, vr) = v.split_at(uc.len());
    for (a, b) in uc.chunks_exact(4).zip(vc.chunks_exact(4)) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let tail: f64 = ur.iter().zip(vr).map(|(a, b)| a * b).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity of two nonnegative vectors, clamped to `[0, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "vectors differ in length ({} vs {})",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if !(nu > 0.0 && nv > 0.0) {
        return Err(Error::DegenerateVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(0.0, 1.0))
}

pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    cosine_similarity(u, v).map(|s| 1.0 - s)
}

/// Rows scaled to unit Euclidean norm.
pub(crate) fn unit_rows<'a, I>(rows: I) -> Result<Vec<Vec<f64>>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    rows.into_iter()
        .map(|r| {
            let n = norm(r);
            if n.is_nan() || n <= 0.0 {
                return Err(Error::DegenerateVector);
            }
            Ok(r.iter().map(|x| x / n).collect())
        })
        .collect()
}

/// Cosine similarities between every row of `a` and every row of `b`,
/// row-major `a.len() x b.len()`.
pub(crate) fn cross_similarity(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    a.par_iter()
        .flat_map_iter(|x| b.iter().map(move |y| dot(x, y).clamp(0.0, 1.0)))
        .collect()
}

pub fn similarity_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::InvalidInput(
            "topic matrices differ in vocabulary size".into(),
        ));
    }
    let ua = unit_rows(a.iter_rows())?;
    let ub = unit_rows(b.iter_rows())?;
    Matrix::from_vec(a.rows(), b.rows(), cross_similarity(&ua, &ub))
}

/// Normalized pointwise mutual information of two products from document
/// co-occurrence frequencies.
///
/// Pairs that never co-occur score `-1` (the limit as the joint probability
/// goes to zero); pairs that always appear together score `1`.
pub fn npmi_pair(i: u32, j: u32, stats: &CoocStats) -> Result<f64> {
    let (dfi, dfj) = (stats.df(i), stats.df(j));
    if dfi == 0 {
        return Err(Error::UnseenProduct(i));
    }
    if dfj == 0 {
        return Err(Error::UnseenProduct(j));
    }
    let joint = stats.pair_df(i, j);
    if joint == 0 {
        return Ok(-1.0);
    }
    if joint == dfi && joint == dfj {
        return Ok(1.0);
    }
    let d = stats.num_docs() as f64;
    let (pi, pj, pij) = (dfi as f64 / d, dfj as f64 / d, joint as f64 / d);
    let pmi = (pij / (pi * pj)).ln();
    Ok((pmi / -pij.ln()).clamp(-1.0, 1.0))
}

/// Indices of the `n` largest entries, ties broken by lower index.
pub fn top_products(topic: &[f64], n: usize) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..topic.len() as u32).collect();
    idx.sort_by(|&a, &b| {
        topic[b as usize]
            .total_cmp(&topic[a as usize])
            .then(a.cmp(&b))
    });
    idx.truncate(n);
    idx
}

/// Mean NPMI over all unordered pairs of the topic's `top_n` most probable
/// products.
///
/// A product that never occurs in the reference corpus cannot co-occur with
/// anything there, so its pairs count as `-1`.
pub fn topic_coherence(topic: &[f64], stats: &CoocStats, top_n: usize) -> Result<f64> {
    if topic.iter().filter(|p| **p > 0.0).count() < 2 || top_n < 2 {
        return Err(Error::DegenerateTopic);
    }
    let top: Vec<u32> = top_products(topic, top_n)
        .into_iter()
        .filter(|&w| topic[w as usize] > 0.0)
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in top.iter().enumerate() {
        for &j in &top[a + 1..] {
            total += match npmi_pair(i, j, stats) {
                Ok(x) => x,
                Err(Error::UnseenProduct(_)) => -1.0,
                Err(e) => return Err(e),
            };
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Minimum cosine distance from topic `i` to the other topics of its sample.
pub fn topic_distinctiveness(i: usize, sample: &Matrix) -> Result<f64> {
    if sample.rows() < 2 {
        return Err(Error::Undefined("distinctiveness of a single-topic sample"));
    }
    if i >= sample.rows() {
        return Err(Error::InvalidInput(format!("no topic {i}")));
    }
    let mut best = f64::INFINITY;
    for j in (0..sample.rows()).filter(|&j| j != i) {
        best = best.min(cosine_distance(sample.row(i), sample.row(j))?);
    }
    Ok(best)
}

/// Per-topic minimum cosine distance for a whole sample.
pub fn sample_distinctiveness(sample: &Matrix) -> Result<Vec<f64>> {
    if sample.rows() < 2 {
        return Err(Error::Undefined("distinctiveness of a single-topic sample"));
    }
    let unit = unit_rows(sample.iter_rows())?;
    let sim = cross_similarity(&unit, &unit);
    let k = sample.rows();
    Ok((0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| j != i)
                .map(|j| 1.0 - sim[i * k + j])
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Average over the other samples of the best cosine match to topic `t`.
pub fn topic_credibility(t: TopicRef, samples: &[Matrix]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Undefined("credibility with fewer than two samples"));
    }
    let own = samples
        .get(t.sample_id)
        .filter(|s| t.topic_index < s.rows())
        .ok_or_else(|| Error::InvalidInput(format!("no topic {t:?}")))?
        .row(t.topic_index);
    let mut total = 0.0;
    for (s, other) in samples.iter().enumerate() {
        if s == t.sample_id {
            continue;
        }
        let mut best: f64 = 0.0;
        for row in other.iter_rows() {
            best = best.max(cosine_similarity(own, row)?);
        }
        total += best;
    }
    Ok(total / (samples.len() - 1) as f64)
}

/// Credibility of every topic of every sample, `[sample][topic]`.
pub fn sample_credibility(samples: &[Matrix]) -> Result<Vec<Vec<f64>>> {
    if samples.len() < 2 {
        return Err(Error::Undefined("credibility with fewer than two samples"));
    }
    let unit: Vec<Vec<Vec<f64>>> = samples
        .iter()
        .map(|s| unit_rows(s.iter_rows()))
        .collect::<Result<_>>()?;
    let s_count = samples.len();
    Ok((0..s_count)
        .map(|t| {
            unit[t]
                .par_iter()
                .map(|x| {
                    let total: f64 = (0..s_count)
                        .filter(|&s| s != t)
                        .map(|s| {
                            unit[s]
                                .iter()
                                .map(|y| dot(x, y).clamp(0.0, 1.0))
                                .fold(0.0, f64::max)
                        })
                        .sum();
                    total / (s_count - 1) as f64
                })
                .collect()
        })
        .collect())
}

/// For every row of `model`, the best cosine similarity to any row of
/// `reference`.
pub fn max_similarity_against(model: &Matrix, reference: &Matrix) -> Result<Vec<f64>> {
    if reference.rows() == 0 {
        return Err(Error::Undefined("credibility against an empty reference"));
    }
    let sim = similarity_matrix(model, reference)?;
    Ok(sim
        .iter_rows()
        .map(|r| r.iter().copied().fold(0.0, f64::max))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

/// Greedy one-to-one matching on a similarity matrix (`rows x cols`):
/// repeatedly take the largest remaining entry (ties to the lowest
/// `(row, col)`), then retire its row and column.
pub fn greedy_align_similarities(sim: &Matrix) -> Vec<AlignedPair> {
    let mut cells: Vec<(usize, usize)> = (0..sim.rows())
        .flat_map(|i| (0..sim.cols()).map(move |j| (i, j)))
        .collect();
    cells.sort_by(|&(i1, j1), &(i2, j2)| {
        sim.get(i2, j2)
            .total_cmp(&sim.get(i1, j1))
            .then((i1, j1).cmp(&(i2, j2)))
    });
    let mut used_a = vec![false; sim.rows()];
    let mut used_b = vec![false; sim.cols()];
    let mut out = Vec::with_capacity(sim.rows().min(sim.cols()));
    for (i, j) in cells {
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        out.push(AlignedPair {
            a: i,
            b: j,
            similarity: sim.get(i, j),
        });
        if out.len() == sim.rows().min(sim.cols()) {
            break;
        }
    }
    out
}

/// Greedy topic correspondence between two samples by cosine similarity.
pub fn greedy_align(a: &Matrix, b: &Matrix) -> Result<Vec<AlignedPair>> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::InvalidInput("cannot align an empty sample".into()));
    }
    Ok(greedy_align_similarities(&similarity_matrix(a, b)?))
}

/// Classic Gelman-Rubin potential scale reduction factor.
///
/// Chains longer than the shortest one are truncated to its length.
pub fn rhat<T: AsRef<[f64]>>(traces: &[T]) -> Result<f64> {
    let m = traces.len();
    let n = traces.iter().map(|t| t.as_ref().len()).min().unwrap_or(0);
    if m < 2 || n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 chains of length 2 (got {m} chains, shortest {n})"
        )));
    }
    let nf = n as f64;
    let chains: Vec<&[f64]> = traces.iter().map(|t| &t.as_ref()[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let within: f64 = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m as f64;
    if within.is_nan() || within <= 0.0 {
        return Err(Error::DegenerateTrace);
    }
    let grand = means.iter().sum::<f64>() / m as f64;
    // B / n
    let between_over_n =
        means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    let pooled = (nf - 1.0) / nf * within + between_over_n;
    Ok((pooled / within).sqrt())
}
