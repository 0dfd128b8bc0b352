//! Held-out likelihood under fixed topics.
//!
//! The left-to-right estimator factorizes `p(w | phi, alpha)` into
//! per-position predictive terms `p(w_n | w_<n)` and estimates each term with
//! a set of particles whose earlier assignments are re-sampled before every
//! new position. [`exact_doc_loglik`] enumerates every assignment for short
//! documents and serves as the reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, Rng};

pub const DEFAULT_PARTICLES: usize = 30;

/// Limit on `K^len` for exact enumeration.
pub const MAX_ENUMERATION: f64 = 1e6;

const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutConfig {
    pub particles: usize,
    pub seed: u64,
    pub resample_previous: bool,
}

impl Default for HeldoutConfig {
    fn default() -> Self {
        HeldoutConfig {
            particles: DEFAULT_PARTICLES,
            seed: 0,
            resample_previous: true,
        }
    }
}

impl HeldoutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::Config("at least one particle is required".into()));
        }
        Ok(())
    }
}

/// Estimate for one document with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DocEstimate {
    pub loglik: f64,
    pub stderr: f64,
}

fn check_model(phi: &Matrix, alpha: &[f64]) -> Result<()> {
    if phi.rows() == 0 || phi.rows() != alpha.len() {
        return Err(Error::Model(format!(
            "{} topics but {} alpha values",
            phi.rows(),
            alpha.len()
        )));
    }
    if alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::Model("alpha must be positive".into()));
    }
    phi.check_row_stochastic(ROW_SUM_TOLERANCE)
}

fn check_doc(doc: &[u32], vocab_size: usize) -> Result<()> {
    match doc.iter().find(|&&w| w as usize >= vocab_size) {
        Some(&token) => Err(Error::Oov { token, vocab_size }),
        None => Ok(()),
    }
}

/// Mean written as `x0 + sum(x - x0) / n` so identical values average to
/// themselves bit for bit.
fn stable_mean(xs: &[f64]) -> f64 {
    let x0 = xs[0];
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

fn left_to_right_unchecked(
    doc: &[u32],
    phi: &Matrix,
    alpha: &[f64],
    cfg: &HeldoutConfig,
) -> DocEstimate {
    let k = alpha.len();
    let alpha_sum: f64 = alpha.iter().sum();
    let len = doc.len();
    let r_count = cfg.particles;
    let mut rng: Rng = rng::seeded(cfg.seed);

    // per[n * R + r] = p_n^r
    let mut per = vec![0.0; len * r_count];
    let mut counts = vec![0u32; k];
    let mut z = vec![0usize; len];
    let mut weights = vec![0.0; k];

    let fill = |weights: &mut [f64], counts: &[u32], w: u32| {
        for t in 0..k {
            weights[t] = (f64::from(counts[t]) + alpha[t]) * phi.get(t, w as usize);
        }
    };

    for r in 0..r_count {
        counts.fill(0);
        for n in 0..len {
            if cfg.resample_previous {
                for m in 0..n {
                    counts[z[m]] -= 1;
                    fill(&mut weights, &counts, doc[m]);
                    z[m] = rng::sample_index(&mut rng, &weights);
                    counts[z[m]] += 1;
                }
            }
            let denom = n as f64 + alpha_sum;
            let w = doc[n] as usize;
            let mut p = 0.0;
            for t in 0..k {
                p += (f64::from(counts[t]) + alpha[t]) / denom * phi.get(t, w);
            }
            per[n * r_count + r] = p;
            fill(&mut weights, &counts, doc[n]);
            z[n] = rng::sample_index(&mut rng, &weights);
            counts[z[n]] += 1;
        }
    }

    let mut loglik = 0.0;
    let mut var = 0.0;
    for n in 0..len {
        let ps = &per[n * r_count..(n + 1) * r_count];
        let mean = stable_mean(ps);
        loglik += mean.ln();
        if r_count > 1 {
            let sd2 = ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (r_count - 1) as f64;
            // delta method for log(mean)
            var += sd2 / r_count as f64 / (mean * mean);
        }
    }
    DocEstimate {
        loglik,
        stderr: var.sqrt(),
    }
}

/// Left-to-right estimate of `log p(doc | phi, alpha)` in nats, with its
/// Monte Carlo standard error.
pub fn left_to_right_estimate(
    doc: &[u32],
    phi: &Matrix,
    alpha: &[f64],
    cfg: &HeldoutConfig,
) -> Result<DocEstimate> {
    cfg.validate()?;
    check_model(phi, alpha)?;
    check_doc(doc, phi.cols())?;
    Ok(left_to_right_unchecked(doc, phi, alpha, cfg))
}

pub fn left_to_right_doc(
    doc: &[u32],
    phi: &Matrix,
    alpha: &[f64],
    cfg: &HeldoutConfig,
) -> Result<f64> {
    left_to_right_estimate(doc, phi, alpha, cfg).map(|e| e.loglik)
}

/// Exact `log p(doc | phi, alpha)` by summing over all `K^len` assignments
/// with Polya-urn weights for the topic sequence.
pub fn exact_doc_loglik(doc: &[u32], phi: &Matrix, alpha: &[f64]) -> Result<f64> {
    check_model(phi, alpha)?;
    check_doc(doc, phi.cols())?;
    let k = alpha.len();
    let configurations = (k as f64).powi(doc.len() as i32);
    if configurations > MAX_ENUMERATION {
        return Err(Error::Intractable {
            configurations,
            limit: MAX_ENUMERATION,
        });
    }
    let alpha_sum: f64 = alpha.iter().sum();

    fn walk(
        n: usize,
        doc: &[u32],
        phi: &Matrix,
        alpha: &[f64],
        alpha_sum: f64,
        counts: &mut [u32],
    ) -> f64 {
        if n == doc.len() {
            return 1.0;
        }
        let mut total = 0.0;
        for t in 0..alpha.len() {
            let p_topic = (f64::from(counts[t]) + alpha[t]) / (n as f64 + alpha_sum);
            let p_word = phi.get(t, doc[n] as usize);
            if p_word == 0.0 {
                continue;
            }
            counts[t] += 1;
            total += p_topic * p_word * walk(n + 1, doc, phi, alpha, alpha_sum, counts);
            counts[t] -= 1;
        }
        total
    }

    let mut counts = vec![0u32; k];
    Ok(walk(0, doc, phi, alpha, alpha_sum, &mut counts).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocResult {
    pub doc_id: String,
    pub tokens: usize,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    /// Negative log-likelihood per token, in nats.
    pub perplexity: f64,
    /// Standard error of the per-document negative log-likelihood per token.
    pub stderr: f64,
    pub tokens: usize,
    pub particles: usize,
    pub seed: u64,
    pub docs: Vec<DocResult>,
}

/// Seed for one held-out document: derived from its identifier so that the
/// estimate does not depend on where the document sits in the corpus.
pub fn doc_seed(seed: u64, doc_id: &str) -> u64 {
    rng::mix(seed, rng::stable_hash(doc_id.as_bytes()))
}

/// Held-out perplexity `-sum_d log p(w_d) / N'` over a test corpus.
pub fn perplexity(
    test: &Corpus,
    phi: &Matrix,
    alpha: &[f64],
    cfg: &HeldoutConfig,
) -> Result<PerplexityReport> {
    cfg.validate()?;
    check_model(phi, alpha)?;
    if test.is_empty() {
        return Err(Error::InvalidInput("test corpus is empty".into()));
    }
    if test.vocab_size() != phi.cols() {
        return Err(Error::Model(format!(
            "topics cover {} products but the corpus vocabulary has {}",
            phi.cols(),
            test.vocab_size()
        )));
    }
    let docs: Vec<DocResult> = test
        .docs()
        .par_iter()
        .zip(test.doc_ids().par_iter())
        .map(|(doc, id)| {
            check_doc(doc, phi.cols())?;
            let doc_cfg = HeldoutConfig {
                seed: doc_seed(cfg.seed, id),
                ..*cfg
            };
            Ok(DocResult {
                doc_id: id.clone(),
                tokens: doc.len(),
                loglik: left_to_right_unchecked(doc, phi, alpha, &doc_cfg).loglik,
            })
        })
        .collect::<Result<_>>()?;

    // sorted summation keeps the total independent of document order
    let mut lls: Vec<f64> = docs.iter().map(|d| d.loglik).collect();
    lls.sort_by(f64::total_cmp);
    let total_ll: f64 = lls.iter().sum();
    let tokens = test.num_tokens();
    let perplexity = -total_ll / tokens as f64;

    let mut per_token: Vec<f64> = docs.iter().map(|d| -d.loglik / d.tokens as f64).collect();
    per_token.sort_by(f64::total_cmp);
    let stderr = crate::metrics::mean_se(&per_token).map_or(0.0, |m| m.se);

    Ok(PerplexityReport {
        perplexity,
        stderr,
        tokens,
        particles: cfg.particles,
        seed: cfg.seed,
        docs,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::Vocabulary;

    fn phi(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn single_topic_is_exact_for_any_particle_count() {
        let p = phi(&[&[0.2, 0.3, 0.5]]);
        let analytic = 0.2f64.ln() + 0.3f64.ln();
        for particles in [1, 2, 7, 30, 100] {
            let cfg = HeldoutConfig {
                particles,
                seed: particles as u64,
                ..HeldoutConfig::default()
            };
            let est = left_to_right_doc(&[0, 1], &p, &[0.7], &cfg).unwrap();
            assert_eq!(est, analytic);
        }
        assert!((analytic + 2.813_410_716_760_036).abs() < 1e-12);
    }

    #[test]
    fn single_token_is_exact() {
        let p = phi(&[&[0.1, 0.9], &[0.6, 0.4], &[0.5, 0.5]]);
        let alpha = [0.2, 1.0, 0.3];
        let expected: f64 = (0.2 / 1.5 * 0.9 + 1.0 / 1.5 * 0.4 + 0.3 / 1.5 * 0.5f64).ln();
        let est = left_to_right_doc(&[1], &p, &alpha, &HeldoutConfig::default()).unwrap();
        assert!((est - expected).abs() < 1e-14);
        let exact = exact_doc_loglik(&[1], &p, &alpha).unwrap();
        assert!((exact - expected).abs() < 1e-14);
    }

    #[test]
    fn exact_enumeration_hand_case() {
        let p = phi(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let ll = exact_doc_loglik(&[0, 1], &p, &[0.5, 0.5]).unwrap();
        // only z = (0, 1) explains the document: (0.5 / 1) * (0.5 / 2)
        assert!((ll - 0.125f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn exact_single_topic_and_identical_topics() {
        let p1 = phi(&[&[0.2, 0.3, 0.5]]);
        let ll = exact_doc_loglik(&[0, 2, 1], &p1, &[1.0]).unwrap();
        assert!((ll - (0.2f64.ln() + 0.5f64.ln() + 0.3f64.ln())).abs() < 1e-14);
        let p2 = phi(&[&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]]);
        let ll2 = exact_doc_loglik(&[0, 2], &p2, &[0.4, 0.4]).unwrap();
        let ll1 = exact_doc_loglik(&[0, 2], &p1, &[0.8]).unwrap();
        assert!((ll1 - ll2).abs() < 1e-14);
    }

    #[test]
    fn exact_guard() {
        let p = phi(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let doc = vec![0u32; 21];
        assert!(matches!(
            exact_doc_loglik(&doc, &p, &[1.0, 1.0]),
            Err(Error::Intractable { .. })
        ));
    }

    #[test]
    fn input_errors() {
        let p = phi(&[&[0.5, 0.5]]);
        assert!(matches!(
            left_to_right_doc(&[2], &p, &[1.0], &HeldoutConfig::default()),
            Err(Error::Oov { token: 2, .. })
        ));
        let bad = phi(&[&[0.5, 0.6]]);
        assert!(matches!(
            left_to_right_doc(&[0], &bad, &[1.0], &HeldoutConfig::default()),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn estimate_is_deterministic() {
        let p = phi(&[&[0.7, 0.2, 0.1], &[0.1, 0.3, 0.6]]);
        let cfg = HeldoutConfig {
            particles: 50,
            seed: 3,
            ..HeldoutConfig::default()
        };
        let a = left_to_right_doc(&[0, 1, 2], &p, &[0.5, 0.5], &cfg).unwrap();
        let b = left_to_right_doc(&[0, 1, 2], &p, &[0.5, 0.5], &cfg).unwrap();
        assert_eq!(a, b);
    }

    fn corpus(v: usize, docs: Vec<Vec<u32>>, ids: Vec<&str>) -> Corpus {
        let labels = (0..v).map(|i| format!("w{i}")).collect();
        let vocab = Arc::new(Vocabulary::from_parts(labels, vec![1; v]).unwrap());
        Corpus::new(vocab, docs, ids.into_iter().map(String::from).collect(), 1).unwrap()
    }

    #[test]
    fn uniform_topics_give_log_v() {
        let v = 10_000;
        let p = Matrix::from_vec(2, v, vec![1.0 / v as f64; 2 * v]).unwrap();
        let c = corpus(v, vec![vec![1, 2, 3], vec![9_999, 4]], vec!["a", "b"]);
        let r = perplexity(&c, &p, &[0.3, 1.1], &HeldoutConfig::default()).unwrap();
        assert!((r.perplexity - (v as f64).ln()).abs() < 1e-9);
        assert!((r.perplexity - 9.2103).abs() < 1e-4);
    }

    #[test]
    fn single_topic_perplexity() {
        let p = phi(&[&[0.2, 0.3, 0.5]]);
        let c = corpus(3, vec![vec![0, 1]], vec!["only"]);
        let r = perplexity(&c, &p, &[3.0], &HeldoutConfig::default()).unwrap();
        assert!((r.perplexity - 1.406_705_358_380_018_2).abs() < 1e-12);
        assert_eq!(r.tokens, 2);
        assert_eq!(r.docs.len(), 1);
    }

    #[test]
    fn perplexity_ignores_document_order() {
        let p = phi(&[&[0.4, 0.3, 0.2, 0.1], &[0.05, 0.15, 0.3, 0.5]]);
        let docs = vec![vec![0, 1, 2], vec![3, 2], vec![1, 3, 0, 2], vec![2, 0]];
        let ids = vec!["a", "b", "c", "d"];
        let fwd = corpus(4, docs.clone(), ids.clone());
        let rev = corpus(
            4,
            docs.into_iter().rev().collect(),
            ids.into_iter().rev().collect(),
        );
        let cfg = HeldoutConfig {
            seed: 17,
            ..HeldoutConfig::default()
        };
        let a = perplexity(&fwd, &p, &[0.5, 0.5], &cfg).unwrap();
        let b = perplexity(&rev, &p, &[0.5, 0.5], &cfg).unwrap();
        assert_eq!(a.perplexity, b.perplexity);
    }
}
