//! Collapsed Gibbs sampling for LDA over bag-of-products corpora.
//!
//! The topic-product and document-topic distributions are integrated out;
//! the chain moves over per-token topic assignments only. Topic matrices are
//! recovered from the assignment counts by their conditional posterior means.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, Rng};

pub const DEFAULT_ALPHA_SUM: f64 = 3.0;
pub const DEFAULT_BETA: f64 = 0.01;

/// Fixed Dirichlet hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    alpha_sum: f64,
    beta_sum: f64,
}

impl HyperParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Config("number of topics must be at least 1".into()));
        }
        if beta.is_empty() {
            return Err(Error::Config("vocabulary must not be empty".into()));
        }
        if alpha
            .iter()
            .chain(&beta)
            .any(|x| !(*x > 0.0 && x.is_finite()))
        {
            return Err(Error::Config(
                "hyperparameters must be positive and finite".into(),
            ));
        }
        let alpha_sum = alpha.iter().sum();
        let beta_sum = beta.iter().sum();
        Ok(HyperParams {
            alpha,
            beta,
            alpha_sum,
            beta_sum,
        })
    }

    /// `alpha_k = alpha_sum / topics`, `beta_v = beta`.
    pub fn symmetric(topics: usize, alpha_sum: f64, beta: f64, vocab_size: usize) -> Result<Self> {
        if topics == 0 {
            return Err(Error::Config("number of topics must be at least 1".into()));
        }
        Self::new(
            vec![alpha_sum / topics as f64; topics],
            vec![beta; vocab_size],
        )
    }

    pub fn topics(&self) -> usize {
        self.alpha.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.beta.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_sum(&self) -> f64 {
        self.alpha_sum
    }

    pub fn beta_sum(&self) -> f64 {
        self.beta_sum
    }
}

/// Topic assignments and their sufficient statistics.
///
/// Counts are stored word-major (`word_topic[v * K + k]`) so the inner loop
/// over topics reads contiguous memory.
#[derive(Debug, Clone)]
pub struct SamplerState {
    topics: usize,
    vocab_size: usize,
    words: Vec<u32>,
    doc_start: Vec<usize>,
    z: Vec<u32>,
    word_topic: Vec<u32>,
    doc_topic: Vec<u32>,
    topic_total: Vec<u64>,
    rng: Rng,
    iteration: usize,
}

impl SamplerState {
    fn empty(corpus: &Corpus, hp: &HyperParams, seed: u64) -> Result<Self> {
        let k = hp.topics();
        if k == 0 {
            return Err(Error::Config("number of topics must be at least 1".into()));
        }
        if hp.vocab_size() != corpus.vocab_size() {
            return Err(Error::Config(format!(
                "beta has {} entries but the vocabulary has {}",
                hp.vocab_size(),
                corpus.vocab_size()
            )));
        }
        if k > u32::MAX as usize {
            return Err(Error::Config("too many topics".into()));
        }
        let mut doc_start = Vec::with_capacity(corpus.num_docs() + 1);
        let mut words = Vec::with_capacity(corpus.num_tokens());
        for doc in corpus.docs() {
            doc_start.push(words.len());
            words.extend_from_slice(doc);
        }
        doc_start.push(words.len());
        Ok(SamplerState {
            topics: k,
            vocab_size: corpus.vocab_size(),
            z: vec![0; words.len()],
            words,
            doc_start,
            word_topic: vec![0; corpus.vocab_size() * k],
            doc_topic: vec![0; corpus.num_docs() * k],
            topic_total: vec![0; k],
            rng: rng::seeded(seed),
            iteration: 0,
        })
    }

    /// Uniformly random initial assignments.
    pub fn init(corpus: &Corpus, hp: &HyperParams, seed: u64) -> Result<Self> {
        use rand::Rng as _;
        let mut s = Self::empty(corpus, hp, seed)?;
        let k = s.topics as u32;
        for pos in 0..s.z.len() {
            s.z[pos] = s.rng.random_range(0..k);
        }
        s.rebuild_counts();
        Ok(s)
    }

    /// State with the given per-document assignments.
    pub fn from_assignments(
        corpus: &Corpus,
        hp: &HyperParams,
        assignments: &[Vec<u32>],
        seed: u64,
    ) -> Result<Self> {
        let mut s = Self::empty(corpus, hp, seed)?;
        if assignments.len() != corpus.num_docs() {
            return Err(Error::InvalidInput(
                "one assignment vector per document".into(),
            ));
        }
        for (d, za) in assignments.iter().enumerate() {
            if za.len() != corpus.doc(d).len() || za.iter().any(|&t| t as usize >= s.topics) {
                return Err(Error::InvalidInput(format!(
                    "bad assignments for document {d}"
                )));
            }
            s.z[s.doc_start[d]..s.doc_start[d + 1]].copy_from_slice(za);
        }
        s.rebuild_counts();
        Ok(s)
    }

    fn rebuild_counts(&mut self) {
        let (wt, dt, nk) = self.recount();
        self.word_topic = wt;
        self.doc_topic = dt;
        self.topic_total = nk;
    }

    fn recount(&self) -> (Vec<u32>, Vec<u32>, Vec<u64>) {
        let k = self.topics;
        let mut wt = vec![0u32; self.vocab_size * k];
        let mut dt = vec![0u32; self.num_docs() * k];
        let mut nk = vec![0u64; k];
        for d in 0..self.num_docs() {
            for pos in self.doc_start[d]..self.doc_start[d + 1] {
                let (w, t) = (self.words[pos] as usize, self.z[pos] as usize);
                wt[w * k + t] += 1;
                dt[d * k + t] += 1;
                nk[t] += 1;
            }
        }
        (wt, dt, nk)
    }

    /// Recomputes all counts from the assignments and compares them with the
    /// stored ones.
    pub fn check_consistency(&self) -> Result<()> {
        let (wt, dt, nk) = self.recount();
        if wt != self.word_topic {
            return Err(Error::StateCorruption(
                "word-topic counts disagree with z".into(),
            ));
        }
        if dt != self.doc_topic {
            return Err(Error::StateCorruption(
                "doc-topic counts disagree with z".into(),
            ));
        }
        if nk != self.topic_total {
            return Err(Error::StateCorruption(
                "topic totals disagree with z".into(),
            ));
        }
        Ok(())
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_docs(&self) -> usize {
        self.doc_start.len() - 1
    }

    pub fn num_tokens(&self) -> usize {
        self.words.len()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn doc_assignments(&self, d: usize) -> &[u32] {
        &self.z[self.doc_start[d]..self.doc_start[d + 1]]
    }

    /// All assignments, flattened in document-then-position order.
    pub fn assignments(&self) -> &[u32] {
        &self.z
    }

    pub fn doc_len(&self, d: usize) -> usize {
        self.doc_start[d + 1] - self.doc_start[d]
    }

    pub fn word_topic_count(&self, k: usize, v: usize) -> u32 {
        self.word_topic[v * self.topics + k]
    }

    pub fn doc_topic_count(&self, d: usize, k: usize) -> u32 {
        self.doc_topic[d * self.topics + k]
    }

    pub fn topic_total(&self, k: usize) -> u64 {
        self.topic_total[k]
    }

    /// Relabels topics: old topic `k` becomes `perm[k]`.
    pub fn permute_topics(&self, perm: &[usize]) -> Result<Self> {
        let k = self.topics;
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..k).collect::<Vec<_>>() {
            return Err(Error::InvalidInput(
                "not a permutation of the topics".into(),
            ));
        }
        let mut out = self.clone();
        for t in out.z.iter_mut() {
            *t = perm[*t as usize] as u32;
        }
        out.rebuild_counts();
        Ok(out)
    }

    fn check_token(&self, d: usize, i: usize) -> Result<usize> {
        if d >= self.num_docs() || i >= self.doc_len(d) {
            return Err(Error::InvalidInput(format!("no token ({d}, {i})")));
        }
        Ok(self.doc_start[d] + i)
    }

    /// Unnormalized full conditional for token `i` of document `d`, with the
    /// token's own current assignment excluded from the counts.
    pub fn full_conditional(&self, hp: &HyperParams, d: usize, i: usize) -> Result<Vec<f64>> {
        let pos = self.check_token(d, i)?;
        let k = self.topics;
        let (w, cur) = (self.words[pos] as usize, self.z[pos] as usize);
        let mut word_counts = self.word_topic[w * k..(w + 1) * k].to_vec();
        let mut doc_counts = self.doc_topic[d * k..(d + 1) * k].to_vec();
        let mut totals: Vec<u64> = self.topic_total.clone();
        let corrupt = || Error::StateCorruption(format!("negative count at token ({d}, {i})"));
        word_counts[cur] = word_counts[cur].checked_sub(1).ok_or_else(corrupt)?;
        doc_counts[cur] = doc_counts[cur].checked_sub(1).ok_or_else(corrupt)?;
        totals[cur] = totals[cur].checked_sub(1).ok_or_else(corrupt)?;
        let mut out = vec![0.0; k];
        conditional_weights(
            &word_counts,
            &totals,
            &doc_counts,
            hp.beta[w],
            hp.beta_sum,
            &hp.alpha,
            &mut out,
        );
        Ok(out)
    }

    /// One systematic scan over all tokens in document-then-position order.
    pub fn sweep(&mut self, hp: &HyperParams) -> Result<()> {
        let k = self.topics;
        let beta_sum = hp.beta_sum;
        let mut inv_denom: Vec<f64> = self
            .topic_total
            .iter()
            .map(|&n| 1.0 / (n as f64 + beta_sum))
            .collect();
        let mut cumulative = vec![0.0f64; k];
        for d in 0..self.num_docs() {
            let dt = &mut self.doc_topic[d * k..(d + 1) * k];
            for pos in self.doc_start[d]..self.doc_start[d + 1] {
                let w = self.words[pos] as usize;
                let old = self.z[pos] as usize;
                let wt = &mut self.word_topic[w * k..(w + 1) * k];
                if wt[old] == 0 || dt[old] == 0 || self.topic_total[old] == 0 {
                    return Err(Error::StateCorruption(format!(
                        "negative count at document {d}, position {}",
                        pos - self.doc_start[d]
                    )));
                }
                wt[old] -= 1;
                dt[old] -= 1;
                self.topic_total[old] -= 1;
                inv_denom[old] = 1.0 / (self.topic_total[old] as f64 + beta_sum);

                let beta_w = hp.beta[w];
                let mut total = 0.0;
                for t in 0..k {
                    total += (f64::from(wt[t]) + beta_w)
                        * inv_denom[t]
                        * (f64::from(dt[t]) + hp.alpha[t]);
                    cumulative[t] = total;
                }
                let u = rand::Rng::random::<f64>(&mut self.rng) * total;
                let new = cumulative.iter().position(|&c| u < c).unwrap_or(k - 1);

                wt[new] += 1;
                dt[new] += 1;
                self.topic_total[new] += 1;
                inv_denom[new] = 1.0 / (self.topic_total[new] as f64 + beta_sum);
                self.z[pos] = new as u32;
            }
        }
        self.iteration += 1;
        Ok(())
    }

    /// Posterior mean of the topic-product matrix.
    pub fn estimate_phi(&self, hp: &HyperParams) -> Matrix {
        let (k, v) = (self.topics, self.vocab_size);
        let mut phi = Matrix::zeros(k, v);
        for t in 0..k {
            let denom = self.topic_total[t] as f64 + hp.beta_sum;
            let row = phi.row_mut(t);
            for (w, p) in row.iter_mut().enumerate() {
                *p = (f64::from(self.word_topic[w * k + t]) + hp.beta[w]) / denom;
            }
        }
        phi
    }

    /// Posterior mean of the document-topic matrix.
    pub fn estimate_theta(&self, hp: &HyperParams) -> Matrix {
        let k = self.topics;
        let mut theta = Matrix::zeros(self.num_docs(), k);
        for d in 0..self.num_docs() {
            let denom = self.doc_len(d) as f64 + hp.alpha_sum;
            let counts = &self.doc_topic[d * k..(d + 1) * k];
            for (t, p) in theta.row_mut(d).iter_mut().enumerate() {
                *p = (f64::from(counts[t]) + hp.alpha[t]) / denom;
            }
        }
        theta
    }

    /// `log p(w, z | alpha, beta)` with both Dirichlet layers integrated out.
    ///
    /// Per-topic and per-document terms are summed in sorted order so that
    /// relabelling topics (under a symmetric prior) gives the same bits.
    pub fn collapsed_loglik(&self, hp: &HyperParams) -> f64 {
        let (k, v) = (self.topics, self.vocab_size);
        let lg = libm::lgamma;
        let mut topic_terms: Vec<f64> = (0..k)
            .map(|t| {
                let mut s = lg(hp.beta_sum) - lg(self.topic_total[t] as f64 + hp.beta_sum);
                for w in 0..v {
                    let n = self.word_topic[w * k + t];
                    if n > 0 {
                        s += lg(f64::from(n) + hp.beta[w]) - lg(hp.beta[w]);
                    }
                }
                s
            })
            .collect();
        topic_terms.sort_by(f64::total_cmp);
        let mut total: f64 = topic_terms.iter().sum();

        let mut doc_terms = Vec::with_capacity(k);
        for d in 0..self.num_docs() {
            doc_terms.clear();
            let counts = &self.doc_topic[d * k..(d + 1) * k];
            for (t, &n) in counts.iter().enumerate() {
                if n > 0 {
                    doc_terms.push(lg(f64::from(n) + hp.alpha[t]) - lg(hp.alpha[t]));
                }
            }
            doc_terms.sort_by(f64::total_cmp);
            let s: f64 = doc_terms.iter().sum();
            total += s + lg(hp.alpha_sum) - lg(self.doc_len(d) as f64 + hp.alpha_sum);
        }
        total
    }
}

/// Unnormalized full-conditional weights
/// `(n_wk + beta_w) / (n_k + beta_sum) * (n_dk + alpha_k)` for every topic,
/// given counts that already exclude the token being resampled. The
/// document-length denominator is constant in `k` and omitted.
pub fn conditional_weights(
    word_counts: &[u32],
    topic_totals: &[u64],
    doc_counts: &[u32],
    beta_w: f64,
    beta_sum: f64,
    alpha: &[f64],
    out: &mut [f64],
) {
    for (t, o) in out.iter_mut().enumerate() {
        *o = (f64::from(word_counts[t]) + beta_w) / (topic_totals[t] as f64 + beta_sum)
            * (f64::from(doc_counts[t]) + alpha[t]);
    }
}

pub fn init_state(corpus: &Corpus, hp: &HyperParams, seed: u64) -> Result<SamplerState> {
    SamplerState::init(corpus, hp, seed)
}

pub fn full_conditional(
    state: &SamplerState,
    hp: &HyperParams,
    d: usize,
    i: usize,
) -> Result<Vec<f64>> {
    state.full_conditional(hp, d, i)
}

pub fn gibbs_sweep(state: &mut SamplerState, hp: &HyperParams) -> Result<()> {
    state.sweep(hp)
}

pub fn estimate_phi(state: &SamplerState, hp: &HyperParams) -> Matrix {
    state.estimate_phi(hp)
}

pub fn estimate_theta(state: &SamplerState, hp: &HyperParams) -> Matrix {
    state.estimate_theta(hp)
}

pub fn collapsed_loglik(state: &SamplerState, hp: &HyperParams) -> f64 {
    state.collapsed_loglik(hp)
}

/// One recorded draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub phi: Matrix,
    pub theta: Option<Matrix>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub chain_id: u64,
    pub iteration: usize,
    pub seed: u64,
}

impl PosteriorSample {
    pub fn topics(&self) -> usize {
        self.phi.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.phi.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub lag: usize,
    pub chains: usize,
    pub seed: u64,
    pub loglik_every: usize,
    pub keep_theta: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 50_000,
            burn_in: 30_000,
            lag: 5_000,
            chains: 4,
            seed: 0,
            loglik_every: 10,
            keep_theta: false,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.lag == 0 {
            return Err(Error::Config("lag must be at least 1".into()));
        }
        if (self.iterations - self.burn_in) / self.lag < 1 {
            return Err(Error::Config(format!(
                "lag {} leaves only one recorded sample after burn-in",
                self.lag
            )));
        }
        if self.chains == 0 {
            return Err(Error::Config("at least one chain is required".into()));
        }
        if self.loglik_every == 0 {
            return Err(Error::Config(
                "log-likelihood interval must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Iterations at which samples are recorded: `burn_in, burn_in + lag, ...`
    /// up to and including `iterations`.
    pub fn recorded_iterations(&self) -> Vec<usize> {
        (self.burn_in..=self.iterations)
            .step_by(self.lag.max(1))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub chain_id: u64,
    pub samples: Vec<PosteriorSample>,
    pub trace: Vec<TracePoint>,
}

/// Runs one chain. Iteration 0 is the random initial state; iteration `t`
/// is the state after `t` sweeps.
pub fn run_chain(
    corpus: &Corpus,
    hp: &HyperParams,
    cfg: &ChainConfig,
    chain_id: u64,
) -> Result<ChainOutput> {
    cfg.validate()?;
    let seed = rng::chain_seed(cfg.seed, chain_id);
    let mut state = SamplerState::init(corpus, hp, seed)?;
    let mut samples = Vec::with_capacity(cfg.recorded_iterations().len());
    let mut trace = Vec::with_capacity(cfg.iterations / cfg.loglik_every + 1);
    for t in 0..=cfg.iterations {
        if t > 0 {
            state.sweep(hp)?;
        }
        if t % cfg.loglik_every == 0 {
            trace.push(TracePoint {
                iteration: t,
                loglik: state.collapsed_loglik(hp),
            });
        }
        if t >= cfg.burn_in && (t - cfg.burn_in).is_multiple_of(cfg.lag) {
            log::debug!("chain {chain_id}: recording sample at iteration {t}");
            samples.push(PosteriorSample {
                phi: state.estimate_phi(hp),
                theta: cfg.keep_theta.then(|| state.estimate_theta(hp)),
                alpha: hp.alpha.clone(),
                beta: hp.beta.clone(),
                chain_id,
                iteration: t,
                seed: cfg.seed,
            });
        }
    }
    Ok(ChainOutput {
        chain_id,
        samples,
        trace,
    })
}

/// Runs `cfg.chains` independent chains with ids
/// `first_chain_id .. first_chain_id + chains`, in parallel.
pub fn run_chains(
    corpus: &Corpus,
    hp: &HyperParams,
    cfg: &ChainConfig,
    first_chain_id: u64,
) -> Result<Vec<ChainOutput>> {
    cfg.validate()?;
    (0..cfg.chains as u64)
        .into_par_iter()
        .map(|c| run_chain(corpus, hp, cfg, first_chain_id + c))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticSpec, Vocabulary};

    fn corpus(v: usize, docs: Vec<Vec<u32>>) -> Corpus {
        let labels = (0..v).map(|i| format!("w{i}")).collect();
        let vocab = Arc::new(Vocabulary::from_parts(labels, vec![1; v]).unwrap());
        let ids = (0..docs.len()).map(|i| i.to_string()).collect();
        Corpus::new(vocab, docs, ids, 1).unwrap()
    }

    fn synthetic() -> Corpus {
        let mut spec = SyntheticSpec::new(4, 40, 25, 3);
        spec.doc_len = crate::corpus::DocLength::Fixed(4);
        generate_synthetic(&spec).unwrap().0
    }

    #[test]
    fn symmetric_defaults() {
        let hp = HyperParams::symmetric(50, DEFAULT_ALPHA_SUM, DEFAULT_BETA, 10).unwrap();
        assert!((hp.alpha()[0] - 0.06).abs() < 1e-15);
        assert!((hp.alpha_sum() - 3.0).abs() < 1e-12);
        assert!((hp.beta_sum() - 0.1).abs() < 1e-12);
        assert!(matches!(
            HyperParams::symmetric(0, 3.0, 0.01, 10),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_topic_init() {
        let c = synthetic();
        let hp = HyperParams::symmetric(1, 3.0, 0.01, c.vocab_size()).unwrap();
        let s = init_state(&c, &hp, 1).unwrap();
        assert!(s.assignments().iter().all(|&t| t == 0));
        assert_eq!(s.topic_total(0), c.num_tokens() as u64);
    }

    #[test]
    fn init_is_deterministic_and_consistent() {
        let c = synthetic();
        let hp = HyperParams::symmetric(4, 3.0, 0.01, c.vocab_size()).unwrap();
        let a = init_state(&c, &hp, 42).unwrap();
        let b = init_state(&c, &hp, 42).unwrap();
        assert_eq!(a.assignments(), b.assignments());
        a.check_consistency().unwrap();
        let total: u64 = (0..4).map(|k| a.topic_total(k)).sum();
        assert_eq!(total, c.num_tokens() as u64);
        // brute recount straight from z
        for k in 0..4 {
            for v in 0..c.vocab_size() {
                let mut n = 0;
                for d in 0..c.num_docs() {
                    for (i, &w) in c.doc(d).iter().enumerate() {
                        if w as usize == v && a.doc_assignments(d)[i] as usize == k {
                            n += 1;
                        }
                    }
                }
                assert_eq!(a.word_topic_count(k, v), n);
            }
        }
    }

    #[test]
    fn conditional_kernel_hand_case() {
        // K=2, V=3, beta=0.1 (beta_sum 0.3), alpha=0.5 (alpha_sum 1)
        let mut out = [0.0; 2];
        conditional_weights(&[2, 0], &[5, 3], &[1, 1], 0.1, 0.3, &[0.5, 0.5], &mut out);
        let expected = [(2.1 / 5.3) * 1.5, (0.1 / 3.3) * 1.5];
        assert!((out[0] - expected[0]).abs() < 1e-15);
        assert!((out[1] - expected[1]).abs() < 1e-15);
        let s = out[0] + out[1];
        assert!((out[0] / s - 0.928_954_423_592_493_4).abs() < 1e-12);
        assert!((out[1] / s - 0.071_045_576_407_506_72).abs() < 1e-12);
    }

    #[test]
    fn full_conditional_excludes_current_token() {
        // token (0, 0) is word 0 on topic 0; without it the counts are
        // topic 0: n_w=2, n_k=5, n_dk=1 and topic 1: n_w=0, n_k=3, n_dk=1
        let c = corpus(3, vec![vec![0, 1, 2], vec![0, 1, 2], vec![0, 1, 2]]);
        let hp = HyperParams::new(vec![0.5, 0.5], vec![0.1; 3]).unwrap();
        let z = vec![vec![0, 0, 1], vec![0, 0, 0], vec![0, 1, 1]];
        let s = SamplerState::from_assignments(&c, &hp, &z, 0).unwrap();
        let w = s.full_conditional(&hp, 0, 0).unwrap();
        let expected = [(2.1 / 5.3) * 1.5, (0.1 / 3.3) * 1.5];
        assert!((w[0] - expected[0]).abs() < 1e-15, "{w:?}");
        assert!((w[1] - expected[1]).abs() < 1e-15, "{w:?}");
    }

    #[test]
    fn full_conditional_degenerate_and_symmetric() {
        let c = corpus(2, vec![vec![0, 1]]);
        let hp = HyperParams::symmetric(1, 1.0, 0.5, 2).unwrap();
        let s = SamplerState::from_assignments(&c, &hp, &[vec![0, 0]], 0).unwrap();
        assert_eq!(s.full_conditional(&hp, 0, 0).unwrap().len(), 1);

        // removing doc 2's token leaves topic 0 = {w0} and topic 1 = {w0}
        let c = corpus(2, vec![vec![0], vec![0], vec![1]]);
        let hp = HyperParams::symmetric(2, 1.0, 0.5, 2).unwrap();
        let z = vec![vec![0], vec![1], vec![0]];
        let s = SamplerState::from_assignments(&c, &hp, &z, 0).unwrap();
        let w = s.full_conditional(&hp, 2, 0).unwrap();
        assert_eq!(w[0], w[1]);
    }

    #[test]
    fn corrupted_counts_are_detected() {
        let c = corpus(2, vec![vec![0, 1]]);
        let hp = HyperParams::symmetric(2, 1.0, 0.5, 2).unwrap();
        let mut s = SamplerState::from_assignments(&c, &hp, &[vec![0, 1]], 0).unwrap();
        s.word_topic[0] = 0;
        assert!(matches!(
            s.full_conditional(&hp, 0, 0),
            Err(Error::StateCorruption(_))
        ));
        assert!(matches!(s.sweep(&hp), Err(Error::StateCorruption(_))));
        assert!(s.check_consistency().is_err());
    }

    #[test]
    fn single_topic_sweep_only_advances_iteration() {
        let c = synthetic();
        let hp = HyperParams::symmetric(1, 3.0, 0.01, c.vocab_size()).unwrap();
        let mut s = init_state(&c, &hp, 9).unwrap();
        let before = s.assignments().to_vec();
        s.sweep(&hp).unwrap();
        assert_eq!(s.assignments(), &before[..]);
        assert_eq!(s.iteration(), 1);
    }

    #[test]
    fn counts_stay_consistent_across_sweeps() {
        let c = synthetic();
        let hp = HyperParams::symmetric(4, 3.0, 0.01, c.vocab_size()).unwrap();
        let mut s = init_state(&c, &hp, 5).unwrap();
        for _ in 0..25 {
            s.sweep(&hp).unwrap();
            s.check_consistency().unwrap();
        }
    }

    #[test]
    fn phi_hand_case() {
        let c = corpus(
            3,
            vec![vec![0, 1, 2], vec![0, 1, 2], vec![2, 1], vec![2], vec![2]],
        );
        let hp = HyperParams::new(vec![1.0], vec![0.1; 3]).unwrap();
        let z = vec![vec![0; 3], vec![0; 3], vec![0; 2], vec![0], vec![0]];
        let s = SamplerState::from_assignments(&c, &hp, &z, 0).unwrap();
        let phi = s.estimate_phi(&hp);
        let expect = [2.1 / 10.3, 3.1 / 10.3, 5.1 / 10.3];
        for (a, b) in phi.row(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((phi.get(0, 0) - 0.2039).abs() < 1e-4);
        assert_eq!((phi.get(0, 1) * 1e4).round(), 3010.0);
        assert!((phi.get(0, 2) - 0.4951).abs() < 1e-4);
    }

    #[test]
    fn phi_prior_only_and_small_beta() {
        let c = corpus(4, vec![vec![0, 1]]);
        let hp = HyperParams::new(vec![1.0, 1.0], vec![0.25; 4]).unwrap();
        let s = SamplerState::from_assignments(&c, &hp, &[vec![0, 0]], 0).unwrap();
        let phi = s.estimate_phi(&hp);
        assert!(phi.row(1).iter().all(|p| (p - 0.25).abs() < 1e-15));

        let hp = HyperParams::new(vec![1.0, 1.0], vec![1e-12; 4]).unwrap();
        let phi = s.estimate_phi(&hp);
        assert!((phi.get(0, 0) - 0.5).abs() < 1e-9);
        assert!(phi.get(0, 3) < 1e-9);
    }

    #[test]
    fn theta_hand_case() {
        let c = corpus(4, vec![vec![0, 1, 2, 3]]);
        let hp = HyperParams::new(vec![1.5, 1.5], vec![0.1; 4]).unwrap();
        let s = SamplerState::from_assignments(&c, &hp, &[vec![0; 4]], 0).unwrap();
        let theta = s.estimate_theta(&hp);
        assert!((theta.get(0, 0) - 5.5 / 7.0).abs() < 1e-15);
        assert!((theta.get(0, 1) - 1.5 / 7.0).abs() < 1e-15);
        assert!((theta.get(0, 0) - 0.7857).abs() < 1e-4);

        let hp1 = HyperParams::new(vec![2.0], vec![0.1; 4]).unwrap();
        let s = SamplerState::from_assignments(&c, &hp1, &[vec![0; 4]], 0).unwrap();
        assert_eq!(s.estimate_theta(&hp1).get(0, 0), 1.0);
    }

    #[test]
    fn estimates_are_row_stochastic() {
        let c = synthetic();
        let hp = HyperParams::symmetric(4, 3.0, 0.01, c.vocab_size()).unwrap();
        let mut s = init_state(&c, &hp, 2).unwrap();
        for _ in 0..5 {
            s.sweep(&hp).unwrap();
        }
        assert!(s.estimate_phi(&hp).max_row_sum_error() < 1e-9);
        assert!(s.estimate_theta(&hp).max_row_sum_error() < 1e-9);
    }

    #[test]
    fn loglik_single_token() {
        let c = corpus(2, vec![vec![0]]);
        let hp = HyperParams::new(vec![1.0], vec![0.5, 0.5]).unwrap();
        let s = SamplerState::from_assignments(&c, &hp, &[vec![0]], 0).unwrap();
        assert!((s.collapsed_loglik(&hp) - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loglik_empty_corpus_is_zero() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let vocab = Arc::new(Vocabulary::from_parts(labels, vec![1, 1]).unwrap());
        let c = Corpus::new(vocab, vec![], vec![], 1).unwrap();
        let hp = HyperParams::symmetric(3, 3.0, 0.01, 2).unwrap();
        let s = init_state(&c, &hp, 0).unwrap();
        assert_eq!(s.collapsed_loglik(&hp), 0.0);
    }

    #[test]
    fn loglik_label_symmetry() {
        let c = synthetic();
        let hp = HyperParams::symmetric(4, 3.0, 0.01, c.vocab_size()).unwrap();
        let mut s = init_state(&c, &hp, 8).unwrap();
        for _ in 0..3 {
            s.sweep(&hp).unwrap();
        }
        let base = s.collapsed_loglik(&hp);
        assert!(base.is_finite());
        for perm in [[1, 0, 2, 3], [3, 2, 1, 0], [2, 3, 0, 1]] {
            let p = s.permute_topics(&perm).unwrap();
            assert_eq!(p.collapsed_loglik(&hp), base);
        }
    }

    #[test]
    fn recording_rule() {
        let cfg = ChainConfig::default();
        assert_eq!(
            cfg.recorded_iterations(),
            vec![30_000, 35_000, 40_000, 45_000, 50_000]
        );
        assert_eq!(cfg.recorded_iterations().len() * cfg.chains, 20);
        let cfg = ChainConfig {
            iterations: 3,
            burn_in: 0,
            lag: 1,
            ..ChainConfig::default()
        };
        assert_eq!(cfg.recorded_iterations(), vec![0, 1, 2, 3]);
        let bad = ChainConfig {
            iterations: 10,
            burn_in: 10,
            ..ChainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn run_chain_records_and_traces() {
        let c = synthetic();
        let hp = HyperParams::symmetric(4, 3.0, 0.01, c.vocab_size()).unwrap();
        let cfg = ChainConfig {
            iterations: 3,
            burn_in: 0,
            lag: 1,
            chains: 1,
            seed: 4,
            loglik_every: 1,
            keep_theta: true,
        };
        let out = run_chain(&c, &hp, &cfg, 0).unwrap();
        assert_eq!(out.samples.len(), 4);
        assert_eq!(
            out.samples.iter().map(|s| s.iteration).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
        assert_eq!(out.trace.len(), 4);
        assert!(out.samples[0].theta.is_some());

        let again = run_chain(&c, &hp, &cfg, 0).unwrap();
        assert_eq!(out.samples, again.samples);
        let other = run_chain(&c, &hp, &cfg, 1).unwrap();
        assert_ne!(
            out.trace.iter().map(|t| t.loglik).collect::<Vec<_>>(),
            other.trace.iter().map(|t| t.loglik).collect::<Vec<_>>()
        );
    }
}
