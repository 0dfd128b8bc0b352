//! Transaction corpora: vocabulary selection, basket ingestion, train/test
//! splitting, document co-occurrence counts and planted-topic synthetic data.
//!
//! A transaction is a *bag of products*: repeated units of the same product
//! count once, and order carries no meaning beyond first appearance.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

pub const DEFAULT_MIN_BASKET_SIZE: usize = 3;
pub const DEFAULT_VOCAB_SIZE: usize = 10_000;

/// One line of the basket input format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawBasket {
    pub id: String,
    pub products: Vec<String>,
}

/// Parses JSON-lines baskets. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn read_baskets<R: BufRead>(reader: R) -> Result<Vec<RawBasket>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let basket: RawBasket = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(basket);
    }
    Ok(out)
}

pub fn write_baskets<W: Write>(mut w: W, baskets: &[RawBasket]) -> Result<()> {
    for b in baskets {
        serde_json::to_writer(&mut w, b)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Product assortment with dense ids `0..V`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    labels: Vec<String>,
    index: HashMap<String, u32>,
    frequency: Vec<u64>,
}

impl Vocabulary {
    /// Keeps the `max_size` labels with the highest document frequency.
    /// Ties go to the lexicographically smaller label; ids follow the same
    /// order.
    pub fn build<I, B>(baskets: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = B>,
        B: AsRef<[String]>,
    {
        if max_size == 0 {
            return Err(Error::Config("vocabulary size must be at least 1".into()));
        }
        let mut df: HashMap<&str, u64> = HashMap::new();
        let mut seen_any = false;
        // Labels are borrowed from the baskets, so collect them first.
        let baskets: Vec<B> = baskets.into_iter().collect();
        for b in &baskets {
            seen_any = true;
            let unique: HashSet<&str> = b.as_ref().iter().map(String::as_str).collect();
            for label in unique {
                *df.entry(label).or_insert(0) += 1;
            }
        }
        if !seen_any || df.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut ranked: Vec<(&str, u64)> = df.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size);
        let (labels, frequency): (Vec<String>, Vec<u64>) =
            ranked.into_iter().map(|(l, f)| (l.to_owned(), f)).unzip();
        Self::from_parts(labels, frequency)
    }

    /// Builds a vocabulary from explicit labels and per-id frequencies.
    pub fn from_parts(labels: Vec<String>, frequency: Vec<u64>) -> Result<Self> {
        if labels.len() != frequency.len() {
            return Err(Error::InvalidInput(
                "labels and frequencies differ in length".into(),
            ));
        }
        if labels.len() > u32::MAX as usize {
            return Err(Error::InvalidInput("vocabulary too large".into()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i as u32).is_some() {
                return Err(Error::InvalidInput(format!("duplicate label {l:?}")));
            }
        }
        Ok(Vocabulary {
            labels,
            index,
            frequency,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn frequency(&self) -> &[u64] {
        &self.frequency
    }
}

pub fn build_vocabulary<I, B>(baskets: I, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = B>,
    B: AsRef<[String]>,
{
    Vocabulary::build(baskets, max_size)
}

impl AsRef<[String]> for RawBasket {
    fn as_ref(&self) -> &[String] {
        &self.products
    }
}

/// Encoded bag-of-products corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    vocab: Arc<Vocabulary>,
    docs: Vec<Vec<u32>>,
    doc_ids: Vec<String>,
    min_basket_size: usize,
    num_tokens: usize,
}

impl Corpus {
    /// Validates that every document respects `min_basket_size`, has no
    /// repeated ids and stays inside the vocabulary.
    pub fn new(
        vocab: Arc<Vocabulary>,
        docs: Vec<Vec<u32>>,
        doc_ids: Vec<String>,
        min_basket_size: usize,
    ) -> Result<Self> {
        if docs.len() != doc_ids.len() {
            return Err(Error::InvalidInput(format!(
                "{} documents but {} ids",
                docs.len(),
                doc_ids.len()
            )));
        }
        let v = vocab.len();
        let mut seen = HashSet::new();
        for (d, doc) in docs.iter().enumerate() {
            if doc.len() < min_basket_size {
                return Err(Error::InvalidInput(format!(
                    "document {d} has {} products, fewer than {min_basket_size}",
                    doc.len()
                )));
            }
            seen.clear();
            for &w in doc {
                if w as usize >= v {
                    return Err(Error::Oov {
                        token: w,
                        vocab_size: v,
                    });
                }
                if !seen.insert(w) {
                    return Err(Error::InvalidInput(format!(
                        "document {d} repeats product {w}"
                    )));
                }
            }
        }
        let num_tokens = docs.iter().map(Vec::len).sum();
        Ok(Corpus {
            vocab,
            docs,
            doc_ids,
            min_basket_size,
            num_tokens,
        })
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Vec<u32>] {
        &self.docs
    }

    pub fn doc(&self, d: usize) -> &[u32] {
        &self.docs[d]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn min_basket_size(&self) -> usize {
        self.min_basket_size
    }

    /// Renders documents back to labelled baskets.
    pub fn to_baskets(&self) -> Vec<RawBasket> {
        self.docs
            .iter()
            .zip(&self.doc_ids)
            .map(|(doc, id)| RawBasket {
                id: id.clone(),
                products: doc
                    .iter()
                    .map(|&w| self.vocab.label(w).to_owned())
                    .collect(),
            })
            .collect()
    }

    /// Same vocabulary, subset of documents in the given order.
    pub fn select(&self, indices: &[usize]) -> Corpus {
        let docs: Vec<Vec<u32>> = indices.iter().map(|&i| self.docs[i].clone()).collect();
        let doc_ids = indices.iter().map(|&i| self.doc_ids[i].clone()).collect();
        let num_tokens = docs.iter().map(Vec::len).sum();
        Corpus {
            vocab: Arc::clone(&self.vocab),
            docs,
            doc_ids,
            min_basket_size: self.min_basket_size,
            num_tokens,
        }
    }

    /// Concatenates two corpora over the same vocabulary.
    pub fn concat(&self, other: &Corpus) -> Result<Corpus> {
        if self.vocab != other.vocab {
            return Err(Error::InvalidInput(
                "cannot concatenate corpora with different vocabularies".into(),
            ));
        }
        let mut docs = self.docs.clone();
        docs.extend(other.docs.iter().cloned());
        let mut doc_ids = self.doc_ids.clone();
        doc_ids.extend(other.doc_ids.iter().cloned());
        Corpus::new(
            Arc::clone(&self.vocab),
            docs,
            doc_ids,
            self.min_basket_size.min(other.min_basket_size),
        )
    }

    /// Writes the on-disk corpus format: one JSON header line followed by one
    /// JSON object per document.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CorpusHeader {
            v: self.vocab_size(),
            d: self.num_docs(),
            n: self.num_tokens,
            min_basket_size: self.min_basket_size,
            vocab: self.vocab.labels().to_vec(),
            frequency: self.vocab.frequency().to_vec(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (doc, id) in self.docs.iter().zip(&self.doc_ids) {
            serde_json::to_writer(
                &mut w,
                &DocLine {
                    id: id.clone(),
                    items: doc.clone(),
                },
            )?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Corpus> {
        let mut lines = reader.lines().enumerate();
        let header: CorpusHeader = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?).map_err(|e| Error::Record {
                line: 1,
                message: e.to_string(),
            })?,
            None => return Err(Error::EmptyInput),
        };
        if header.vocab.len() != header.v {
            return Err(Error::Record {
                line: 1,
                message: format!("V={} but {} labels", header.v, header.vocab.len()),
            });
        }
        let vocab = Arc::new(Vocabulary::from_parts(header.vocab, header.frequency)?);
        let mut docs = Vec::with_capacity(header.d);
        let mut doc_ids = Vec::with_capacity(header.d);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: DocLine = serde_json::from_str(&line).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
            docs.push(doc.items);
            doc_ids.push(doc.id);
        }
        let corpus = Corpus::new(vocab, docs, doc_ids, header.min_basket_size)?;
        if corpus.num_docs() != header.d || corpus.num_tokens() != header.n {
            return Err(Error::InvalidInput(format!(
                "header declares D={} N={} but body has D={} N={}",
                header.d,
                header.n,
                corpus.num_docs(),
                corpus.num_tokens()
            )));
        }
        Ok(corpus)
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    #[serde(rename = "V")]
    v: usize,
    #[serde(rename = "D")]
    d: usize,
    #[serde(rename = "N")]
    n: usize,
    min_basket_size: usize,
    vocab: Vec<String>,
    frequency: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct DocLine {
    id: String,
    items: Vec<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub kept: usize,
    pub dropped_small: usize,
    pub tokens_dropped_oov: usize,
    pub duplicates_collapsed: usize,
}

/// Encodes baskets against `vocab`: out-of-vocabulary labels are dropped,
/// repeats collapse to one token, then baskets smaller than
/// `min_basket_size` are discarded.
pub fn ingest_baskets(
    baskets: &[RawBasket],
    vocab: Arc<Vocabulary>,
    min_basket_size: usize,
) -> Result<(Corpus, IngestSummary)> {
    if min_basket_size == 0 {
        return Err(Error::Config(
            "minimum basket size must be at least 1".into(),
        ));
    }
    let mut summary = IngestSummary::default();
    let mut docs = Vec::new();
    let mut doc_ids = Vec::new();
    let mut seen = HashSet::new();
    for b in baskets {
        seen.clear();
        let mut doc = Vec::with_capacity(b.products.len());
        for label in &b.products {
            match vocab.id(label) {
                None => summary.tokens_dropped_oov += 1,
                Some(id) => {
                    if seen.insert(id) {
                        doc.push(id);
                    } else {
                        summary.duplicates_collapsed += 1;
                    }
                }
            }
        }
        if doc.len() < min_basket_size {
            summary.dropped_small += 1;
            continue;
        }
        docs.push(doc);
        doc_ids.push(b.id.clone());
    }
    summary.kept = docs.len();
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok((Corpus::new(vocab, docs, doc_ids, min_basket_size)?, summary))
}

/// Like [`ingest_baskets`] but reads JSON-lines directly so malformed records
/// are reported with their line number.
pub fn ingest_jsonl<R: BufRead>(
    reader: R,
    vocab: Arc<Vocabulary>,
    min_basket_size: usize,
) -> Result<(Corpus, IngestSummary)> {
    let baskets = read_baskets(reader)?;
    ingest_baskets(&baskets, vocab, min_basket_size)
}

/// Random disjoint train/test partition. The test part holds
/// `round(test_fraction * D)` documents; both keep the original order.
pub fn split_corpus(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test fraction {test_fraction} is not in (0, 1)"
        )));
    }
    let d = corpus.num_docs();
    if d < 2 {
        return Err(Error::Split(format!("corpus has {d} document(s)")));
    }
    let n_test = (test_fraction * d as f64).round() as usize;
    if n_test == 0 || n_test == d {
        return Err(Error::Split(format!(
            "fraction {test_fraction} of {d} documents leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((corpus.select(&train), corpus.select(&test)))
}

/// Document-level product and product-pair frequencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoocStats {
    num_docs: u64,
    df: Vec<u64>,
    pair_df: HashMap<u64, u64>,
}

fn pair_key(i: u32, j: u32) -> u64 {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    (u64::from(a) << 32) | u64::from(b)
}

fn unpack_key(key: u64) -> (u32, u32) {
    ((key >> 32) as u32, key as u32)
}

impl CoocStats {
    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput);
        }
        let v = corpus.vocab_size();
        let count = |docs: &[Vec<u32>]| {
            let mut df = vec![0u64; v];
            let mut pair_df: HashMap<u64, u64> = HashMap::new();
            for doc in docs {
                for (a, &i) in doc.iter().enumerate() {
                    df[i as usize] += 1;
                    for &j in &doc[a + 1..] {
                        *pair_df.entry(pair_key(i, j)).or_insert(0) += 1;
                    }
                }
            }
            (df, pair_df)
        };
        let (df, pair_df) = corpus
            .docs()
            .par_chunks(4096)
            .map(count)
            .reduce_with(|(mut df, mut pairs), (df2, pairs2)| {
                for (a, b) in df.iter_mut().zip(df2) {
                    *a += b;
                }
                for (k, c) in pairs2 {
                    *pairs.entry(k).or_insert(0) += c;
                }
                (df, pairs)
            })
            .ok_or(Error::EmptyInput)?;
        Ok(CoocStats {
            num_docs: corpus.num_docs() as u64,
            df,
            pair_df,
        })
    }

    pub fn num_docs(&self) -> u64 {
        self.num_docs
    }

    pub fn vocab_size(&self) -> usize {
        self.df.len()
    }

    pub fn df(&self, v: u32) -> u64 {
        self.df.get(v as usize).copied().unwrap_or(0)
    }

    /// Number of documents containing both products; symmetric in its
    /// arguments. A product paired with itself yields its own frequency.
    pub fn pair_df(&self, i: u32, j: u32) -> u64 {
        if i == j {
            return self.df(i);
        }
        self.pair_df.get(&pair_key(i, j)).copied().unwrap_or(0)
    }

    pub fn prob(&self, v: u32) -> f64 {
        self.df(v) as f64 / self.num_docs as f64
    }

    pub fn joint_prob(&self, i: u32, j: u32) -> f64 {
        self.pair_df(i, j) as f64 / self.num_docs as f64
    }

    /// Nonzero pairs `(i, j, count)` with `i < j`, sorted.
    pub fn pairs(&self) -> Vec<(u32, u32, u64)> {
        let mut keys: Vec<(&u64, &u64)> = self.pair_df.iter().collect();
        keys.sort_unstable();
        keys.into_iter()
            .map(|(k, c)| {
                let (i, j) = unpack_key(*k);
                (i, j, *c)
            })
            .collect()
    }

    /// Cache format:
    ///
    /// ```text
    /// D,V
    /// <D>,<V>
    /// v,df
    /// <one row per product>
    /// i,j,pair_df
    /// <one row per co-occurring pair, sorted by (i, j)>
    /// ```
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "D,V")?;
        writeln!(w, "{},{}", self.num_docs, self.df.len())?;
        writeln!(w, "v,df")?;
        for (v, f) in self.df.iter().enumerate() {
            writeln!(w, "{v},{f}")?;
        }
        writeln!(w, "i,j,pair_df")?;
        for (i, j, c) in self.pairs() {
            writeln!(w, "{i},{j},{c}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        fn bad(line: usize, message: impl Into<String>) -> Error {
            Error::Record {
                line,
                message: message.into(),
            }
        }
        fn num(line: usize, s: &str) -> Result<u64> {
            s.trim()
                .parse()
                .map_err(|_| bad(line, format!("expected an integer, got {s:?}")))
        }
        let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
        if lines.len() < 4 || lines[0].trim() != "D,V" || lines[2].trim() != "v,df" {
            return Err(bad(1, "missing D,V / v,df headers"));
        }
        let dv: Vec<&str> = lines[1].split(',').collect();
        if dv.len() != 2 {
            return Err(bad(2, "expected D,V values"));
        }
        let num_docs = num(2, dv[0])?;
        let v = num(2, dv[1])? as usize;
        let mut df = vec![0u64; v];
        let mut idx = 3;
        for slot in df.iter_mut() {
            let line = lines
                .get(idx)
                .ok_or_else(|| bad(idx + 1, "truncated df section"))?;
            let (_, f) = line
                .split_once(',')
                .ok_or_else(|| bad(idx + 1, "expected v,df"))?;
            *slot = num(idx + 1, f)?;
            idx += 1;
        }
        if lines.get(idx).map(|l| l.trim()) != Some("i,j,pair_df") {
            return Err(bad(idx + 1, "missing i,j,pair_df header"));
        }
        idx += 1;
        let mut pair_df = HashMap::new();
        for (n, line) in lines.iter().enumerate().skip(idx) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad(n + 1, "expected i,j,pair_df"));
            }
            let (i, j, c) = (num(n + 1, f[0])?, num(n + 1, f[1])?, num(n + 1, f[2])?);
            pair_df.insert(pair_key(i as u32, j as u32), c);
        }
        Ok(CoocStats {
            num_docs,
            df,
            pair_df,
        })
    }
}

pub fn cooccurrence_stats(corpus: &Corpus) -> Result<CoocStats> {
    CoocStats::from_corpus(corpus)
}

/// Number of token draws per synthetic document, before duplicate collapsing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocLength {
    Fixed(usize),
    Uniform { min: usize, max: usize },
}

impl DocLength {
    fn min(&self) -> usize {
        match *self {
            DocLength::Fixed(n) => n,
            DocLength::Uniform { min, .. } => min,
        }
    }

    fn draw(&self, rng: &mut rng::Rng) -> usize {
        match *self {
            DocLength::Fixed(n) => n,
            DocLength::Uniform { min, max } => rng.random_range(min..=max),
        }
    }
}

/// How the planted topic-product matrix is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSpec {
    /// Explicit nonnegative rows, normalized on use.
    Rows(Vec<Vec<f64>>),
    /// Topic `k` is uniform over products `k*width .. (k+1)*width`.
    Blocks { width: usize },
    /// Each topic drawn from a symmetric Dirichlet over all products.
    Dirichlet { concentration: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub topics: usize,
    pub vocab_size: usize,
    pub docs: usize,
    pub doc_len: DocLength,
    pub alpha: Vec<f64>,
    pub phi: PhiSpec,
    pub min_basket_size: usize,
    pub seed: u64,
    /// Prefix for generated document ids.
    pub id_prefix: String,
}

impl SyntheticSpec {
    pub fn new(topics: usize, vocab_size: usize, docs: usize, seed: u64) -> Self {
        SyntheticSpec {
            topics,
            vocab_size,
            docs,
            doc_len: DocLength::Uniform { min: 5, max: 12 },
            alpha: vec![1.0; topics],
            phi: PhiSpec::Blocks {
                width: vocab_size / topics.max(1),
            },
            min_basket_size: DEFAULT_MIN_BASKET_SIZE,
            seed,
            id_prefix: "s".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub phi: Matrix,
    pub alpha: Vec<f64>,
    pub seed: u64,
}

/// Product labels used by synthetic corpora: `p0000`, `p0001`, ...
pub fn synthetic_label(v: usize, vocab_size: usize) -> String {
    let width = vocab_size.saturating_sub(1).to_string().len().max(4);
    format!("p{v:0width$}")
}

fn planted_phi(spec: &SyntheticSpec, rng: &mut rng::Rng) -> Result<Matrix> {
    let (k, v) = (spec.topics, spec.vocab_size);
    let rows: Vec<Vec<f64>> = match &spec.phi {
        PhiSpec::Rows(rows) => {
            if rows.len() != k || rows.iter().any(|r| r.len() != v) {
                return Err(Error::Spec(format!("phi rows must form a {k}x{v} matrix")));
            }
            rows.clone()
        }
        PhiSpec::Blocks { width } => {
            if *width == 0 || width * k > v {
                return Err(Error::Spec(format!(
                    "{k} blocks of width {width} do not fit in {v} products"
                )));
            }
            (0..k)
                .map(|t| {
                    let mut r = vec![0.0; v];
                    r[t * width..(t + 1) * width].fill(1.0);
                    r
                })
                .collect()
        }
        PhiSpec::Dirichlet { concentration } => {
            let g = Gamma::new(*concentration, 1.0)
                .map_err(|e| Error::Spec(format!("dirichlet concentration: {e}")))?;
            (0..k)
                .map(|_| (0..v).map(|_| g.sample(rng)).collect())
                .collect()
        }
    };
    let mut out = Matrix::zeros(k, v);
    for (t, r) in rows.iter().enumerate() {
        if r.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Spec(format!(
                "phi row {t} has a negative or non-finite entry"
            )));
        }
        let s: f64 = r.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Spec(format!("phi row {t} cannot be normalized")));
        }
        for (dst, p) in out.row_mut(t).iter_mut().zip(r) {
            *dst = p / s;
        }
    }
    Ok(out)
}

fn draw_dirichlet(gammas: &[Gamma<f64>], rng: &mut rng::Rng) -> Vec<f64> {
    let mut theta: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
    let s: f64 = theta.iter().sum();
    if s > 0.0 {
        theta.iter_mut().for_each(|t| *t /= s);
    } else {
        // every gamma draw underflowed; fall back to a random vertex
        let k = rng.random_range(0..theta.len());
        theta[k] = 1.0;
    }
    theta
}

const MAX_DOC_ATTEMPTS: usize = 10_000;

/// Samples a corpus from the LDA generative process with planted topics.
///
/// Per document: mixture ~ Dirichlet(alpha), then per token a topic from the
/// mixture and a product from that topic. Repeats are collapsed afterwards;
/// documents that end up below `min_basket_size` are redrawn.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Corpus, SyntheticTruth)> {
    let (k, v, d) = (spec.topics, spec.vocab_size, spec.docs);
    if k == 0 || v == 0 || d == 0 {
        return Err(Error::Spec(
            "topics, vocabulary size and documents must be >= 1".into(),
        ));
    }
    if spec.alpha.len() != k || spec.alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::Spec(format!("alpha must hold {k} positive values")));
    }
    if let DocLength::Uniform { min, max } = spec.doc_len {
        if min > max {
            return Err(Error::Spec("doc length min exceeds max".into()));
        }
    }
    if spec.doc_len.min() < spec.min_basket_size || spec.min_basket_size > v {
        return Err(Error::Spec(format!(
            "documents of at least {} draws cannot reach {} unique products",
            spec.doc_len.min(),
            spec.min_basket_size
        )));
    }
    let mut rng = rng::seeded(spec.seed);
    let phi = planted_phi(spec, &mut rng)?;
    let topic_dists: Vec<WeightedIndex<f64>> = phi
        .iter_rows()
        .map(|r| WeightedIndex::new(r).map_err(|e| Error::Spec(e.to_string())))
        .collect::<Result<_>>()?;
    let gammas: Vec<Gamma<f64>> = spec
        .alpha
        .iter()
        .map(|a| Gamma::new(*a, 1.0).map_err(|e| Error::Spec(e.to_string())))
        .collect::<Result<_>>()?;

    let mut docs = Vec::with_capacity(d);
    let mut seen = HashSet::new();
    for _ in 0..d {
        let mut attempts = 0;
        let doc = loop {
            attempts += 1;
            if attempts > MAX_DOC_ATTEMPTS {
                return Err(Error::Spec(format!(
                    "could not draw a document with {} unique products",
                    spec.min_basket_size
                )));
            }
            let theta = draw_dirichlet(&gammas, &mut rng);
            let mixture = WeightedIndex::new(&theta).map_err(|e| Error::Spec(e.to_string()))?;
            let len = spec.doc_len.draw(&mut rng);
            seen.clear();
            let mut doc = Vec::with_capacity(len);
            for _ in 0..len {
                let z = mixture.sample(&mut rng);
                let w = topic_dists[z].sample(&mut rng) as u32;
                if seen.insert(w) {
                    doc.push(w);
                }
            }
            if doc.len() >= spec.min_basket_size {
                break doc;
            }
        };
        docs.push(doc);
    }

    let mut frequency = vec![0u64; v];
    for doc in &docs {
        for &w in doc {
            frequency[w as usize] += 1;
        }
    }
    let labels = (0..v).map(|i| synthetic_label(i, v)).collect();
    let vocab = Arc::new(Vocabulary::from_parts(labels, frequency)?);
    let doc_ids = (0..d).map(|i| format!("{}{i}", spec.id_prefix)).collect();
    let corpus = Corpus::new(vocab, docs, doc_ids, spec.min_basket_size)?;
    Ok((
        corpus,
        SyntheticTruth {
            phi,
            alpha: spec.alpha.clone(),
            seed: spec.seed,
        },
    ))
}

/// Empirical product frequencies over all tokens (after collapsing).
pub fn token_frequencies(corpus: &Corpus) -> Vec<f64> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for doc in corpus.docs() {
        for &w in doc {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    let n = corpus.num_tokens() as f64;
    (0..corpus.vocab_size() as u32)
        .map(|w| counts.get(&w).copied().unwrap_or(0) as f64 / n)
        .collect()
}
