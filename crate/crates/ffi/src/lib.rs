//! C ABI over topicforge.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `tf_*_free` function. Every fallible call returns a
//! [`TfStatus`]; on failure the message is available from
//! [`tf_last_error_message`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use topicforge::gibbs::{self, ChainConfig, HyperParams, PosteriorSample};
use topicforge::summary::{self, MergeMode, TopicPool};
use topicforge::{artifacts, metrics, ClusteredModel, Corpus, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument or configuration value was rejected.
    InvalidArgument = 3,
    /// Reading or writing a file failed.
    Io = 4,
    /// The computation failed on valid input.
    Runtime = 5,
    /// An index was outside the object it addressed.
    OutOfRange = 6,
    /// Rust code panicked; the handle involved should be freed.
    Panic = 7,
}

/// Loaded corpus.
pub struct TfCorpus(Corpus);

/// Posterior samples from one or more chains.
pub struct TfSamples(Vec<PosteriorSample>);

/// Clustered summary model.
pub struct TfModel(ClusteredModel);

/// Sampler settings for [`tf_train`]. Fill with [`tf_train_config_default`]
/// and override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TfTrainConfig {
    pub topics: usize,
    pub alpha_sum: f64,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub lag: usize,
    pub chains: usize,
    pub chain_offset: u64,
    pub seed: u64,
    pub loglik_every: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(TfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            e if e.is_validation() => TfStatus::InvalidArgument,
            Error::File { .. } | Error::Io(_) => TfStatus::Io,
            _ => TfStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            TfStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn out_slot<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(TfStatus::InvalidUtf8, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn into_handle<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failing call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a corpus in JSON-lines form.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_corpus_load(path: *const c_char, out: *mut *mut TfCorpus) -> TfStatus {
    guard(|| {
        let slot = unsafe { out_slot(out, "out") }?;
        let corpus = artifacts::read_corpus(&unsafe { path_arg(path) }?)?;
        *slot = into_handle(TfCorpus(corpus));
        Ok(())
    })
}

/// # Safety
/// `corpus` must be a handle from [`tf_corpus_load`] and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_corpus_num_docs(corpus: *const TfCorpus, out: *mut usize) -> TfStatus {
    guard(|| {
        let c = unsafe { borrow(corpus, "corpus") }?;
        *unsafe { out_slot(out, "out") }? = c.0.num_docs();
        Ok(())
    })
}

/// # Safety
/// `corpus` must be a handle from [`tf_corpus_load`] and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_corpus_vocab_size(
    corpus: *const TfCorpus,
    out: *mut usize,
) -> TfStatus {
    guard(|| {
        let c = unsafe { borrow(corpus, "corpus") }?;
        *unsafe { out_slot(out, "out") }? = c.0.vocab_size();
        Ok(())
    })
}

/// # Safety
/// `corpus` must be null or a handle from [`tf_corpus_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tf_corpus_free(corpus: *mut TfCorpus) {
    unsafe { free_handle(corpus) }
}

/// Default sampler settings with `topics` set to zero.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_train_config_default(out: *mut TfTrainConfig) -> TfStatus {
    guard(|| {
        let d = ChainConfig::default();
        *unsafe { out_slot(out, "out") }? = TfTrainConfig {
            topics: 0,
            alpha_sum: gibbs::DEFAULT_ALPHA_SUM,
            beta: gibbs::DEFAULT_BETA,
            iterations: d.iterations,
            burn_in: d.burn_in,
            lag: d.lag,
            chains: d.chains,
            chain_offset: 0,
            seed: d.seed,
            loglik_every: d.loglik_every,
        };
        Ok(())
    })
}

/// Runs Gibbs chains on `corpus` and returns every recorded sample.
///
/// # Safety
/// `corpus` must be a live handle, `config` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tf_train(
    corpus: *const TfCorpus,
    config: *const TfTrainConfig,
    out: *mut *mut TfSamples,
) -> TfStatus {
    guard(|| {
        let c = unsafe { borrow(corpus, "corpus") }?;
        let cfg = unsafe { borrow(config, "config") }?;
        let slot = unsafe { out_slot(out, "out") }?;
        let hp = HyperParams::symmetric(cfg.topics, cfg.alpha_sum, cfg.beta, c.0.vocab_size())?;
        let chain = ChainConfig {
            iterations: cfg.iterations,
            burn_in: cfg.burn_in,
            lag: cfg.lag,
            chains: cfg.chains,
            seed: cfg.seed,
            loglik_every: cfg.loglik_every,
            keep_theta: false,
        };
        chain.validate()?;
        let outputs = gibbs::run_chains(&c.0, &hp, &chain, cfg.chain_offset)?;
        let samples = outputs.into_iter().flat_map(|o| o.samples).collect();
        *slot = into_handle(TfSamples(samples));
        Ok(())
    })
}

/// Reads the samples written by `topicforge train` into `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_samples_load(dir: *const c_char, out: *mut *mut TfSamples) -> TfStatus {
    guard(|| {
        let slot = unsafe { out_slot(out, "out") }?;
        let samples = artifacts::read_samples(&unsafe { path_arg(dir) }?)?;
        *slot = into_handle(TfSamples(samples));
        Ok(())
    })
}

/// # Safety
/// `samples` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_samples_count(samples: *const TfSamples, out: *mut usize) -> TfStatus {
    guard(|| {
        let s = unsafe { borrow(samples, "samples") }?;
        *unsafe { out_slot(out, "out") }? = s.0.len();
        Ok(())
    })
}

/// # Safety
/// `samples` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_samples_free(samples: *mut TfSamples) {
    unsafe { free_handle(samples) }
}

/// Pools every topic of `samples`, clusters them with average linkage below
/// `threshold` and keeps clusters with at least `min_size` members. Topics of
/// one sample never share a cluster unless `allow_within_sample` is nonzero.
///
/// # Safety
/// `samples` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_cluster(
    samples: *const TfSamples,
    threshold: f64,
    min_size: usize,
    allow_within_sample: i32,
    out: *mut *mut TfModel,
) -> TfStatus {
    guard(|| {
        let s = unsafe { borrow(samples, "samples") }?;
        let slot = unsafe { out_slot(out, "out") }?;
        let pool = TopicPool::from_samples(&s.0)?;
        let dist = summary::pool_distances(&pool)?;
        let mode = MergeMode::from_allow_within(allow_within_sample != 0);
        let clustering = summary::agglomerate(&pool, &dist, threshold, mode)?;
        *slot = into_handle(TfModel(summary::filter_clusters(&clustering, min_size)?));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_model_num_topics(model: *const TfModel, out: *mut usize) -> TfStatus {
    guard(|| {
        let m = unsafe { borrow(model, "model") }?;
        *unsafe { out_slot(out, "out") }? = m.0.len();
        Ok(())
    })
}

/// Length of every centroid.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_model_vocab_size(model: *const TfModel, out: *mut usize) -> TfStatus {
    guard(|| {
        let m = unsafe { borrow(model, "model") }?;
        *unsafe { out_slot(out, "out") }? = m.0.clusters.first().map_or(0, |c| c.centroid.len());
        Ok(())
    })
}

/// Number of pooled topics merged into cluster `index`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_model_cluster_size(
    model: *const TfModel,
    index: usize,
    out: *mut usize,
) -> TfStatus {
    guard(|| {
        let m = unsafe { borrow(model, "model") }?;
        let c =
            m.0.clusters
                .get(index)
                .ok_or_else(|| out_of_range(index, m.0.len()))?;
        *unsafe { out_slot(out, "out") }? = c.size();
        Ok(())
    })
}

fn out_of_range(index: usize, len: usize) -> Failure {
    Failure(
        TfStatus::OutOfRange,
        format!("index {index} is outside 0..{len}"),
    )
}

/// Copies centroid `index` into `buf`, which must hold `len` values, where
/// `len` equals [`tf_model_vocab_size`].
///
/// # Safety
/// `model` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn tf_model_centroid(
    model: *const TfModel,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> TfStatus {
    guard(|| {
        let m = unsafe { borrow(model, "model") }?;
        let c =
            m.0.clusters
                .get(index)
                .ok_or_else(|| out_of_range(index, m.0.len()))?;
        if len != c.centroid.len() {
            return Err(Failure(
                TfStatus::InvalidArgument,
                format!(
                    "buffer holds {len} values, centroid has {}",
                    c.centroid.len()
                ),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        unsafe { std::slice::from_raw_parts_mut(buf, len) }.copy_from_slice(&c.centroid);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_model_free(model: *mut TfModel) {
    unsafe { free_handle(model) }
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `u` and `v` must be valid for `len` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_cosine_similarity(
    u: *const f64,
    v: *const f64,
    len: usize,
    out: *mut f64,
) -> TfStatus {
    guard(|| {
        let (u, v) = unsafe { (slice_arg(u, len, "u")?, slice_arg(v, len, "v")?) };
        *unsafe { out_slot(out, "out") }? = metrics::cosine_similarity(u, v)?;
        Ok(())
    })
}

/// Potential scale reduction of `chains` traces of `len` values each, stored
/// one chain after another in `values`.
///
/// # Safety
/// `values` must be valid for `chains * len` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_rhat(
    values: *const f64,
    chains: usize,
    len: usize,
    out: *mut f64,
) -> TfStatus {
    guard(|| {
        let total = chains
            .checked_mul(len)
            .ok_or_else(|| Failure(TfStatus::InvalidArgument, "trace size overflows".into()))?;
        let all = unsafe { slice_arg(values, total, "values") }?;
        let traces: Vec<&[f64]> = if len == 0 {
            Vec::new()
        } else {
            all.chunks(len).collect()
        };
        *unsafe { out_slot(out, "out") }? = metrics::rhat(&traces)?;
        Ok(())
    })
}
