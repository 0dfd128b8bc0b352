#ifndef TOPICFORGE_H
#define TOPICFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TfStatus {
  TF_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  TF_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  TF_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument or configuration value was rejected.
   */
  TF_STATUS_INVALID_ARGUMENT = 3,
  /**
   * Reading or writing a file failed.
   */
  TF_STATUS_IO = 4,
  /**
   * The computation failed on valid input.
   */
  TF_STATUS_RUNTIME = 5,
  /**
   * An index was outside the object it addressed.
   */
  TF_STATUS_OUT_OF_RANGE = 6,
  /**
   * Rust code panicked; the handle involved should be freed.
   */
  TF_STATUS_PANIC = 7,
} TfStatus;

/**
 * Loaded corpus.
 */
typedef struct TfCorpus TfCorpus;

/**
 * Clustered summary model.
 */
typedef struct TfModel TfModel;

/**
 * Posterior samples from one or more chains.
 */
typedef struct TfSamples TfSamples;

/**
 * Sampler settings for [`tf_train`]. Fill with [`tf_train_config_default`]
 * and override fields as needed.
 */
typedef struct TfTrainConfig {
  size_t topics;
  double alpha_sum;
  double beta;
  size_t iterations;
  size_t burn_in;
  size_t lag;
  size_t chains;
  uint64_t chain_offset;
  uint64_t seed;
  size_t loglik_every;
} TfTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tf_version(void);

/**
 * Message of the last failing call on this thread, or null if none failed.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *tf_last_error_message(void);

/**
 * Reads a corpus in JSON-lines form.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TfStatus tf_corpus_load(const char *path, struct TfCorpus **out);

/**
 * # Safety
 * `corpus` must be a handle from [`tf_corpus_load`] and `out` a valid pointer.
 */
enum TfStatus tf_corpus_num_docs(const struct TfCorpus *corpus, size_t *out);

/**
 * # Safety
 * `corpus` must be a handle from [`tf_corpus_load`] and `out` a valid pointer.
 */
enum TfStatus tf_corpus_vocab_size(const struct TfCorpus *corpus, size_t *out);

/**
 * # Safety
 * `corpus` must be null or a handle from [`tf_corpus_load`] not yet freed.
 */
void tf_corpus_free(struct TfCorpus *corpus);

/**
 * Default sampler settings with `topics` set to zero.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum TfStatus tf_train_config_default(struct TfTrainConfig *out);

/**
 * Runs Gibbs chains on `corpus` and returns every recorded sample.
 *
 * # Safety
 * `corpus` must be a live handle, `config` and `out` valid pointers.
 */
enum TfStatus tf_train(const struct TfCorpus *corpus,
                       const struct TfTrainConfig *config,
                       struct TfSamples **out);

/**
 * Reads the samples written by `topicforge train` into `dir`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TfStatus tf_samples_load(const char *dir, struct TfSamples **out);

/**
 * # Safety
 * `samples` must be a live handle and `out` a valid pointer.
 */
enum TfStatus tf_samples_count(const struct TfSamples *samples, size_t *out);

/**
 * # Safety
 * `samples` must be null or a live handle.
 */
void tf_samples_free(struct TfSamples *samples);

/**
 * Pools every topic of `samples`, clusters them with average linkage below
 * `threshold` and keeps clusters with at least `min_size` members. Topics of
 * one sample never share a cluster unless `allow_within_sample` is nonzero.
 *
 * # Safety
 * `samples` must be a live handle and `out` a valid pointer.
 */
enum TfStatus tf_cluster(const struct TfSamples *samples,
                         double threshold,
                         size_t min_size,
                         int32_t allow_within_sample,
                         struct TfModel **out);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum TfStatus tf_model_num_topics(const struct TfModel *model, size_t *out);

/**
 * Length of every centroid.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum TfStatus tf_model_vocab_size(const struct TfModel *model, size_t *out);

/**
 * Number of pooled topics merged into cluster `index`.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum TfStatus tf_model_cluster_size(const struct TfModel *model, size_t index, size_t *out);

/**
 * Copies centroid `index` into `buf`, which must hold `len` values, where
 * `len` equals [`tf_model_vocab_size`].
 *
 * # Safety
 * `model` must be a live handle and `buf` valid for `len` writes.
 */
enum TfStatus tf_model_centroid(const struct TfModel *model, size_t index, double *buf, size_t len);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
void tf_model_free(struct TfModel *model);

/**
 * Cosine similarity of two vectors of length `len`.
 *
 * # Safety
 * `u` and `v` must be valid for `len` reads and `out` a valid pointer.
 */
enum TfStatus tf_cosine_similarity(const double *u, const double *v, size_t len, double *out);

/**
 * Potential scale reduction of `chains` traces of `len` values each, stored
 * one chain after another in `values`.
 *
 * # Safety
 * `values` must be valid for `chains * len` reads and `out` a valid pointer.
 */
enum TfStatus tf_rhat(const double *values, size_t chains, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOPICFORGE_H */
