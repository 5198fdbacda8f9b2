/* SPDX-License-Identifier: Apache-2.0 */

#ifndef POSTCHECK_H
#define POSTCHECK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Modality named by an explanation.
 */
typedef enum PcExplanation {
  PC_EXPLANATION_NONE = 0,
  PC_EXPLANATION_VIDEO = 1,
  PC_EXPLANATION_SPEECH = 2,
  PC_EXPLANATION_CLAIM = 3,
} PcExplanation;

/**
 * Status codes; values 2 through 6 match the command-line exit codes.
 */
typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_FAILED = 1,
  PC_STATUS_INPUT_NOT_FOUND = 2,
  PC_STATUS_DUPLICATE_POST_ID = 3,
  PC_STATUS_SHORTFALL = 4,
  PC_STATUS_CHECKPOINT_HASH = 5,
  PC_STATUS_EMPTY_SUBSET = 6,
  PC_STATUS_NULL_ARGUMENT = 7,
  PC_STATUS_INVALID_UTF8 = 8,
  PC_STATUS_NOT_FOUND = 9,
  PC_STATUS_PANIC = 10,
} PcStatus;

/**
 * A loaded corpus.
 */
typedef struct PcCorpus PcCorpus;

/**
 * A trained detector restored from a checkpoint.
 */
typedef struct PcDetector PcDetector;

typedef struct PcVerdict {
  double p_inconsistent;
  /**
   * 1 when the record is judged inconsistent, 0 otherwise.
   */
  int32_t inconsistent;
  double c_vs;
  double c_vc;
  double c_cs;
  enum PcExplanation explanation;
} PcVerdict;

typedef struct PcMetrics {
  size_t total;
  double accuracy;
  double precision;
  double recall;
  double f1;
  double explanation_accuracy;
} PcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL after a
 * success. Valid until the next call into this library on this thread.
 */
const char *pc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pc_version(void);

/**
 * Loads a corpus file. Invalid records are skipped, as in `ingest`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PcStatus pc_corpus_load(const char *path, struct PcCorpus **out);

/**
 * Generates `n` pristine demo posts, or a balanced corpus of `2n` records
 * when `balanced` is nonzero.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum PcStatus pc_corpus_generate_demo(size_t n,
                                      uint64_t seed,
                                      int32_t balanced,
                                      struct PcCorpus **out);

/**
 * Adds generated fakes to a pristine corpus using the built-in stub
 * toolkit and an even taxonomy mix.
 *
 * # Safety
 * `pristine` must be a live corpus handle and `out` a writable pointer.
 */
enum PcStatus pc_corpus_synthesize(const struct PcCorpus *pristine,
                                   uint64_t seed,
                                   struct PcCorpus **out);

/**
 * Writes the corpus in its JSONL interchange format.
 *
 * # Safety
 * `corpus` must be a live handle and `path` a NUL-terminated string.
 */
enum PcStatus pc_corpus_save(const struct PcCorpus *corpus, const char *path);

/**
 * Number of records; 0 for a NULL handle.
 *
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
size_t pc_corpus_len(const struct PcCorpus *corpus);

/**
 * Writes 1 to `out` if record `index` is labelled inconsistent, else 0.
 *
 * # Safety
 * `corpus` must be a live handle and `out` a writable pointer.
 */
enum PcStatus pc_corpus_label(const struct PcCorpus *corpus, size_t index, int32_t *out);

/**
 * # Safety
 * `corpus` must be NULL or a handle not yet freed.
 */
void pc_corpus_free(struct PcCorpus *corpus);

/**
 * Restores a detector, verifying the checkpoint hashes.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PcStatus pc_detector_load(const char *path, struct PcDetector **out);

/**
 * # Safety
 * `detector` must be NULL or a handle not yet freed.
 */
void pc_detector_free(struct PcDetector *detector);

/**
 * Scores the record with `post_id`.
 *
 * # Safety
 * Handles must be live, `post_id` NUL-terminated, `out` writable.
 */
enum PcStatus pc_detector_predict(const struct PcDetector *detector,
                                  const struct PcCorpus *corpus,
                                  const char *post_id,
                                  struct PcVerdict *out);

/**
 * Accuracy, F1, and explanation accuracy over every record.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum PcStatus pc_detector_evaluate(const struct PcDetector *detector,
                                   const struct PcCorpus *corpus,
                                   struct PcMetrics *out);

/**
 * The modality shared by the two lowest of three pair scores.
 */
enum PcExplanation pc_explain_scores(double c_vs, double c_vc, double c_cs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POSTCHECK_H */
