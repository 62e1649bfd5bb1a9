#ifndef TRIPAUG_H
#define TRIPAUG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TaStatus {
  TA_STATUS_OK = 0,
  TA_STATUS_NULL_ARGUMENT = 1,
  TA_STATUS_INVALID = 2,
  TA_STATUS_PARSE = 3,
  TA_STATUS_IO = 4,
  TA_STATUS_NON_FINITE = 5,
  TA_STATUS_PANIC = 6,
} TaStatus;

typedef struct TaDataset TaDataset;

typedef struct TaPredictions TaPredictions;

typedef struct TaRng TaRng;

typedef struct TaSampler TaSampler;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the calling thread's last failure (empty if none). Valid until
 * the next failing call on this thread.
 */
const char *ta_last_error(void);

/**
 * Loads an annotation file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum TaStatus ta_dataset_load(const char *path, struct TaDataset **out);

/**
 * # Safety
 * `d` must come from `ta_dataset_load` and not be used afterwards.
 */
void ta_dataset_free(struct TaDataset *d);

/**
 * Number of annotated triplets, 0 for a null handle.
 *
 * # Safety
 * `d` must be null or a live dataset handle.
 */
size_t ta_dataset_num_triplets(const struct TaDataset *d);

/**
 * Predicate vocabulary size including background, 0 for a null handle.
 *
 * # Safety
 * `d` must be null or a live dataset handle.
 */
size_t ta_dataset_num_predicates(const struct TaDataset *d);

/**
 * Loads a prediction dump aligned with `dataset`.
 *
 * # Safety
 * `dataset` must be live, `path` NUL-terminated, `out` writable.
 */
enum TaStatus ta_predictions_load(const struct TaDataset *dataset,
                                  const char *path,
                                  struct TaPredictions **out);

/**
 * # Safety
 * `p` must come from `ta_predictions_load` and not be used afterwards.
 */
void ta_predictions_free(struct TaPredictions *p);

/**
 * Counts the internal decisions and external triplets a transfer would
 * produce.
 *
 * # Safety
 * Handles must be live; `n_internal` and `n_external` writable.
 */
enum TaStatus ta_transfer_counts(const struct TaDataset *dataset,
                                 const struct TaPredictions *predictions,
                                 double k_i,
                                 double k_e,
                                 double aff_threshold,
                                 size_t *n_internal,
                                 size_t *n_external);

/**
 * Builds the object-class sampler from a dataset and its dump.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum TaStatus ta_sampler_build(const struct TaDataset *dataset,
                               const struct TaPredictions *predictions,
                               struct TaSampler **out);

/**
 * # Safety
 * `s` must come from `ta_sampler_build` and not be used afterwards.
 */
void ta_sampler_free(struct TaSampler *s);

/**
 * Number of `(subject, predicate)` keys, 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live sampler handle.
 */
size_t ta_sampler_len(const struct TaSampler *s);

/**
 * Draws an object class for `(subject, predicate)`.
 *
 * # Safety
 * Handles must be live and `out_class` writable.
 */
enum TaStatus ta_sampler_draw(const struct TaSampler *sampler,
                              uint32_t subject,
                              uint32_t predicate,
                              struct TaRng *rng,
                              uint32_t *out_class);

/**
 * Seeded stream for `module` under `seed`, identical to the library's.
 *
 * # Safety
 * `module` must be NUL-terminated and `out` writable.
 */
enum TaStatus ta_rng_new(uint64_t seed, const char *module, struct TaRng **out);

/**
 * # Safety
 * `r` must be a live rng handle.
 */
uint64_t ta_rng_next_u64(struct TaRng *r);

/**
 * # Safety
 * `r` must come from `ta_rng_new` and not be used afterwards.
 */
void ta_rng_free(struct TaRng *r);

/**
 * Two-class soft label for reliability weight `q` in [0, 1].
 *
 * # Safety
 * `out_source` and `out_target` must be writable.
 */
enum TaStatus ta_soft_label(double q,
                            uint32_t source,
                            uint32_t target,
                            double *out_source,
                            double *out_target);

/**
 * Harmonic mean of recall and mean recall (0 when both are 0).
 */
double ta_f1(double recall, double mean_recall);

double ta_avg(double recall, double mean_recall);

/**
 * IoU of two `[x1, y1, x2, y2]` boxes.
 *
 * # Safety
 * `a` and `b` must each point to four doubles; `out` must be writable.
 */
enum TaStatus ta_iou(const double *a, const double *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRIPAUG_H */
