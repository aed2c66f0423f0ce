#ifndef KSEGMENT_H
#define KSEGMENT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes returned by every fallible function.
 */
typedef enum KsStatus {
  KS_STATUS_OK = 0,
  KS_STATUS_NULL_POINTER = 1,
  KS_STATUS_INVALID_ARGUMENT = 2,
  KS_STATUS_IO = 3,
  KS_STATUS_CONFIG = 4,
  KS_STATUS_DATA = 5,
  KS_STATUS_TRAINING = 6,
  KS_STATUS_PREDICTION = 7,
  KS_STATUS_DOMAIN = 8,
  KS_STATUS_DEGENERATE_BASELINE = 9,
  KS_STATUS_SERIALIZATION = 10,
  KS_STATUS_PANIC = 11,
} KsStatus;

/**
 * Opaque handle to a trained K-segment ensemble.
 */
typedef struct KsModel KsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ks_version(void);

/**
 * Description of the last failure on the calling thread, or NULL if the
 * last call succeeded. The pointer stays valid until the next call into
 * this library on the same thread.
 */
const char *ks_last_error_message(void);

/**
 * Loads a saved ensemble. On success `*out` receives a handle that must be
 * released with `ks_model_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KsStatus ks_model_load(const char *path, struct KsModel **out);

/**
 * Releases a handle from `ks_model_load`. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void ks_model_free(struct KsModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum KsStatus ks_model_num_segments(const struct KsModel *model, size_t *out);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum KsStatus ks_model_feature_dim(const struct KsModel *model, size_t *out);

/**
 * Empirical quantile of a prior assessment within the model's training
 * population.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum KsStatus ks_model_quantile(const struct KsModel *model, double prior_assessment, double *out);

/**
 * Submodel weights at quantile `y`; `out` must hold `len` values and `len`
 * must equal the number of segments.
 *
 * # Safety
 * `model` must be a live handle and `out` must point to `len` doubles.
 */
enum KsStatus ks_model_weights(const struct KsModel *model, double y, double *out, size_t len);

/**
 * Assesses one property from its features and prior assessment.
 *
 * # Safety
 * `features` must point to `feature_dim` doubles and `out` be valid.
 */
enum KsStatus ks_model_assess(const struct KsModel *model,
                              const double *features,
                              size_t feature_dim,
                              double prior_assessment,
                              double *out);

/**
 * Assesses `rows` properties. `features` is row-major with `feature_dim`
 * columns; `prior_assessments` and `out` hold `rows` values.
 *
 * # Safety
 * All buffers must be valid for the stated sizes.
 */
enum KsStatus ks_model_assess_batch(const struct KsModel *model,
                                    const double *features,
                                    size_t rows,
                                    size_t feature_dim,
                                    const double *prior_assessments,
                                    double *out);

/**
 * Group fairness of `m` assessments against their sale prices with `n`
 * price groups. The result is nonpositive; 0 is perfectly fair.
 *
 * # Safety
 * `sale_prices` and `assessed` must point to `m` doubles; `out` be valid.
 */
enum KsStatus ks_group_fairness(const double *sale_prices,
                                const double *assessed,
                                size_t m,
                                size_t n,
                                double *out);

/**
 * Deviation-weighted fairness with exponent `alpha` (nonpositive result).
 *
 * # Safety
 * `sale_prices` and `assessed` must point to `m` doubles; `out` be valid.
 */
enum KsStatus ks_deviation_fairness(const double *sale_prices,
                                    const double *assessed,
                                    size_t m,
                                    double alpha,
                                    double *out);

/**
 * Ratio of a model's fairness score to the original model's score.
 * Returns `KS_STATUS_DEGENERATE_BASELINE` when the original score is 0.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum KsStatus ks_relative_unfairness(double model_score, double original_score, double *out);

/**
 * Runs the experiment described by a JSON config file and writes its
 * reports, models and CSV tables to the configured output directory.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string.
 */
enum KsStatus ks_run_experiment(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KSEGMENT_H */
