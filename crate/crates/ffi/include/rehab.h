#ifndef REHAB_H
#define REHAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every entry point.
 */
typedef enum RehabStatus {
  REHAB_STATUS_OK = 0,
  /**
   * Invalid arguments or configuration.
   */
  REHAB_STATUS_USAGE = 1,
  /**
   * Invalid or inconsistent data.
   */
  REHAB_STATUS_DATA = 2,
  /**
   * Numerical failure (non-finite values, degenerate ranges).
   */
  REHAB_STATUS_NUMERICAL = 3,
  /**
   * A required pointer was null.
   */
  REHAB_STATUS_NULL_POINTER = 4,
  /**
   * Internal panic; the library state is unaffected.
   */
  REHAB_STATUS_PANIC = 5,
} RehabStatus;

/**
 * Gaussian mixture over per-frame feature vectors.
 */
typedef struct RehabGmm RehabGmm;

/**
 * Trained assessment model loaded from a checkpoint.
 */
typedef struct RehabModel RehabModel;

/**
 * Scoring functions fitted to reference metric values.
 */
typedef struct RehabScoring RehabScoring;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into the library from the same thread.
 */
const char *rehab_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *rehab_version(void);

/**
 * Jointly rescales `x` and `y` to `[1, 20]`.
 *
 * # Safety
 * Input arrays must hold `nx` and `ny` values; outputs must have room for
 * the same counts.
 */
enum RehabStatus rehab_scale_to_range(const double *x,
                                      size_t nx,
                                      const double *y,
                                      size_t ny,
                                      double *out_x,
                                      double *out_y);

/**
 * Mean of `(x_i - y_j) / (x_i + y_j)` over all pairs; inputs must be
 * positive.
 *
 * # Safety
 * `x` and `y` must hold `nx` and `ny` values; `out` must be writable.
 */
enum RehabStatus rehab_separation_degree(const double *x,
                                         size_t nx,
                                         const double *y,
                                         size_t ny,
                                         double *out);

/**
 * Separation of patient over reference values after joint scaling.
 *
 * # Safety
 * `reference` and `patient` must hold `nr` and `np` values; `out` must be
 * writable.
 */
enum RehabStatus rehab_scaled_separation(const double *reference,
                                         size_t nr,
                                         const double *patient,
                                         size_t np,
                                         double *out);

/**
 * Normalised dynamic time warping cost between two sequences with the
 * same number of dimensions.
 *
 * # Safety
 * `a` and `b` must hold `na * dims` and `nb * dims` values; `out` must be
 * writable.
 */
enum RehabStatus rehab_dtw(const double *a,
                           size_t na,
                           const double *b,
                           size_t nb,
                           size_t dims,
                           double *out);

/**
 * Scores reference and patient metric values in one call. Patient values
 * are paired with reference values by rank.
 *
 * # Safety
 * `x` and `y` must hold `nx` and `ny` values; outputs must have room for
 * the same counts.
 */
enum RehabStatus rehab_score_series(const double *x,
                                    size_t nx,
                                    const double *y,
                                    size_t ny,
                                    double alpha1,
                                    double alpha2,
                                    double *out_x,
                                    double *out_y);

/**
 * Fits scoring statistics to `n` reference metric values.
 *
 * # Safety
 * `x` must hold `n` values; `handle` must be writable.
 */
enum RehabStatus rehab_scoring_new(const double *x,
                                   size_t n,
                                   double alpha1,
                                   double alpha2,
                                   struct RehabScoring **handle);

/**
 * Writes the mean and population standard deviation of the absolute
 * reference values.
 *
 * # Safety
 * `handle` must come from [`rehab_scoring_new`]; outputs must be writable.
 */
enum RehabStatus rehab_scoring_stats(const struct RehabScoring *handle, double *mu, double *delta);

/**
 * Score of a reference (correct) repetition with metric value `x`.
 *
 * # Safety
 * `handle` must come from [`rehab_scoring_new`]; `out` must be writable.
 */
enum RehabStatus rehab_score_reference(const struct RehabScoring *handle, double x, double *out);

/**
 * Score of a patient repetition with metric value `y`, corrected against
 * its paired reference value `x`.
 *
 * # Safety
 * `handle` must come from [`rehab_scoring_new`]; `out` must be writable.
 */
enum RehabStatus rehab_score_patient(const struct RehabScoring *handle,
                                     double x,
                                     double y,
                                     double *out);

/**
 * # Safety
 * `handle` must be null or come from [`rehab_scoring_new`], and must not
 * be used afterwards.
 */
void rehab_scoring_free(struct RehabScoring *handle);

/**
 * Builds a mixture of `components` Gaussians in `dims` dimensions.
 * `means` is `components x dims`; `covariances` holds one row-major
 * `dims x dims` matrix per component.
 *
 * # Safety
 * Arrays must hold `components`, `components * dims` and
 * `components * dims * dims` values; `handle` must be writable.
 */
enum RehabStatus rehab_gmm_new(const double *weights,
                               const double *means,
                               const double *covariances,
                               size_t components,
                               size_t dims,
                               struct RehabGmm **handle);

/**
 * Negative log-likelihood of a sequence, summed over frames.
 *
 * # Safety
 * `handle` must come from [`rehab_gmm_new`]; `frames` must hold
 * `n_frames * dims` values; `out` must be writable.
 */
enum RehabStatus rehab_gmm_nll(const struct RehabGmm *handle,
                               const double *frames,
                               size_t n_frames,
                               size_t dims,
                               double *out);

/**
 * # Safety
 * `handle` must be null or come from [`rehab_gmm_new`], and must not be
 * used afterwards.
 */
void rehab_gmm_free(struct RehabGmm *handle);

/**
 * Loads a model checkpoint written by `rehab train`.
 *
 * # Safety
 * `path` must be a nul-terminated UTF-8 string; `handle` must be writable.
 */
enum RehabStatus rehab_model_load(const char *path, struct RehabModel **handle);

/**
 * Input dimensionality and expected frame count of a loaded model.
 *
 * # Safety
 * `handle` must come from [`rehab_model_load`]; outputs must be writable.
 */
enum RehabStatus rehab_model_shape(const struct RehabModel *handle, size_t *dims, size_t *frames);

/**
 * Predicted quality score for one repetition.
 *
 * # Safety
 * `handle` must come from [`rehab_model_load`]; `frames` must hold
 * `n_frames * dims` values; `out` must be writable.
 */
enum RehabStatus rehab_model_predict(const struct RehabModel *handle,
                                     const double *frames,
                                     size_t n_frames,
                                     size_t dims,
                                     double *out);

/**
 * # Safety
 * `handle` must be null or come from [`rehab_model_load`], and must not be
 * used afterwards.
 */
void rehab_model_free(struct RehabModel *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REHAB_H */
