#ifndef FFLQR_H
#define FFLQR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a call across the C boundary.
 */
typedef enum FflqrStatus {
  FFLQR_STATUS_OK = 0,
  FFLQR_STATUS_NULL_POINTER = 1,
  /**
   * Invalid argument or configuration.
   */
  FFLQR_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed or inconsistent data.
   */
  FFLQR_STATUS_DATA_ERROR = 3,
  /**
   * Solver or factorization failure.
   */
  FFLQR_STATUS_NUMERICAL_ERROR = 4,
  /**
   * Internal error; the library state is unaffected.
   */
  FFLQR_STATUS_PANIC = 5,
} FflqrStatus;

/**
 * A fitted regression model.
 */
typedef struct FflqrModel FflqrModel;

/**
 * Curves evaluated on a shared grid.
 */
typedef struct FflqrSample FflqrSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *fflqr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fflqr_version(void);

/**
 * Builds a sample from `n_curves × n_points` row-major values on the given grid
 * (trapezoidal quadrature weights).
 *
 * # Safety
 * `values` must point to `n_curves * n_points` doubles and `grid` to
 * `n_points` doubles; `out` must be a valid pointer.
 */
enum FflqrStatus fflqr_sample_new(const double *values,
                                  size_t n_curves,
                                  const double *grid,
                                  size_t n_points,
                                  struct FflqrSample **out);

/**
 * # Safety
 * `sample` must be a handle from this library or null.
 */
size_t fflqr_sample_n_curves(const struct FflqrSample *sample);

/**
 * # Safety
 * `sample` must be a handle from this library or null.
 */
size_t fflqr_sample_n_points(const struct FflqrSample *sample);

/**
 * Copies the values in row-major order into `buf` of length `len`
 * (which must equal curves × points).
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum FflqrStatus fflqr_sample_values(const struct FflqrSample *sample, double *buf, size_t len);

/**
 * # Safety
 * `sample` must be a handle from this library (or null) not yet freed.
 */
void fflqr_sample_free(struct FflqrSample *sample);

/**
 * Fits the quantile model at level `tau` with truncations `k_y`, `k_x`.
 *
 * # Safety
 * `y` and every entry of `xs[0..n_x]` must be valid sample handles; `out`
 * must be a valid pointer.
 */
enum FflqrStatus fflqr_fit(const struct FflqrSample *y,
                           const struct FflqrSample *const *xs,
                           size_t n_x,
                           double tau,
                           size_t k_y,
                           size_t k_x,
                           struct FflqrModel **out);

/**
 * Fits the least-squares FPC model with truncations `k_y`, `k_x`.
 *
 * # Safety
 * As for [`fflqr_fit`].
 */
enum FflqrStatus fflqr_fit_ls(const struct FflqrSample *y,
                              const struct FflqrSample *const *xs,
                              size_t n_x,
                              size_t k_y,
                              size_t k_x,
                              struct FflqrModel **out);

/**
 * Predicts response curves for new predictors (same order as at fit time).
 *
 * # Safety
 * `model`, `xs[0..n_x]` must be valid handles; `out` must be a valid pointer.
 */
enum FflqrStatus fflqr_predict(const struct FflqrModel *model,
                               const struct FflqrSample *const *xs,
                               size_t n_x,
                               struct FflqrSample **out);

/**
 * Serializes a model to a JSON string owned by the caller (release with
 * [`fflqr_string_free`]).
 *
 * # Safety
 * `model` must be a valid handle; `out` must be a valid pointer.
 */
enum FflqrStatus fflqr_model_to_json(const struct FflqrModel *model, char **out);

/**
 * Restores a model from JSON produced by [`fflqr_model_to_json`] or the CLI.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum FflqrStatus fflqr_model_from_json(const char *json, struct FflqrModel **out);

/**
 * Response truncation of an FPC model, or 0 for other models and null.
 *
 * # Safety
 * `model` must be a valid handle or null.
 */
size_t fflqr_model_k_y(const struct FflqrModel *model);

/**
 * Predictor truncation of an FPC model, or 0 for other models and null.
 *
 * # Safety
 * `model` must be a valid handle or null.
 */
size_t fflqr_model_k_x(const struct FflqrModel *model);

/**
 * # Safety
 * `model` must be a handle from this library (or null) not yet freed.
 */
void fflqr_model_free(struct FflqrModel *model);

/**
 * # Safety
 * `s` must be a string returned by this library (or null) not yet freed.
 */
void fflqr_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FFLQR_H */
