#ifndef MNAR_H
#define MNAR_H

/* Generated by cbindgen from mnar-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Estimator families exposed through the C ABI.
typedef enum MnarFamily {
  MNAR_FAMILY_REAL = 0,
  MNAR_FAMILY_NAIVE = 1,
  MNAR_FAMILY_EIB = 2,
  MNAR_FAMILY_IPS = 3,
  MNAR_FAMILY_SNIPS = 4,
  MNAR_FAMILY_DR = 5,
  MNAR_FAMILY_D_IPS = 6,
  MNAR_FAMILY_D_DR = 7,
  MNAR_FAMILY_D_SNIPS = 8,
} MnarFamily;

// Built-in shaping functions.
typedef enum MnarShaping {
  MNAR_SHAPING_IDENTITY = 0,
  MNAR_SHAPING_SINE = 1,
  MNAR_SHAPING_LOG1P = 2,
  MNAR_SHAPING_TANH = 3,
} MnarShaping;

// Status code returned by every fallible function.
typedef enum MnarStatus {
  MNAR_STATUS_OK = 0,
  // A required pointer argument was null.
  MNAR_STATUS_NULL_ARGUMENT = 1,
  // Arguments were structurally invalid (missing pieces, bad counts).
  MNAR_STATUS_INVALID_ARGUMENT = 2,
  // A numeric argument was outside its domain.
  MNAR_STATUS_DOMAIN_ERROR = 3,
  // Matrix/mask shapes disagree.
  MNAR_STATUS_SHAPE_MISMATCH = 4,
  // The operation is not defined for these inputs.
  MNAR_STATUS_UNSUPPORTED = 5,
  // A computation produced a non-finite value.
  MNAR_STATUS_NUMERIC_ERROR = 6,
  // Unexpected internal failure.
  MNAR_STATUS_INTERNAL = 7,
} MnarStatus;

// Opaque observation-mask handle.
typedef struct MnarMask MnarMask;

// Opaque dense matrix handle.
typedef struct MnarMatrix MnarMatrix;

// Monte Carlo summary written by [`mnar_monte_carlo`].
typedef struct MnarMonteCarloSummary {
  double empirical_mean;
  double empirical_variance;
  double empirical_bias;
  double standard_error;
  uint64_t replicas;
  uint64_t resampled_empty;
} MnarMonteCarloSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message (NUL-terminated) into `buf` and returns
// the full message length in bytes without the terminator. A null or
// too-small buffer still gets a best-effort truncated copy.
//
// # Safety
// `buf` must be null or point to at least `len` writable bytes.
size_t mnar_last_error_message(char *buf, size_t len);

// Creates a dense matrix from a row-major buffer of `rows * cols` values.
//
// # Safety
// `values` must point to at least `rows * cols` doubles; `out` must be a
// valid pointer. The buffer is copied, not retained.
enum MnarStatus mnar_matrix_new(size_t rows,
                                size_t cols,
                                const double *values,
                                struct MnarMatrix **out);

// Creates a propensity matrix; every cell must lie in (0, 1].
//
// # Safety
// Same contract as [`mnar_matrix_new`].
enum MnarStatus mnar_propensity_matrix_new(size_t rows,
                                           size_t cols,
                                           const double *values,
                                           struct MnarMatrix **out);

// Frees a matrix handle; null is a no-op.
//
// # Safety
// `matrix` must have come from this library and not been freed already.
void mnar_matrix_free(struct MnarMatrix *matrix);

// Creates an observation mask from a row-major buffer of 0/1 bytes.
//
// # Safety
// `bits` must point to at least `rows * cols` bytes; `out` must be valid.
enum MnarStatus mnar_mask_new(size_t rows, size_t cols, const uint8_t *bits, struct MnarMask **out);

// Frees a mask handle; null is a no-op.
//
// # Safety
// `mask` must have come from this library and not been freed already.
void mnar_mask_free(struct MnarMask *mask);

// Number of observed cells in a mask.
//
// # Safety
// `mask` must be a live handle from this library.
enum MnarStatus mnar_mask_observed_count(const struct MnarMask *mask, size_t *out);

// f(p̂) for a built-in shaping function.
enum MnarStatus mnar_shaping_eval(enum MnarShaping shaping, double p_hat, double *out);

// f^α(p̂) for a built-in shaping function, α ∈ [0, 1].
enum MnarStatus mnar_shaping_eval_alpha(enum MnarShaping shaping,
                                        double p_hat,
                                        double alpha,
                                        double *out);

// Per-cell bias factor h_B(p̂, p, α) = 1 − p/f^α(p̂).
enum MnarStatus mnar_h_bias(enum MnarShaping shaping,
                            double p_hat,
                            double p_true,
                            double alpha,
                            double *out);

// Per-cell variance factor h_V(p̂, p, α) = p(1−p)/f^{2α}(p̂).
enum MnarStatus mnar_h_variance(enum MnarShaping shaping,
                                double p_hat,
                                double p_true,
                                double alpha,
                                double *out);

// Closed-form optimal exponent α for one cell under accurate propensities
// and identity penalty metrics.
enum MnarStatus mnar_alpha_opt(double w1,
                               double w2,
                               enum MnarShaping shaping,
                               double p,
                               double *out);

// Uniform cap on h_V at the per-cell optimum: w1/w2 + 0.25 for identity
// metrics.
enum MnarStatus mnar_variance_cap(double w1, double w2, double *out);

// Evaluates an estimator on one realized mask.
//
// `imputed_errors` is required for EIB/DR/D-DR; `propensities` for the
// IPS/DR families; `alpha` for the dynamic families (with `shaping`).
// Unused arguments may be null.
//
// # Safety
// All non-null handles must be live handles from this library; `out` must
// be a valid pointer.
enum MnarStatus mnar_estimate(enum MnarFamily family,
                              const struct MnarMatrix *errors,
                              const struct MnarMatrix *imputed_errors,
                              const struct MnarMatrix *propensities,
                              const struct MnarMask *mask,
                              enum MnarShaping shaping,
                              const struct MnarMatrix *alpha,
                              double *out);

// Closed-form bias of an estimator given the true propensities.
//
// `observed_count` feeds the naive family's normalizer (pass Σp or the
// realized count); values ≤ 0 mean "not supplied".
//
// # Safety
// All non-null handles must be live; `out` must be valid.
enum MnarStatus mnar_closed_form_bias(enum MnarFamily family,
                                      const struct MnarMatrix *errors,
                                      const struct MnarMatrix *imputed_errors,
                                      const struct MnarMatrix *p_true,
                                      const struct MnarMatrix *p_hat,
                                      double observed_count,
                                      enum MnarShaping shaping,
                                      const struct MnarMatrix *alpha,
                                      double *out);

// Closed-form variance of an estimator given the true propensities.
//
// # Safety
// Same contract as [`mnar_closed_form_bias`].
enum MnarStatus mnar_closed_form_variance(enum MnarFamily family,
                                          const struct MnarMatrix *errors,
                                          const struct MnarMatrix *imputed_errors,
                                          const struct MnarMatrix *p_true,
                                          const struct MnarMatrix *p_hat,
                                          double observed_count,
                                          enum MnarShaping shaping,
                                          const struct MnarMatrix *alpha,
                                          double *out);

// Hoeffding deviation bound of a dynamic estimator (z = errors for D-IPS,
// error deviations for D-DR).
//
// # Safety
// All handles must be live; `out` must be valid.
enum MnarStatus mnar_tail_bound(enum MnarFamily family,
                                const struct MnarMatrix *z,
                                const struct MnarMatrix *p_hat,
                                enum MnarShaping shaping,
                                const struct MnarMatrix *alpha,
                                double rho,
                                double *out);

// Monte Carlo verification run: draws `replicas` masks from the true
// propensities and summarizes the estimator's empirical distribution.
//
// # Safety
// All non-null handles must be live; `out` must be valid.
enum MnarStatus mnar_monte_carlo(enum MnarFamily family,
                                 const struct MnarMatrix *errors,
                                 const struct MnarMatrix *imputed_errors,
                                 const struct MnarMatrix *p_true,
                                 const struct MnarMatrix *p_hat,
                                 enum MnarShaping shaping,
                                 const struct MnarMatrix *alpha,
                                 size_t replicas,
                                 uint64_t seed,
                                 struct MnarMonteCarloSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MNAR_H */
