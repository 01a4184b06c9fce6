#ifndef FNAR_H
#define FNAR_H

#include <stddef.h>
#include <stdint.h>

// Result codes returned by every function.
typedef enum FnarStatus {
  FNAR_STATUS_OK = 0,
  FNAR_STATUS_INVALID_ARGUMENT = 1,
  FNAR_STATUS_DOMAIN = 2,
  FNAR_STATUS_ILL_CONDITIONED_BASIS = 3,
  FNAR_STATUS_NON_STATIONARY = 4,
  FNAR_STATUS_CANNOT_DIFFERENCE = 5,
  FNAR_STATUS_UNDERIDENTIFIED = 6,
  FNAR_STATUS_NUMERICAL_FAILURE = 7,
  FNAR_STATUS_VARIANCE_UNAVAILABLE = 8,
  FNAR_STATUS_MISSING_DATA = 9,
  FNAR_STATUS_HARNESS = 10,
  FNAR_STATUS_SCHEMA = 11,
  FNAR_STATUS_IO = 12,
  FNAR_STATUS_NULL_POINTER = 13,
  FNAR_STATUS_PANIC = 14,
} FnarStatus;

// Estimator selector for [`fnar_fit`].
typedef enum FnarEstimator {
  // GMM with the inverse instrument second-moment block and identity on
  // the quadratic moments.
  FNAR_ESTIMATOR_GMM1 = 0,
  // GMM with the identity weight.
  FNAR_ESTIMATOR_GMM2 = 1,
  // Linear moments only, closed form.
  FNAR_ESTIMATOR_TWO_SLS = 2,
} FnarEstimator;

// A fitted model.
typedef struct FnarFit FnarFit;

// Row-normalized network weights.
typedef struct FnarNetwork FnarNetwork;

// Outcome curves and covariates of a balanced panel.
typedef struct FnarPanel FnarPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length excluding the NUL.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t fnar_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *fnar_version(void);

// Draw a panel from the simulation design with `n` units on a random
// lattice, `t` periods and instrument strength `r`.
//
// # Safety
// `panel_out` and `network_out` must be valid for writes.
enum FnarStatus fnar_simulate(size_t n,
                              size_t t,
                              double r,
                              uint64_t seed,
                              struct FnarPanel **panel_out,
                              struct FnarNetwork **network_out);

// Build a panel from flat arrays on an equally spaced grid of `grid_size`
// interior nodes. `y` holds `n * t * grid_size` values indexed
// `(period * n + unit) * grid_size + node`; `x` holds `n * t * dx` values
// indexed `(period * n + unit) * dx + covariate`.
//
// # Safety
// `y` and `x` must point to arrays of the stated lengths; `out` must be
// valid for writes.
enum FnarStatus fnar_panel_new(size_t n,
                               size_t t,
                               size_t dx,
                               size_t grid_size,
                               const double *y,
                               const double *x,
                               struct FnarPanel **out);

// Report the panel dimensions. Any output pointer may be null.
//
// # Safety
// `panel` must be a live handle; non-null outputs must be valid for writes.
enum FnarStatus fnar_panel_dims(const struct FnarPanel *panel,
                                size_t *n,
                                size_t *t,
                                size_t *dx,
                                size_t *grid_size);

// Release a panel. Null is ignored.
//
// # Safety
// `panel` must be null or a handle not yet freed.
void fnar_panel_free(struct FnarPanel *panel);

// Build row-normalized weights on `n` units from `count` directed edges
// `from[k] -> to[k]` with raw weights `weight[k]`.
//
// # Safety
// `from`, `to` and `weight` must point to `count` elements; `out` must be
// valid for writes.
enum FnarStatus fnar_network_from_edges(size_t n,
                                        size_t count,
                                        const size_t *from,
                                        const size_t *to,
                                        const double *weight,
                                        struct FnarNetwork **out);

// Number of units in a network.
//
// # Safety
// `network` must be a live handle and `n` valid for writes.
enum FnarStatus fnar_network_units(const struct FnarNetwork *network, size_t *n);

// Release a network. Null is ignored.
//
// # Safety
// `network` must be null or a handle not yet freed.
void fnar_network_free(struct FnarNetwork *network);

// Fit the model. `operator` is `"point-eval"`, `"epanechnikov"` or
// `"past-window:WIDTH"`; the basis has `ktilde` inner knots and the given
// spline degree; `moment_points` is `L`.
//
// # Safety
// `panel` and `network` must be live handles, `operator` a NUL-terminated
// string and `out` valid for writes.
enum FnarStatus fnar_fit(const struct FnarPanel *panel,
                         const struct FnarNetwork *network,
                         const char *operator_,
                         size_t ktilde,
                         size_t degree,
                         size_t moment_points,
                         enum FnarEstimator estimator,
                         struct FnarFit **out);

// Copy the coefficient vector into `buf` (capacity `len`) and report its
// length in `count`. Pass a null `buf` to query the length only.
//
// # Safety
// `fit` must be a live handle, `count` valid for writes and `buf` null or
// valid for `len` writes.
enum FnarStatus fnar_fit_theta(const struct FnarFit *fit, double *buf, size_t len, size_t *count);

// Whether the optimizer met its convergence rule (1) or not (0).
//
// # Safety
// `fit` must be a live handle and `converged` valid for writes.
enum FnarStatus fnar_fit_converged(const struct FnarFit *fit, int *converged);

// Estimated interaction function at `s` in `[0, 1]`.
//
// # Safety
// `fit` must be a live handle and `value` valid for writes.
enum FnarStatus fnar_fit_alpha_at(const struct FnarFit *fit, double s, double *value);

// Estimated coefficient function of covariate `j` (0-based) at `s`.
//
// # Safety
// `fit` must be a live handle and `value` valid for writes.
enum FnarStatus fnar_fit_beta_at(const struct FnarFit *fit, size_t j, double s, double *value);

// Pointwise standard error of the interaction function at `s`.
//
// # Safety
// `fit` must be a live handle and `value` valid for writes.
enum FnarStatus fnar_fit_alpha_se_at(const struct FnarFit *fit, double s, double *value);

// Release a fit. Null is ignored.
//
// # Safety
// `fit` must be null or a handle not yet freed.
void fnar_fit_free(struct FnarFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FNAR_H */
