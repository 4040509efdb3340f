#ifndef EVPLACE_H
#define EVPLACE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EvpStatus {
  EVP_STATUS_OK = 0,
  EVP_STATUS_NULL_POINTER = 1,
  EVP_STATUS_INVALID_UTF8 = 2,
  EVP_STATUS_PARSE = 3,
  EVP_STATUS_INVALID_ARGUMENT = 4,
  EVP_STATUS_SHAPE_MISMATCH = 5,
  EVP_STATUS_INSUFFICIENT_HISTORY = 6,
  EVP_STATUS_INFEASIBLE = 7,
  EVP_STATUS_NO_SOLUTION = 8,
  EVP_STATUS_OUT_OF_RANGE = 9,
  EVP_STATUS_PANIC = 10,
} EvpStatus;

/**
 * Predicted demand for a set of target years.
 */
typedef struct EvpForecast EvpForecast;

/**
 * Parsed demand history (cells x years).
 */
typedef struct EvpHistory EvpHistory;

/**
 * Parsed supply points with their existing chargers.
 */
typedef struct EvpInfrastructure EvpInfrastructure;

/**
 * Charger counts and bounds from one placement solve.
 */
typedef struct EvpSolution EvpSolution;

typedef struct EvpSolveOptions {
  /**
   * Relative gap at which the search stops.
   */
  double gap_tol;
  double time_limit_seconds;
  /**
   * Nonzero: evaluate search nodes one at a time for reproducible output.
   */
  uint8_t deterministic;
  size_t node_budget;
} EvpSolveOptions;

typedef struct EvpSolutionSummary {
  double objective;
  double lower_bound;
  double gap;
  uint64_t node_count;
  double wall_time_seconds;
  size_t supply_count;
} EvpSolutionSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `cap` bytes. Returns the full length including the NUL, so a
 * call with `cap = 0` sizes the buffer.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes or null when `cap` is 0.
 */
size_t evp_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *evp_version(void);

/**
 * # Safety
 * `csv` must be a NUL-terminated string; `out` must be writable.
 */
enum EvpStatus evp_history_parse(const char *csv, struct EvpHistory **out);

/**
 * # Safety
 * `h` must come from [`evp_history_parse`] and not be used afterwards.
 */
void evp_history_free(struct EvpHistory *h);

/**
 * Writes grid width, height and number of history years.
 *
 * # Safety
 * `h` must be a live handle; output pointers must be writable.
 */
enum EvpStatus evp_history_shape(const struct EvpHistory *h,
                                 size_t *width,
                                 size_t *height,
                                 size_t *years);

/**
 * # Safety
 * `csv` must be a NUL-terminated string; `out` must be writable.
 */
enum EvpStatus evp_infrastructure_parse(const char *csv, struct EvpInfrastructure **out);

/**
 * # Safety
 * `s` must come from [`evp_infrastructure_parse`] and not be used afterwards.
 */
void evp_infrastructure_free(struct EvpInfrastructure *s);

/**
 * Number of supply points, or 0 for a null handle.
 *
 * # Safety
 * `s` must be a live handle or null.
 */
size_t evp_infrastructure_len(const struct EvpInfrastructure *s);

/**
 * Selects the smoothing exponent from `grid` by hold-out error on the last
 * history year.
 *
 * # Safety
 * `h` must be a live handle; `grid` must hold `len` values; outputs writable.
 */
enum EvpStatus evp_tune_kappa(const struct EvpHistory *h,
                              const double *grid,
                              size_t len,
                              double *best_kappa,
                              double *best_mse);

/**
 * # Safety
 * `h` must be a live handle; `years` must hold `len` values; `out` writable.
 */
enum EvpStatus evp_forecast(const struct EvpHistory *h,
                            double kappa,
                            const int32_t *years,
                            size_t len,
                            struct EvpForecast **out);

/**
 * Copies predictions for target year index `k` into `values`, which must
 * hold one entry per grid cell.
 *
 * # Safety
 * `f` must be a live handle; `values` must be writable for `len` entries.
 */
enum EvpStatus evp_forecast_column(const struct EvpForecast *f,
                                   size_t k,
                                   double *values,
                                   size_t len);

/**
 * # Safety
 * `f` must come from [`evp_forecast`] and not be used afterwards.
 */
void evp_forecast_free(struct EvpForecast *f);

struct EvpSolveOptions evp_solve_options_default(void);

/**
 * Places chargers for one year of demand on a `width x height` grid with the
 * default cost parameters.
 *
 * # Safety
 * `demand` must hold `len` values; `infra` must be a live handle;
 * `options` may be null for defaults; `out` must be writable.
 */
enum EvpStatus evp_solve(size_t width,
                         size_t height,
                         const double *demand,
                         size_t len,
                         const struct EvpInfrastructure *infra,
                         const struct EvpSolveOptions *options,
                         struct EvpSolution **out);

/**
 * # Safety
 * `s` must be a live handle; `out` must be writable.
 */
enum EvpStatus evp_solution_summary(const struct EvpSolution *s, struct EvpSolutionSummary *out);

/**
 * Copies slow and fast charger counts per supply point.
 *
 * # Safety
 * `s` must be a live handle; `scs` and `fcs` must be writable for `len` entries.
 */
enum EvpStatus evp_solution_counts(const struct EvpSolution *s,
                                   uint32_t *scs,
                                   uint32_t *fcs,
                                   size_t len);

/**
 * # Safety
 * `s` must come from [`evp_solve`] and not be used afterwards.
 */
void evp_solution_free(struct EvpSolution *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVPLACE_H */
