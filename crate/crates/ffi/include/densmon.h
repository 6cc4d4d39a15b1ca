#ifndef DENSMON_H
#define DENSMON_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DENSMON_OK 0

#define DENSMON_ERR_NULL -1

#define DENSMON_ERR_INVALID -2

#define DENSMON_ERR_ESTIMATION -3

#define DENSMON_ERR_CONFIG -4

#define DENSMON_ERR_IO -5

#define DENSMON_ERR_BUFFER -6

#define DENSMON_ERR_PANIC -99

/**
 * A parsed run configuration.
 */
typedef struct DensmonConfig DensmonConfig;

/**
 * A density estimate on a uniform grid.
 */
typedef struct DensmonDensity DensmonDensity;

/**
 * Learning-curve fit `S(n) = qs_opt - c * n^(-r)`.
 */
typedef struct DensmonFit {
  double qs_opt;
  double c;
  double r;
  double residual;
} DensmonFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string and returns its length without the terminator.
 * With a null or short buffer nothing is copied.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t densmon_last_error(char *buf, size_t len);

/**
 * Kernel density estimate of `values` with a data-driven bandwidth on the
 * default grid.
 *
 * # Safety
 * `values` must be valid for `len` reads and `out_density` for one write.
 */
int32_t densmon_density_estimate(const double *values,
                                 size_t len,
                                 struct DensmonDensity **out_density);

/**
 * Density from `points` non-negative values sampled on `[lo, hi]`, rescaled
 * to integrate to one. `points` must be a power of two.
 *
 * # Safety
 * `values` must be valid for `points` reads and `out_density` for one write.
 */
int32_t densmon_density_from_values(double lo,
                                    double hi,
                                    const double *values,
                                    size_t points,
                                    struct DensmonDensity **out_density);

/**
 * # Safety
 * `density` must be null or a handle from this library, not yet freed.
 */
void densmon_density_free(struct DensmonDensity *density);

/**
 * Grid bounds, point count and bandwidth of a density.
 *
 * # Safety
 * `density` must be a live handle; outputs may be null.
 */
int32_t densmon_density_info(const struct DensmonDensity *density,
                             double *lo,
                             double *hi,
                             size_t *points,
                             double *bandwidth);

/**
 * Copies the grid values into `buf`, which must hold the point count.
 *
 * # Safety
 * `density` must be a live handle and `buf` valid for `len` writes.
 */
int32_t densmon_density_values(const struct DensmonDensity *density, double *buf, size_t len);

/**
 * Density at `x` by linear interpolation; zero off the grid.
 *
 * # Safety
 * `density` must be a live handle and `result` valid for one write.
 */
int32_t densmon_density_evaluate(const struct DensmonDensity *density, double x, double *result);

/**
 * Expected quadratic score of `estimate` under `truth`. Both must share a grid.
 *
 * # Safety
 * Both handles must be live and `result` valid for one write.
 */
int32_t densmon_expected_score(const struct DensmonDensity *estimate,
                               const struct DensmonDensity *truth,
                               double *result);

/**
 * Integrated square error between two densities on the same grid.
 *
 * # Safety
 * Both handles must be live and `result` valid for one write.
 */
int32_t densmon_ise(const struct DensmonDensity *a, const struct DensmonDensity *b, double *result);

/**
 * Fits the learning curve with the fixed KDE rate `r = 0.8`, subject to
 * `qs_opt >= qs_max` and `c >= 0`.
 *
 * # Safety
 * `sizes` and `scores` must be valid for `len` reads and `result` for one write.
 */
int32_t densmon_fit_linear(const uint64_t *sizes,
                           const double *scores,
                           size_t len,
                           double qs_max,
                           struct DensmonFit *result);

/**
 * As `densmon_fit_linear` with the rate `r` fitted too.
 *
 * # Safety
 * `sizes` and `scores` must be valid for `len` reads and `result` for one write.
 */
int32_t densmon_fit_nonlinear(const uint64_t *sizes,
                              const double *scores,
                              size_t len,
                              double qs_max,
                              struct DensmonFit *result);

/**
 * Predicted accuracy of an estimate from `n` samples.
 *
 * # Safety
 * `fit` must be valid for one read and `result` for one write.
 */
int32_t densmon_predict_score(const struct DensmonFit *fit, uint64_t n, double *result);

/**
 * Smallest sample size reaching `accuracy`, clamped to `[min, max]`.
 *
 * # Safety
 * `fit` must be valid for one read and `result` for one write.
 */
int32_t densmon_predict_sample_size(const struct DensmonFit *fit,
                                    double accuracy,
                                    uint64_t min,
                                    uint64_t max,
                                    uint64_t *result);

/**
 * Parses a run configuration document.
 *
 * # Safety
 * `source` must be a NUL-terminated string and `out_config` valid for one write.
 */
int32_t densmon_config_parse(const char *source, struct DensmonConfig **out_config);

/**
 * # Safety
 * `config` must be null or a handle from this library, not yet freed.
 */
void densmon_config_free(struct DensmonConfig *config);

/**
 * Number of monitoring tasks in a configuration.
 *
 * # Safety
 * `config` must be a live handle and `result` valid for one write.
 */
int32_t densmon_config_task_count(const struct DensmonConfig *config, size_t *result);

/**
 * Runs the monitoring loop and writes its output into `out_dir`. Relative
 * trace paths are resolved against `base_dir`. `steps` and `records` may be
 * null.
 *
 * # Safety
 * `config` must be a live handle and both paths NUL-terminated strings.
 */
int32_t densmon_run(const struct DensmonConfig *config,
                    const char *base_dir,
                    const char *out_dir,
                    uint64_t *steps,
                    size_t *records);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DENSMON_H */
