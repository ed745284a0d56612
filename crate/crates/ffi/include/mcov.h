#ifndef MCOV_H
#define MCOV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MCOV_OK 0

#define MCOV_ERR_NULL 1

#define MCOV_ERR_INVALID 2

#define MCOV_ERR_PARSE 3

#define MCOV_ERR_IO 4

#define MCOV_ERR_NUMERICAL 5

#define MCOV_ERR_PROVENANCE 6

/**
 * The solver hit its iteration cap; the fit handle is still returned.
 */
#define MCOV_NOT_CONVERGED 7

#define MCOV_ERR_BUFFER 8

#define MCOV_ERR_PANIC 9

/**
 * Observed curves.
 */
typedef struct McovDataset McovDataset;

/**
 * L2 eigen-decomposition of a fit.
 */
typedef struct McovEigen McovEigen;

/**
 * A fitted covariance surface.
 */
typedef struct McovFit McovFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mcov_version(void);

/**
 * Message of the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *mcov_last_error_message(void);

/**
 * Loads a `subject,t1..tp,y` CSV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_ds` a writable pointer.
 */
int32_t mcov_dataset_load_csv(const char *path, McovDataset **out_ds);

/**
 * Builds a dataset from `count` observations. Observation `j` belongs to
 * subject `subjects[j]`, sits at `locations[j*p .. j*p+p]` and has value
 * `values[j]`. Subjects keep their order of first appearance.
 *
 * # Safety
 * The arrays must hold `count`, `count * p` and `count` elements.
 */
int32_t mcov_dataset_from_arrays(size_t p,
                                 size_t count,
                                 const uint64_t *subjects,
                                 const double *locations,
                                 const double *values,
                                 McovDataset **out_ds);

/**
 * Draws a dataset from simulation setting 1, 2 or 3.
 *
 * # Safety
 * `out_ds` must be a writable pointer.
 */
int32_t mcov_dataset_simulate(uint8_t setting,
                              size_t n,
                              size_t m,
                              double sigma,
                              uint64_t seed,
                              McovDataset **out_ds);

/**
 * Number of subjects and the domain dimension.
 *
 * # Safety
 * `ds` must be a live handle; the outputs must be writable.
 */
int32_t mcov_dataset_shape(const McovDataset *ds, size_t *n, size_t *p);

/**
 * # Safety
 * `ds` must be NULL or a handle not yet freed.
 */
void mcov_dataset_free(McovDataset *ds);

/**
 * Fits the covariance of `ds`. `config_json` is a run configuration in
 * the CLI's JSON format, or NULL for the defaults. Returns
 * `MCOV_NOT_CONVERGED` with a valid handle when the iteration cap was hit.
 *
 * # Safety
 * `ds` must be a live handle, `config_json` NULL or NUL-terminated.
 */
int32_t mcov_fit(const McovDataset *ds, const char *config_json, McovFit **out_fit);

/**
 * Evaluates the fitted covariance at the pair of `p`-vectors `s`, `t`.
 *
 * # Safety
 * `s` and `t` must hold `p` values each.
 */
int32_t mcov_fit_evaluate(const McovFit *fit,
                          const double *s,
                          const double *t,
                          size_t p,
                          double *value);

/**
 * Number of coefficients, the product of the tensor extents.
 *
 * # Safety
 * `fit` must be a live handle.
 */
int32_t mcov_fit_coefficient_count(const McovFit *fit, size_t *count);

/**
 * Copies the coefficient tensor, last index fastest.
 *
 * # Safety
 * `buf` must hold `len` values.
 */
int32_t mcov_fit_coefficients(const McovFit *fit, double *buf, size_t len);

/**
 * Iterations run and whether the tolerance was met.
 *
 * # Safety
 * `fit` must be a live handle; the outputs must be writable.
 */
int32_t mcov_fit_diagnostics(const McovFit *fit,
                             size_t *iterations,
                             bool *converged,
                             double *objective);

/**
 * Writes the binary container and its JSON sidecar.
 *
 * # Safety
 * Paths must be NUL-terminated.
 */
int32_t mcov_fit_save(const McovFit *fit, const char *container, const char *sidecar);

/**
 * Reloads a saved fit against the dataset it was made from.
 *
 * # Safety
 * Paths must be NUL-terminated and `ds` a live handle.
 */
int32_t mcov_fit_load(const char *container,
                      const char *sidecar,
                      const McovDataset *ds,
                      McovFit **out_fit);

/**
 * # Safety
 * `fit` must be NULL or a handle not yet freed.
 */
void mcov_fit_free(McovFit *fit);

/**
 * # Safety
 * `fit` must be a live handle.
 */
int32_t mcov_eigen(const McovFit *fit, McovEigen **out_eig);

/**
 * # Safety
 * `eig` must be a live handle.
 */
int32_t mcov_eigen_count(const McovEigen *eig, size_t *count);

/**
 * Copies the eigenvalues, descending.
 *
 * # Safety
 * `buf` must hold `len` values.
 */
int32_t mcov_eigen_values(const McovEigen *eig, double *buf, size_t len);

/**
 * Evaluates every eigenfunction at the `p`-vector `x`.
 *
 * # Safety
 * `x` must hold `p` values and `buf` `len` values.
 */
int32_t mcov_eigen_functions_at(const McovEigen *eig,
                                const double *x,
                                size_t p,
                                double *buf,
                                size_t len);

/**
 * # Safety
 * `eig` must be NULL or a handle not yet freed.
 */
void mcov_eigen_free(McovEigen *eig);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCOV_H */
