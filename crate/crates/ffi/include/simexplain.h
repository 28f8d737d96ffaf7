#ifndef SIMEXPLAIN_H
#define SIMEXPLAIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SxStatus {
  SX_STATUS_OK = 0,
  SX_STATUS_NULL_POINTER = 1,
  SX_STATUS_INVALID_ARGUMENT = 2,
  SX_STATUS_DIMENSION_MISMATCH = 3,
  SX_STATUS_ORACLE = 4,
  SX_STATUS_NUMERICAL = 5,
  SX_STATUS_PANIC = 6,
} SxStatus;

typedef enum SxStructure {
  SX_STRUCTURE_FULL = 0,
  SX_STRUCTURE_DIAGONAL = 1,
} SxStructure;

/**
 * Opaque fitted explanation.
 */
typedef struct SxReport SxReport;

/**
 * Black-box distance callback. Writes the distance between `left` and
 * `right` (both `dim` long) to `out` and returns 0, or returns nonzero
 * on failure. Never called concurrently.
 */
typedef int32_t (*SxOracleFn)(void *user_data,
                              const double *left,
                              const double *right,
                              size_t dim,
                              double *out);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next call into the library from this thread.
 */
const char *sx_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sx_version(void);

/**
 * `(x - y)^T A (x - y)` for a PSD `A`.
 */
enum SxStatus sx_mahalanobis(const double *x,
                             const double *y,
                             size_t dim,
                             const double *matrix,
                             double *out);

/**
 * Nearest PSD matrix in Frobenius norm. `out` may alias `matrix`.
 */
enum SxStatus sx_project_psd(const double *matrix, size_t dim, double *out);

/**
 * Fits a local Mahalanobis surrogate around the numeric pair `(x, y)`.
 *
 * `reference` holds `n_reference` rows of `dim` values used to estimate
 * perturbation scales; with `n_reference == 0` the pair itself is used.
 * `neighborhood_size == 0` selects the default size. On success `*out`
 * owns a new report.
 */
enum SxStatus sx_fit_numeric(const double *x,
                             const double *y,
                             size_t dim,
                             const double *reference,
                             size_t n_reference,
                             size_t neighborhood_size,
                             uint64_t seed,
                             enum SxStructure structure,
                             SxOracleFn oracle,
                             void *user_data,
                             struct SxReport **out);

void sx_report_free(struct SxReport *report);

/**
 * Number of interpretable features, or 0 for a null report.
 */
size_t sx_report_dim(const struct SxReport *report);

/**
 * Copies the fitted matrix into `out` (`dim * dim`, row-major).
 */
enum SxStatus sx_report_matrix(const struct SxReport *report, double *out, size_t len);

/**
 * Surrogate and black-box distance of the explained pair.
 */
enum SxStatus sx_report_distances(const struct SxReport *report,
                                  double *predicted,
                                  double *black_box);

/**
 * 1 if the solver converged, 0 if not or for a null report.
 */
int32_t sx_report_converged(const struct SxReport *report);

/**
 * Canonical JSON for the report. Free the string with [`sx_string_free`].
 */
enum SxStatus sx_report_to_json(const struct SxReport *report, char **out);

void sx_string_free(char *s);

/**
 * Greedy analogy selection over `n` precomputed candidates.
 *
 * `bb` holds the candidates' black-box distances and `bb_x` the explained
 * pair's; `closeness` holds `G` per candidate; `delta_min` is the `n * n`
 * row-major pairwise diversity distance. Writes `k` indices in selection
 * order to `out_indices` and the objective to `out_objective` (may be
 * null).
 */
enum SxStatus sx_greedy_select(size_t n,
                               const double *bb,
                               double bb_x,
                               const double *closeness,
                               const double *delta_min,
                               size_t k,
                               double lambda1,
                               double lambda2,
                               size_t *out_indices,
                               double *out_objective);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMEXPLAIN_H */
