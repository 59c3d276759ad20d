#ifndef KDB_H
#define KDB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KdbKernelScheme {
  /**
   * Simplex constraints only.
   */
  KDB_KERNEL_SCHEME_KDBC = 0,
  /**
   * Simplex constraints plus first-moment balance.
   */
  KDB_KERNEL_SCHEME_KDM1 = 1,
} KdbKernelScheme;

typedef enum KdbStatus {
  KDB_STATUS_OK = 0,
  KDB_STATUS_NULL_POINTER = 1,
  KDB_STATUS_INVALID_ARGUMENT = 2,
  KDB_STATUS_DIMENSION_MISMATCH = 3,
  KDB_STATUS_INVALID_DATA = 4,
  KDB_STATUS_INFEASIBLE = 5,
  KDB_STATUS_NUMERICAL_FAILURE = 6,
  KDB_STATUS_ZERO_VARIANCE = 7,
  KDB_STATUS_PANIC = 8,
  KDB_STATUS_OTHER = 9,
} KdbStatus;

typedef enum KdbTarget {
  KDB_TARGET_ATE = 0,
  KDB_TARGET_ATT = 1,
} KdbTarget;

/**
 * Opaque dataset handle.
 */
typedef struct KdbDataset KdbDataset;

/**
 * Opaque weight handle.
 */
typedef struct KdbWeights KdbWeights;

typedef struct KdbBalanceReport {
  double rw;
  double kd;
  double max_asmd;
  double mean_asmd;
  double med_asmd;
  double mean_ks;
  double mean_t;
} KdbBalanceReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Build a dataset from `n x d` row-major covariates `x`, a 0/1 treatment
 * vector `t` and outcomes `y`.
 *
 * # Safety
 * `x` must point to `n * d` doubles, `t` and `y` to `n` each; `out` must be
 * writable.
 */
enum KdbStatus kdb_dataset_new(const double *x,
                               size_t n,
                               size_t d,
                               const double *t,
                               const double *y,
                               struct KdbDataset **out);

/**
 * # Safety
 * `ds` must come from [`kdb_dataset_new`] and not be freed twice.
 */
void kdb_dataset_free(struct KdbDataset *ds);

/**
 * Number of units, treated units and covariates.
 *
 * # Safety
 * `ds` must be a live handle; the outputs must be writable.
 */
enum KdbStatus kdb_dataset_shape(const struct KdbDataset *ds, size_t *n, size_t *n1, size_t *d);

/**
 * Median-heuristic `sigma2` for the dataset's covariates.
 *
 * # Safety
 * `ds` must be a live handle and `sigma2` writable.
 */
enum KdbStatus kdb_median_bandwidth(const struct KdbDataset *ds, double *sigma2);

/**
 * Kernel balancing weights. A `sigma2 <= 0` selects the median heuristic.
 *
 * # Safety
 * `ds` must be a live handle and `out` writable.
 */
enum KdbStatus kdb_solve_weights(const struct KdbDataset *ds,
                                 enum KdbKernelScheme scheme,
                                 enum KdbTarget target,
                                 double lambda,
                                 double sigma2,
                                 struct KdbWeights **out);

/**
 * Inverse-propensity weights from a logistic fit. For the ATT,
 * `normalized != 0` rescales the control odds weights to sum to one.
 *
 * # Safety
 * `ds` must be a live handle and `out` writable.
 */
enum KdbStatus kdb_ipw_weights(const struct KdbDataset *ds,
                               enum KdbTarget target,
                               int32_t normalized,
                               struct KdbWeights **out);

/**
 * Uniform weights within each group.
 *
 * # Safety
 * `ds` must be a live handle and `out` writable.
 */
enum KdbStatus kdb_unadjusted_weights(const struct KdbDataset *ds, struct KdbWeights **out);

/**
 * # Safety
 * `w` must come from this library and not be freed twice.
 */
void kdb_weights_free(struct KdbWeights *w);

/**
 * Lengths of the treated and control weight vectors.
 *
 * # Safety
 * `w` must be a live handle; the outputs must be writable.
 */
enum KdbStatus kdb_weights_len(const struct KdbWeights *w, size_t *n1, size_t *n0);

/**
 * Copy the treated weights into `p` and control weights into `q`, in the
 * dataset's row order within each group. Capacities must match exactly.
 *
 * # Safety
 * `p` must hold `p_len` doubles and `q` must hold `q_len`.
 */
enum KdbStatus kdb_weights_copy(const struct KdbWeights *w,
                                double *p,
                                size_t p_len,
                                double *q,
                                size_t q_len);

/**
 * Weighted effect estimate; the weights decide between ATE and ATT.
 *
 * # Safety
 * Handles must be live and `value` writable.
 */
enum KdbStatus kdb_estimate(const struct KdbDataset *ds, const struct KdbWeights *w, double *value);

/**
 * Weighted squared kernel distance. A `sigma2 <= 0` selects the median
 * heuristic.
 *
 * # Safety
 * Handles must be live and `value` writable.
 */
enum KdbStatus kdb_rw_stat(const struct KdbDataset *ds,
                           const struct KdbWeights *w,
                           double sigma2,
                           double *value);

/**
 * Summary balance diagnostics. Per-covariate ASMDs are written to `asmd`
 * when it is non-null; it must then hold `d` doubles.
 *
 * # Safety
 * Handles must be live, `report` writable, and `asmd` null or `asmd_len`
 * long.
 */
enum KdbStatus kdb_balance_report(const struct KdbDataset *ds,
                                  const struct KdbWeights *w,
                                  double sigma2,
                                  struct KdbBalanceReport *report,
                                  double *asmd,
                                  size_t asmd_len);

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call into the library on this thread.
 */
const char *kdb_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *kdb_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KDB_H */
