#ifndef CBIPM_H
#define CBIPM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CbipmStatus {
  CBIPM_STATUS_OK = 0,
  CBIPM_STATUS_NULL_POINTER = 1,
  CBIPM_STATUS_INVALID_ARGUMENT = 2,
  CBIPM_STATUS_INVALID_DATA = 3,
  CBIPM_STATUS_INFEASIBLE = 4,
  CBIPM_STATUS_NUMERIC = 5,
  CBIPM_STATUS_PANIC = 6,
} CbipmStatus;

typedef enum CbipmEstimand {
  CBIPM_ESTIMAND_ATT = 0,
  CBIPM_ESTIMAND_ATE = 1,
} CbipmEstimand;

typedef enum CbipmSide {
  CBIPM_SIDE_CONTROL = 0,
  CBIPM_SIDE_TREATED = 1,
} CbipmSide;

/**
 * Weights produced by one balancing run.
 */
typedef struct CbipmBalance CbipmBalance;

/**
 * Covariates, treatment and optional outcome of `n` units.
 */
typedef struct CbipmDataset CbipmDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *cbipm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cbipm_version(void);

/**
 * Builds a dataset from row-major covariates `x` (`n * d` values), treatment
 * indicators `t` (`n` values, 0 or 1) and outcomes `y` (`n` values, may be
 * null).
 *
 * # Safety
 * The pointers must reference arrays of the stated lengths and `out` must be
 * writable.
 */
enum CbipmStatus cbipm_dataset_new(const double *x,
                                   size_t n,
                                   size_t d,
                                   const uint8_t *t,
                                   const double *y,
                                   struct CbipmDataset **out);

/**
 * Draws `n` units from a named simulation design (`ks_linear`,
 * `ks_nonlinear`, `ks_small_overlap` or `heterogeneous`).
 *
 * # Safety
 * `design` must be a NUL-terminated string and `out` must be writable.
 */
enum CbipmStatus cbipm_simulate(const char *design,
                                size_t n,
                                uint64_t seed,
                                struct CbipmDataset **out);

/**
 * Number of units, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t cbipm_dataset_n(const struct CbipmDataset *ds);

/**
 * Number of covariates, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t cbipm_dataset_d(const struct CbipmDataset *ds);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `ds` must be null or a handle not freed before.
 */
void cbipm_dataset_free(struct CbipmDataset *ds);

/**
 * Balances `ds` with a method id such as `cbps` or `ncbipm-mmd`. `iters`
 * overrides the number of outer iterations of the IPM methods; 0 keeps the
 * default.
 *
 * # Safety
 * `ds` must be a live dataset handle, `method` a NUL-terminated string and
 * `out` writable.
 */
enum CbipmStatus cbipm_balance(const struct CbipmDataset *ds,
                               const char *method,
                               enum CbipmEstimand estimand,
                               uint64_t seed,
                               size_t iters,
                               struct CbipmBalance **out);

/**
 * Copies the `n` weights of one side into `out`. For the ATT the treated
 * side is the uniform `1 / n1` on treated units.
 *
 * # Safety
 * `b` must be a live balance handle and `out` must hold `len` values.
 */
enum CbipmStatus cbipm_balance_weights(const struct CbipmBalance *b,
                                       enum CbipmSide side,
                                       double *out,
                                       size_t len);

/**
 * Final squared IPM of the run, summed over sides for the ATE.
 *
 * # Safety
 * `b` must be a live balance handle and `out` writable.
 */
enum CbipmStatus cbipm_balance_final_ipm(const struct CbipmBalance *b, double *out);

/**
 * Weighted effect estimate; the dataset must carry outcomes.
 *
 * # Safety
 * `ds` and `b` must be live handles, `b` computed on `ds`, and `out` writable.
 */
enum CbipmStatus cbipm_estimate(const struct CbipmDataset *ds,
                                const struct CbipmBalance *b,
                                double *out);

/**
 * Releases a balance result. Null is ignored.
 *
 * # Safety
 * `b` must be null or a handle not freed before.
 */
void cbipm_balance_free(struct CbipmBalance *b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CBIPM_H */
