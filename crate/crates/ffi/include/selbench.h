#ifndef SELBENCH_H
#define SELBENCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SelbenchStatus {
  SELBENCH_STATUS_OK = 0,
  SELBENCH_STATUS_NULL_POINTER = 1,
  SELBENCH_STATUS_CONFIG = 2,
  SELBENCH_STATUS_VALIDATION = 3,
  SELBENCH_STATUS_IO = 4,
  SELBENCH_STATUS_INVALID_STRING = 5,
  SELBENCH_STATUS_BUFFER_TOO_SMALL = 6,
  SELBENCH_STATUS_PANIC = 7,
} SelbenchStatus;

/**
 * Opaque covariate table.
 */
typedef struct SelbenchCovariates SelbenchCovariates;

/**
 * Opaque per-DGP context: calibrated surfaces and ground truth.
 */
typedef struct SelbenchDgp SelbenchDgp;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy of the last error message on this thread, or NULL when the last
 * call succeeded. Free with `selbench_string_free`.
 */
char *selbench_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void selbench_string_free(char *s);

/**
 * Synthetic covariates with the standard correlation targets and margins.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum SelbenchStatus selbench_covariates_synthesize(size_t n,
                                                   uint64_t seed,
                                                   struct SelbenchCovariates **out);

/**
 * Reads a covariate CSV; `standardize` z-scores the continuous columns.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum SelbenchStatus selbench_covariates_load(const char *path,
                                             bool standardize,
                                             struct SelbenchCovariates **out);

/**
 * Number of units, or 0 for a NULL handle.
 *
 * # Safety
 * `cov` must be NULL or a live handle.
 */
size_t selbench_covariates_n(const struct SelbenchCovariates *cov);

/**
 * # Safety
 * `cov` must be NULL or a handle not yet freed.
 */
void selbench_covariates_free(struct SelbenchCovariates *cov);

/**
 * Context for one DGP. `family` is a folder name (group_corr,
 * heteroskedastic, iid, non-additive); `bits` a 3-bit setting code.
 *
 * # Safety
 * `cov` must be a live handle, `family` and `bits` NUL-terminated strings,
 * `out` a valid handle slot.
 */
enum SelbenchStatus selbench_dgp_new(const struct SelbenchCovariates *cov,
                                     const char *family,
                                     const char *bits,
                                     struct SelbenchDgp **out);

/**
 * Number of units, or 0 for a NULL handle.
 *
 * # Safety
 * `dgp` must be NULL or a live handle.
 */
size_t selbench_dgp_n(const struct SelbenchDgp *dgp);

/**
 * # Safety
 * `dgp` must be a live handle and `out` writable.
 */
enum SelbenchStatus selbench_dgp_sigma_y(const struct SelbenchDgp *dgp, double *out);

/**
 * Copies the `alpha` (CATE) and `mu` columns; `len` must equal the unit count.
 *
 * # Safety
 * `alpha_out` and `mu_out` must each point to `len` writable doubles.
 */
enum SelbenchStatus selbench_dgp_ground_truth(const struct SelbenchDgp *dgp,
                                              double *alpha_out,
                                              double *mu_out,
                                              size_t len);

/**
 * Regenerates replicate `replicate_id` (1-based) exactly as a full build would.
 *
 * # Safety
 * `z_out` must point to `len` writable bytes and `y_out` to `len` doubles.
 */
enum SelbenchStatus selbench_dgp_generate_replicate(const struct SelbenchDgp *dgp,
                                                    uint64_t master_seed,
                                                    uint32_t replicate_id,
                                                    bool redraw_z,
                                                    uint8_t *z_out,
                                                    double *y_out,
                                                    size_t len);

/**
 * # Safety
 * `dgp` must be NULL or a handle not yet freed.
 */
void selbench_dgp_free(struct SelbenchDgp *dgp);

/**
 * Root mean squared error between two length-`len` arrays.
 *
 * # Safety
 * `estimate` and `alpha` must each point to `len` readable doubles.
 */
enum SelbenchStatus selbench_rmse_cate(const double *estimate,
                                       const double *alpha,
                                       size_t len,
                                       double *out);

/**
 * Mean of `alpha` over units with `z == 1`.
 *
 * # Safety
 * `alpha` must point to `len` doubles and `z` to `len` bytes.
 */
enum SelbenchStatus selbench_true_att(const double *alpha,
                                      const uint8_t *z,
                                      size_t len,
                                      double *out);

/**
 * Closed-interval coverage indicator.
 *
 * # Safety
 * `out` must be writable.
 */
enum SelbenchStatus selbench_interval_covers(double lower, double upper, double truth, bool *out);

/**
 * Standard normal CDF.
 */
double selbench_normal_cdf(double x);

/**
 * Writes the full 32-DGP tree for `cov` under `out_dir` with `replicates`
 * replicates per DGP. The hex manifest digest (64 characters plus NUL) is
 * written to `digest_out`, which must hold at least 65 bytes.
 *
 * # Safety
 * `cov` must be a live handle, `out_dir` a NUL-terminated string and
 * `digest_out` a buffer of `digest_len` bytes.
 */
enum SelbenchStatus selbench_build_challenge(const struct SelbenchCovariates *cov,
                                             const char *out_dir,
                                             uint64_t master_seed,
                                             uint32_t replicates,
                                             char *digest_out,
                                             size_t digest_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SELBENCH_H */
