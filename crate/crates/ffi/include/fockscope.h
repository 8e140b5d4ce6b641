#ifndef FOCKSCOPE_H
#define FOCKSCOPE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_POINTER = 1,
  FS_STATUS_INVALID_PARAMETER = 2,
  FS_STATUS_BUFFER_TOO_SMALL = 3,
  FS_STATUS_NO_HERALD = 4,
  FS_STATUS_CALIBRATION_REQUIRED = 5,
  FS_STATUS_ESTIMATION_FAILED = 6,
  FS_STATUS_MODEL_MISMATCH = 7,
  FS_STATUS_UNIDENTIFIABLE = 8,
  FS_STATUS_INSUFFICIENT_DATA = 9,
  FS_STATUS_IO = 10,
  FS_STATUS_PANIC = 11,
  FS_STATUS_OTHER = 12,
} FsStatus;

/**
 * Quadrature samples in vacuum-variance-half units.
 */
typedef struct FsBatch FsBatch;

/**
 * Maximum-likelihood reconstruction with its uncertainties.
 */
typedef struct FsReconstruction FsReconstruction;

/**
 * Photon-number populations.
 */
typedef struct FsState FsState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fs_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL, or 0
 * when no error has been recorded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t fs_last_error(char *buf, size_t len);

/**
 * Number-state quadrature marginal `|psi_n(q)|^2`.
 */
double fs_fock_marginal(size_t n, double q);

/**
 * State from explicit populations, which must be non-negative and sum to one.
 *
 * # Safety
 * `weights` must point to `len` readable values and `out` must be writable.
 */
enum FsStatus fs_state_new(const double *weights, size_t len, struct FsState **out);

/**
 * Heralded single photon after optical loss `eta`, truncated at `n_max`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FsStatus fs_state_heralded(double gamma_sq,
                                double eta_t,
                                double eta,
                                size_t n_max,
                                struct FsState **out);

/**
 * Number of populations (`n_max + 1`), or 0 for a null handle.
 *
 * # Safety
 * `state` must be null or a live handle.
 */
size_t fs_state_len(const struct FsState *state);

/**
 * # Safety
 * `state` must be a live handle and `out` must hold `capacity` values.
 */
enum FsStatus fs_state_probs(const struct FsState *state, double *out, size_t capacity);

/**
 * Wigner function at phase-space radius `r`.
 *
 * # Safety
 * `state` must be a live handle and `out` writable.
 */
enum FsStatus fs_state_wigner(const struct FsState *state, double r, double *out);

/**
 * Efficiency and pair probability implied by the first three populations.
 *
 * # Safety
 * `state` must be a live handle; `eta` and `gamma_sq` writable.
 */
enum FsStatus fs_state_extract(const struct FsState *state, double *eta, double *gamma_sq);

/**
 * # Safety
 * `state` must be null or a handle not yet freed.
 */
void fs_state_free(struct FsState *state);

/**
 * Draws `count` calibrated quadratures from `state`.
 *
 * # Safety
 * `state` must be a live handle and `out` writable.
 */
enum FsStatus fs_batch_sample(const struct FsState *state,
                              size_t count,
                              uint64_t seed,
                              struct FsBatch **out);

/**
 * Wraps already calibrated quadratures.
 *
 * # Safety
 * `values` must point to `len` readable values and `out` must be writable.
 */
enum FsStatus fs_batch_from_calibrated(const double *values, size_t len, struct FsBatch **out);

/**
 * # Safety
 * `batch` must be null or a live handle.
 */
size_t fs_batch_len(const struct FsBatch *batch);

/**
 * # Safety
 * `batch` must be a live handle and `out` must hold `capacity` values.
 */
enum FsStatus fs_batch_values(const struct FsBatch *batch, double *out, size_t capacity);

/**
 * Overall efficiency from the quadrature variance, with its standard error.
 *
 * # Safety
 * `batch` must be a live handle; `eta` and `std_error` writable.
 */
enum FsStatus fs_batch_eta(const struct FsBatch *batch, double *eta, double *std_error);

/**
 * # Safety
 * `batch` must be null or a handle not yet freed.
 */
void fs_batch_free(struct FsBatch *batch);

/**
 * Maximum-likelihood populations up to `n_max`. A run that hits `max_iter`
 * still succeeds; check [`fs_recon_converged`].
 *
 * # Safety
 * `batch` must be a live handle and `out` writable.
 */
enum FsStatus fs_reconstruct(const struct FsBatch *batch,
                             size_t n_max,
                             double tol,
                             size_t max_iter,
                             struct FsReconstruction **out);

/**
 * Reconstructed populations as a new state handle.
 *
 * # Safety
 * `recon` must be a live handle and `out` writable.
 */
enum FsStatus fs_recon_state(const struct FsReconstruction *recon, struct FsState **out);

/**
 * One-sigma uncertainties, one per population.
 *
 * # Safety
 * `recon` must be a live handle and `out` must hold `capacity` values.
 */
enum FsStatus fs_recon_sigma(const struct FsReconstruction *recon, double *out, size_t capacity);

/**
 * # Safety
 * `recon` must be null or a live handle.
 */
double fs_recon_log_likelihood(const struct FsReconstruction *recon);

/**
 * # Safety
 * `recon` must be null or a live handle.
 */
size_t fs_recon_iterations(const struct FsReconstruction *recon);

/**
 * # Safety
 * `recon` must be null or a live handle.
 */
bool fs_recon_converged(const struct FsReconstruction *recon);

/**
 * # Safety
 * `recon` must be null or a handle not yet freed.
 */
void fs_recon_free(struct FsReconstruction *recon);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FOCKSCOPE_H */
