#ifndef MIRID_H
#define MIRID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MiridStatus {
  MIRID_STATUS_OK = 0,
  MIRID_STATUS_NULL_POINTER = 1,
  MIRID_STATUS_INVALID_ARGUMENT = 2,
  MIRID_STATUS_IO = 3,
  MIRID_STATUS_FORMAT = 4,
  MIRID_STATUS_NUMERICAL = 5,
  MIRID_STATUS_PANIC = 6,
} MiridStatus;

typedef enum MiridMethod {
  MIRID_METHOD_SENSE = 0,
  MIRID_METHOD_MIRID = 1,
  MIRID_METHOD_SIRID = 2,
} MiridMethod;

/**
 * Opaque simulated or loaded acquisition.
 */
typedef struct MiridDataset MiridDataset;

/**
 * Opaque reconstruction model (CG-SENSE, joint or single-shot).
 */
typedef struct MiridModel MiridModel;

/**
 * Geometry of a dataset.
 */
typedef struct MiridDims {
  /**
   * Volumes including the b=0 one.
   */
  size_t volumes;
  size_t nshots;
  size_t ncoils;
  size_t ny;
  size_t nx;
} MiridDims;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *mirid_last_error(void);

/**
 * Simulates a dataset. `config_toml` may be null for the defaults.
 *
 * # Safety
 * `config_toml` must be null or a NUL-terminated string; `out` must be writable.
 */
enum MiridStatus mirid_dataset_simulate(const char *config_toml,
                                        uint64_t seed,
                                        struct MiridDataset **out);

/**
 * Loads a dataset container.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MiridStatus mirid_dataset_open(const char *path, struct MiridDataset **out);

/**
 * Writes a dataset container.
 *
 * # Safety
 * `ds` must come from this library; `path` must be a NUL-terminated string.
 */
enum MiridStatus mirid_dataset_save(const struct MiridDataset *ds, const char *path);

/**
 * Releases a dataset; null is ignored.
 *
 * # Safety
 * `ds` must be null or a handle from this library not yet freed.
 */
void mirid_dataset_free(struct MiridDataset *ds);

/**
 * # Safety
 * `ds` must come from this library; `out` must be writable.
 */
enum MiridStatus mirid_dataset_dims(const struct MiridDataset *ds, struct MiridDims *out);

/**
 * Copies the ground-truth magnitude of `volume` into `out` (`ny * nx` values).
 *
 * # Safety
 * `ds` must come from this library; `out` must hold `len` doubles.
 */
enum MiridStatus mirid_dataset_truth(const struct MiridDataset *ds,
                                     size_t volume,
                                     double *out,
                                     size_t len);

/**
 * Creates a model with freshly initialized denoisers (none for CG-SENSE).
 * With untrained denoisers the unrolled methods reduce to a net-free
 * proximal iteration.
 *
 * # Safety
 * `config_toml` must be null or a NUL-terminated string; `out` must be writable.
 */
enum MiridStatus mirid_model_untrained(enum MiridMethod method,
                                       const char *config_toml,
                                       size_t nshots,
                                       uint64_t seed,
                                       struct MiridModel **out);

/**
 * Loads a trained checkpoint, checked against the configured architecture.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `config_toml` null or one; `out` writable.
 */
enum MiridStatus mirid_model_open(const char *path,
                                  const char *config_toml,
                                  size_t nshots,
                                  struct MiridModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void mirid_model_free(struct MiridModel *model);

/**
 * Reconstructs `volume` and writes its shot-combined magnitude (`ny * nx`).
 *
 * # Safety
 * Handles must come from this library; `out` must hold `len` doubles.
 */
enum MiridStatus mirid_reconstruct(const struct MiridModel *model,
                                   const struct MiridDataset *ds,
                                   size_t volume,
                                   double *out,
                                   size_t len);

/**
 * `100 * ||x - reference|| / ||reference||` over `len` values.
 *
 * # Safety
 * `x` and `reference` must hold `len` doubles; `out` must be writable.
 */
enum MiridStatus mirid_nrmse(const double *x, const double *reference, size_t len, double *out);

/**
 * Centered orthonormal 2-D FFT (inverse when `inverse != 0`) of an
 * `ny x nx` complex image stored as interleaved (re, im) pairs.
 *
 * # Safety
 * `input` and `output` must each hold `2 * ny * nx` doubles; they may alias.
 */
enum MiridStatus mirid_fft2c(const double *input,
                             double *output,
                             size_t ny,
                             size_t nx,
                             int32_t inverse);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIRID_H */
