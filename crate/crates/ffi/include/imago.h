#ifndef IMAGO_H
#define IMAGO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Glimpse selection rule for [`imago_rollout`].
 */
typedef enum ImagoPolicy {
  IMAGO_POLICY_UNCERTAINTY = 0,
  IMAGO_POLICY_RANDOM = 1,
} ImagoPolicy;

/**
 * Result of every fallible call.
 */
typedef enum ImagoStatus {
  IMAGO_STATUS_OK = 0,
  IMAGO_STATUS_NULL_POINTER = 1,
  IMAGO_STATUS_INVALID_ARGUMENT = 2,
  IMAGO_STATUS_BUFFER_TOO_SMALL = 3,
  IMAGO_STATUS_IO = 4,
  IMAGO_STATUS_FORMAT = 5,
  IMAGO_STATUS_RUNTIME = 6,
  IMAGO_STATUS_PANIC = 7,
} ImagoStatus;

/**
 * Opaque model handle.
 */
typedef struct ImagoModel ImagoModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *imago_last_error(void);

/**
 * Load a checkpoint written by `imago train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ImagoStatus imago_model_load(const char *path, struct ImagoModel **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`imago_model_load`] and not be used afterwards.
 */
void imago_model_free(struct ImagoModel *model);

/**
 * Model dimensions; any output pointer may be null.
 *
 * # Safety
 * `model` must be a live handle; non-null outputs must be writable.
 */
enum ImagoStatus imago_model_dims(const struct ImagoModel *model,
                                  size_t *height,
                                  size_t *width,
                                  size_t *glimpse,
                                  size_t *latent_dim,
                                  size_t *feature_dim);

/**
 * Imagine `n` scenes from recurrent features `h` (`feature_dim` values).
 * Writes `n·H·W` Bernoulli means to `samples` and `H·W` values each to
 * `mean` and `variance`; `mean` and `variance` may be null.
 *
 * # Safety
 * Pointers must reference arrays of at least the stated lengths.
 */
enum ImagoStatus imago_imagine(const struct ImagoModel *model,
                               const double *h,
                               size_t h_len,
                               size_t n,
                               uint64_t seed,
                               double *samples,
                               size_t samples_len,
                               double *mean,
                               double *variance);

/**
 * Run a `timesteps`-step episode on `scene` (`H·W` values in `[0, 1]`).
 * Per step, writes the mean scene and variance map (`timesteps·H·W` values
 * each) and the fixation center as `(row, col)` pairs (`2·timesteps` values).
 * Any output pointer may be null.
 *
 * # Safety
 * Pointers must reference arrays of at least the stated lengths.
 */
enum ImagoStatus imago_rollout(const struct ImagoModel *model,
                               const double *scene,
                               size_t scene_len,
                               size_t timesteps,
                               enum ImagoPolicy policy,
                               size_t samples,
                               uint64_t seed,
                               double *means,
                               double *variances,
                               size_t *fixations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMAGO_H */
