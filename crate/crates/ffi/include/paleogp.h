#ifndef PALEOGP_H
#define PALEOGP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define PALEOGP_OK 0

/**
 * Invalid input: bad arguments, null pointers, malformed files.
 */
#define PALEOGP_ERR_INPUT 2

/**
 * Numerical failure inside the model.
 */
#define PALEOGP_ERR_NUMERICAL 3

/**
 * I/O failure.
 */
#define PALEOGP_ERR_IO 4

/**
 * Opaque trained-model handle.
 */
typedef struct PaleogpModel PaleogpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a model from a checkpoint file. On success writes a handle to
 * `out_model`; the caller owns it and must free it with
 * `paleogp_model_free`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out_model` a valid
 * pointer.
 */
int32_t paleogp_model_load(const char *path, struct PaleogpModel **out_model);

/**
 * Posterior predictive at `n` points. `points` holds `3 * n` doubles laid
 * out as (lon, lat, age_bp) triples; each output array holds `n` doubles.
 * Any output pointer may be null to skip that quantity.
 *
 * # Safety
 * `model` must come from `paleogp_model_load`; array arguments must match
 * the documented lengths.
 */
int32_t paleogp_model_predict(const struct PaleogpModel *model,
                              const double *points,
                              uintptr_t n,
                              double *out_mean,
                              double *out_std_latent,
                              double *out_std_predictive);

/**
 * Number of spatial inducing points (M_s), or a negative error code.
 *
 * # Safety
 * `model` must come from `paleogp_model_load`.
 */
int64_t paleogp_model_num_inducing(const struct PaleogpModel *model);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must come from `paleogp_model_load` and not be freed twice.
 */
void paleogp_model_free(struct PaleogpModel *model);

/**
 * Copy the calling thread's last error message (NUL-terminated, truncated
 * to `len`) into `buf`. Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes (or be null with
 * `len == 0` to query the length).
 */
uintptr_t paleogp_last_error(char *buf, uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PALEOGP_H */
