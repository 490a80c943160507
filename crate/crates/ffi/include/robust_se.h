#ifndef ROBUST_SE_H
#define ROBUST_SE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RseStatus {
  RSE_STATUS_OK = 0,
  RSE_STATUS_NULL_POINTER = 1,
  RSE_STATUS_INVALID_ARGUMENT = 2,
  RSE_STATUS_CONFIG = 3,
  RSE_STATUS_LOAD = 4,
  RSE_STATUS_SHAPE = 5,
  RSE_STATUS_SILENT_REFERENCE = 6,
  RSE_STATUS_BUFFER_TOO_SMALL = 7,
  RSE_STATUS_INTERNAL = 8,
} RseStatus;

/**
 * A loaded enhancement model. Create with `rse_model_load`, release with
 * `rse_model_free`.
 */
typedef struct RseModel RseModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next library call on this thread.
 */
const char *rse_last_error(void);

/**
 * Static description of a status code.
 */
const char *rse_status_str(enum RseStatus status);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rse_version(void);

/**
 * Load a checkpoint file. On success `*out` owns a new model.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RseStatus rse_model_load(const char *path, struct RseModel **out);

/**
 * Release a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from `rse_model_load` and not be used afterwards.
 */
void rse_model_free(struct RseModel *model);

/**
 * Number of output branches (1 for traditional models, 3 for MixIT).
 *
 * # Safety
 * `model` must be a live model or NULL (which yields 0).
 */
size_t rse_model_outputs(const struct RseModel *model);

/**
 * Enhance `len` samples. Writes `outputs × len` samples to `out`, branch
 * after branch; branch 0 is the speech estimate. `out_len` is the capacity
 * of `out` in samples.
 *
 * # Safety
 * `input` must hold `len` doubles and `out` `out_len` doubles.
 */
enum RseStatus rse_model_enhance(const struct RseModel *model,
                                 const double *input,
                                 size_t len,
                                 uint32_t sample_rate,
                                 double *out,
                                 size_t out_len);

/**
 * Scale-invariant SDR of `est` against `reference`, in dB.
 *
 * # Safety
 * Both arrays must hold `len` doubles; `out_db` must be valid.
 */
enum RseStatus rse_si_sdr(const double *est, const double *reference, size_t len, double *out_db);

/**
 * Aggregate a `k × t × f` error tensor (row-major) with the named order,
 * e.g. "sample_median_tf_mean". `trim_fraction` is used only by the
 * trimmed-mean order.
 *
 * # Safety
 * `errors` must hold `k·t·f` doubles; `order` must be NUL-terminated;
 * `out` must be valid.
 */
enum RseStatus rse_aggregate(const double *errors,
                             size_t k,
                             size_t t,
                             size_t f,
                             const char *order,
                             double trim_fraction,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBUST_SE_H */
