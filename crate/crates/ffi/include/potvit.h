#ifndef POTVIT_H
#define POTVIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Enables the inter-layer pipeline in [`potvit_model_simulate`].
 */
#define POTVIT_PIPELINE_INTER 1

/**
 * Enables the intra-layer pipeline in [`potvit_model_simulate`].
 */
#define POTVIT_PIPELINE_INTRA 2

typedef enum PotvitStatus {
  POTVIT_STATUS_OK = 0,
  POTVIT_STATUS_NULL_POINTER = 1,
  POTVIT_STATUS_INVALID_UTF8 = 2,
  POTVIT_STATUS_INVALID_ARGUMENT = 3,
  POTVIT_STATUS_IO = 4,
  POTVIT_STATUS_CONFIG = 5,
  POTVIT_STATUS_SHAPE = 6,
  POTVIT_STATUS_OVERFLOW = 7,
  POTVIT_STATUS_INTERNAL = 8,
  POTVIT_STATUS_PANIC = 9,
} PotvitStatus;

/**
 * Accelerator parameters.
 */
typedef struct PotvitArch PotvitArch;

/**
 * A loaded integer model.
 */
typedef struct PotvitModel PotvitModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *potvit_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated,
 * always NUL-terminated when `len > 0`) and returns the full length
 * including the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t potvit_last_error(char *buf, size_t len);

/**
 * Loads a model directory written by `potvit quantize`.
 *
 * # Safety
 * `dir` must be a NUL-terminated path; `out` must be valid for one write.
 */
enum PotvitStatus potvit_model_load(const char *dir, struct PotvitModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`potvit_model_load`] not yet freed.
 */
void potvit_model_free(struct PotvitModel *model);

/**
 * Input tokens, input width and class count. Any output may be null.
 *
 * # Safety
 * `model` must be a live handle; non-null outputs must be writable.
 */
enum PotvitStatus potvit_model_dims(const struct PotvitModel *model,
                                    size_t *tokens,
                                    size_t *input_dim,
                                    size_t *classes);

/**
 * Integer-only inference on one `(tokens, input_dim)` row-major input.
 *
 * Writes `classes` logit accumulators and their power-of-two exponents
 * (logit = code · 2^exp); `predicted` receives the arg-max class.
 *
 * # Safety
 * `input` must hold `input_len` floats; `codes` and `exps` must hold
 * `classes` values; `predicted` may be null.
 */
enum PotvitStatus potvit_model_infer(const struct PotvitModel *model,
                                     const float *input,
                                     size_t input_len,
                                     int32_t *codes,
                                     int32_t *exps,
                                     size_t classes,
                                     size_t *predicted);

/**
 * The default accelerator parameters.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum PotvitStatus potvit_arch_default(struct PotvitArch **out);

/**
 * Loads accelerator parameters from a JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated path; `out` must be valid for one write.
 */
enum PotvitStatus potvit_arch_load(const char *path, struct PotvitArch **out);

/**
 * # Safety
 * `arch` must be null or a live handle.
 */
void potvit_arch_free(struct PotvitArch *arch);

/**
 * Cycles and energy (pJ) of one inference of `model` at its bit-widths.
 *
 * `arch` may be null for the defaults; `pipeline` is a mask of
 * `POTVIT_PIPELINE_*` bits.
 *
 * # Safety
 * `model` must be a live handle, `arch` null or live; `cycles` and
 * `energy_pj` must be writable.
 */
enum PotvitStatus potvit_model_simulate(const struct PotvitModel *model,
                                        const struct PotvitArch *arch,
                                        uint32_t pipeline,
                                        uint64_t *cycles,
                                        double *energy_pj);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POTVIT_H */
