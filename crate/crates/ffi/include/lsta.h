#ifndef LSTA_H
#define LSTA_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LstaStatus {
  LSTA_STATUS_OK = 0,
  LSTA_STATUS_NULL_POINTER = 1,
  LSTA_STATUS_INVALID_ARGUMENT = 2,
  LSTA_STATUS_SHAPE = 3,
  LSTA_STATUS_PARSE = 4,
  LSTA_STATUS_IO = 5,
  LSTA_STATUS_NUMERIC = 6,
  LSTA_STATUS_CONFIG = 7,
  LSTA_STATUS_CONTRACT = 8,
  LSTA_STATUS_PANIC = 9,
} LstaStatus;

/**
 * Random-feature projection basis.
 */
typedef struct LstaBasis LstaBasis;

/**
 * Trained model loaded from a checkpoint directory.
 */
typedef struct LstaModel LstaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or an empty
 * string. Valid until the next call into the library on the same thread.
 */
const char *lsta_last_error(void);

/**
 * Draws the projection basis for `c` channels from `seed`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum LstaStatus lsta_basis_new(size_t c, uint64_t seed, struct LstaBasis **out);

/**
 * Number of random features of `basis`, or 0 for a null handle.
 *
 * # Safety
 * `basis` must be null or a live handle from [`lsta_basis_new`].
 */
size_t lsta_basis_features(const struct LstaBasis *basis);

/**
 * # Safety
 * `basis` must be null or a live handle; it is invalid afterwards.
 */
void lsta_basis_free(struct LstaBasis *basis);

/**
 * Normalized memory read-out for `q[hw×c]` against `m[nhw×c]` into
 * `out[hw×c]`. With `exact` nonzero the quadratic reference is used.
 *
 * # Safety
 * Buffers must hold the stated number of floats; `basis` must be live.
 */
enum LstaStatus lsta_global_attention(const struct LstaBasis *basis,
                                      const float *q,
                                      size_t hw,
                                      const float *m,
                                      size_t nhw,
                                      size_t c,
                                      int32_t exact,
                                      float *out);

/**
 * Windowed attention of `query[h×w×c]` over `neighbor[h×w×c]` with
 * window `k` and stride `d`, written to `out[h×w×c]`.
 *
 * # Safety
 * Buffers must hold `h*w*c` floats each.
 */
enum LstaStatus lsta_local_attention(const float *query,
                                     const float *neighbor,
                                     size_t h,
                                     size_t w,
                                     size_t c,
                                     size_t k,
                                     size_t d,
                                     float *out);

/**
 * Region similarity of two `h×w` masks.
 *
 * # Safety
 * `pred` and `gt` must hold `h*w` bytes; `out` must be writable.
 */
enum LstaStatus lsta_metric_j(const uint8_t *pred,
                              const uint8_t *gt,
                              size_t h,
                              size_t w,
                              double *out);

/**
 * Boundary F-measure of two `h×w` masks with tolerance `tol_px`.
 *
 * # Safety
 * `pred` and `gt` must hold `h*w` bytes; `out` must be writable.
 */
enum LstaStatus lsta_metric_f(const uint8_t *pred,
                              const uint8_t *gt,
                              size_t h,
                              size_t w,
                              size_t tol_px,
                              double *out);

/**
 * Loads a checkpoint directory. Inference uses the basis drawn from
 * `seed`.
 *
 * # Safety
 * `dir` must be a NUL-terminated path; `out` must be writable.
 */
enum LstaStatus lsta_model_load(const char *dir, uint64_t seed, struct LstaModel **out);

/**
 * Segments `frames` consecutive `h×w×3` frames (values in `[0, 1]`) into
 * `masks[frames×h×w]`.
 *
 * # Safety
 * `model` must be live; buffers must hold the stated sizes.
 */
enum LstaStatus lsta_model_segment(const struct LstaModel *model,
                                   const float *pixels,
                                   size_t frames,
                                   size_t h,
                                   size_t w,
                                   uint8_t *masks);

/**
 * # Safety
 * `model` must be null or a live handle; it is invalid afterwards.
 */
void lsta_model_free(struct LstaModel *model);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lsta_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LSTA_H */
