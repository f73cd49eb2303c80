#ifndef ALF_H
#define ALF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AlfStatus {
  ALF_STATUS_OK = 0,
  ALF_STATUS_IO = 1,
  ALF_STATUS_PARSE = 2,
  ALF_STATUS_DECODE = 3,
  ALF_STATUS_BUDGET = 4,
  ALF_STATUS_CONFIG = 5,
  ALF_STATUS_SHAPE = 6,
  ALF_STATUS_NULL_POINTER = 7,
  ALF_STATUS_BUFFER_TOO_SMALL = 8,
  ALF_STATUS_INVALID_ARGUMENT = 9,
  ALF_STATUS_PANIC = 10,
} AlfStatus;

/**
 * Feature synthesizer parameters for one ego geometry.
 */
typedef struct AlfEfs AlfEfs;

/**
 * Message layout: field quantizers and record cap.
 */
typedef struct AlfSchema AlfSchema;

typedef struct AlfGridSpec {
  double x_min;
  double x_max;
  double y_min;
  double y_max;
  double v_x;
  double v_y;
} AlfGridSpec;

typedef struct AlfBox {
  double x;
  double y;
  double w;
  double l;
  double yaw;
  double score;
} AlfBox;

/**
 * Sender pose in the receiver frame; yaw in radians.
 */
typedef struct AlfPose {
  double x;
  double y;
  double yaw;
} AlfPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *alf_version(void);

/**
 * Message for the last failed call on this thread, or null after a
 * successful call. Valid until the next `alf_*` call on the same thread.
 */
const char *alf_last_error_message(void);

/**
 * BEV grid dimensions `(H_bev, W_bev)` of `grid`.
 *
 * # Safety
 * Pointers must be null or valid for the pointee type.
 */
enum AlfStatus alf_grid_dims(const struct AlfGridSpec *grid, size_t *rows, size_t *cols);

/**
 * Uniform `bits`-wide schema whose x and y ranges span `grid`. Free with
 * [`alf_schema_free`].
 *
 * # Safety
 * `grid` must be null or valid; `schema_out` must be null or writable.
 */
enum AlfStatus alf_schema_new(const struct AlfGridSpec *grid,
                              uint8_t bits,
                              size_t k_max,
                              struct AlfSchema **schema_out);

/**
 * # Safety
 * `schema` must be null or come from [`alf_schema_new`], freed at most once.
 */
void alf_schema_free(struct AlfSchema *schema);

/**
 * Serialized message size in bytes; 0 for a null schema.
 *
 * # Safety
 * `schema` must be null or a live schema handle.
 */
size_t alf_schema_payload_bytes(const struct AlfSchema *schema);

/**
 * # Safety
 * `schema` must be null or live; `bps` must be null or writable.
 */
enum AlfStatus alf_schema_bandwidth_bps(const struct AlfSchema *schema,
                                        double rate_hz,
                                        double *bps);

/**
 * Keeps the `k_max` highest-scoring boxes and writes the fixed-size message
 * to `buf`. `written` receives the message size, also when `cap` is too small.
 *
 * # Safety
 * `boxes` must point to `n` boxes (may be null when `n == 0`); `buf` must be
 * writable for `cap` bytes.
 */
enum AlfStatus alf_encode(const struct AlfSchema *schema,
                          const struct AlfBox *boxes,
                          size_t n,
                          uint8_t *buf,
                          size_t cap,
                          size_t *written);

/**
 * Decodes a message and maps its boxes through `pose` (identity when null).
 * `count` receives the number of boxes, also when `cap` is too small.
 *
 * # Safety
 * `bytes` must be readable for `len` bytes; `boxes_out` writable for `cap` boxes.
 */
enum AlfStatus alf_decode(const struct AlfSchema *schema,
                          const uint8_t *bytes,
                          size_t len,
                          const struct AlfPose *pose,
                          struct AlfBox *boxes_out,
                          size_t cap,
                          size_t *count);

/**
 * Rasterizes `n` boxes onto `grid` into `out`, row-major over `(x, y)` cells.
 * `cap` must hold `H_bev · W_bev` values.
 *
 * # Safety
 * `boxes` must point to `n` boxes; `values` must be writable for `cap` floats.
 */
enum AlfStatus alf_rasterize(const struct AlfGridSpec *grid,
                             const struct AlfBox *boxes,
                             size_t n,
                             float *values,
                             size_t cap);

/**
 * Freshly initialized synthesizer mapping `grid` to an `rows × cols ×
 * channels` ego feature; `base_channels` 0 selects the default width.
 *
 * # Safety
 * `grid` must be null or valid; `efs_out` must be null or writable.
 */
enum AlfStatus alf_efs_new(const struct AlfGridSpec *grid,
                           size_t rows,
                           size_t cols,
                           size_t channels,
                           size_t base_channels,
                           uint64_t seed,
                           struct AlfEfs **efs_out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `efs_out` must be writable.
 */
enum AlfStatus alf_efs_load(const char *path, struct AlfEfs **efs_out);

/**
 * # Safety
 * `efs` must be a live handle; `path` a NUL-terminated string.
 */
enum AlfStatus alf_efs_save(const struct AlfEfs *efs, const char *path);

/**
 * # Safety
 * `efs` must be null or come from [`alf_efs_new`] / [`alf_efs_load`], freed once.
 */
void alf_efs_free(struct AlfEfs *efs);

/**
 * Pseudo-BEV dims and ego feature dims the synthesizer expects.
 *
 * # Safety
 * `efs` must be live; every output pointer must be writable.
 */
enum AlfStatus alf_efs_dims(const struct AlfEfs *efs,
                            size_t *bev_rows,
                            size_t *bev_cols,
                            size_t *rows,
                            size_t *cols,
                            size_t *channels);

/**
 * Synthesizes an ego-compatible feature from a pseudo-BEV map and the ego
 * feature. All buffers are row-major with channels fastest, and their lengths
 * must match [`alf_efs_dims`] exactly.
 *
 * # Safety
 * Each pointer must be valid for its stated length.
 */
enum AlfStatus alf_efs_forward(const struct AlfEfs *efs,
                               const float *bev,
                               size_t bev_len,
                               const float *ego,
                               size_t ego_len,
                               float *feature_out,
                               size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALF_H */
