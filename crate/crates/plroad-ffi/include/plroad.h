/* C interface for the plroad road-detection library. */

#ifndef PLROAD_H
#define PLROAD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes; nonzero values mirror the CLI's exit-code classes.
 */
typedef enum PlroadStatus {
  /**
   * Success.
   */
  PlroadStatus_Ok = 0,
  /**
   * A required pointer argument was null.
   */
  PlroadStatus_NullArgument = 1,
  /**
   * Invalid argument or incompatible checkpoint.
   */
  PlroadStatus_Usage = 2,
  /**
   * Filesystem or file-format failure.
   */
  PlroadStatus_Io = 3,
  /**
   * Numerical failure during inference.
   */
  PlroadStatus_Numeric = 4,
  /**
   * Unexpected internal failure (a panic was caught at the boundary).
   */
  PlroadStatus_Internal = 5,
} PlroadStatus;

/**
 * Opaque model handle: a loaded network plus its inference contract.
 */
typedef struct PlroadModel PlroadModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the current thread's last error message into `buf` (NUL-terminated,
 * truncated to `len` bytes). Returns the full message length in bytes,
 * excluding the terminator. `buf` may be null to query the length.
 */
size_t plroad_last_error(char *buf, size_t len);

/**
 * Load a checkpoint written by the `plroad` tools. Expects the metadata
 * sidecar (`<path>.meta.json`) next to the checkpoint. On success writes a
 * handle into `out`; release it with `plroad_model_free`.
 */
enum PlroadStatus plroad_model_load(const char *path, struct PlroadModel **out);

/**
 * Release a handle returned by `plroad_model_load`. Null is a no-op.
 */
void plroad_model_free(struct PlroadModel *model);

/**
 * Whether inference on this model requires a depth map: 1 yes, 0 no,
 * -1 if `model` is null.
 */
int plroad_model_needs_depth(const struct PlroadModel *model);

/**
 * Copy the model's fusion-mode name (e.g. "PLIF") into `buf`,
 * NUL-terminated and truncated to `len` bytes.
 */
enum PlroadStatus plroad_model_mode(const struct PlroadModel *model, char *buf, size_t len);

/**
 * Score one image. `rgb` is interleaved 8-bit RGB, row-major,
 * `width * height * 3` bytes. `depth` is a row-major float depth map of
 * `width * height` entries; it may be null for models whose
 * `plroad_model_needs_depth` is 0. `pl_clip` normalizes the pseudo-LiDAR
 * feature (use the training dataset's value; values <= 0 select 1.0).
 * Writes `width * height` road probabilities in [0,1] into `scores`.
 */
enum PlroadStatus plroad_infer(const struct PlroadModel *model,
                               size_t width,
                               size_t height,
                               const uint8_t *rgb,
                               const float *depth,
                               double pl_clip,
                               float *scores);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLROAD_H */
