#ifndef TNEEDLE_H
#define TNEEDLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum TnStatus {
  TN_STATUS_OK = 0,
  TN_STATUS_NULL_POINTER = 1,
  TN_STATUS_INVALID_ARGUMENT = 2,
  TN_STATUS_TOO_SHORT = 3,
  TN_STATUS_IO = 4,
  TN_STATUS_FORMAT = 5,
  TN_STATUS_EMPTY = 6,
  TN_STATUS_DEGENERATE = 7,
  TN_STATUS_BUFFER_TOO_SMALL = 8,
  TN_STATUS_PANIC = 9,
} TnStatus;

/**
 * Opaque descriptor-field handle.
 */
typedef struct TnField TnField;

/**
 * Opaque video handle.
 */
typedef struct TnVideo TnVideo;

/**
 * Descriptor parameters; see [`tn_needle_params_default`].
 */
typedef struct TnNeedleParams {
  uint32_t patch_radius;
  uint32_t gamma;
  uint32_t scales;
  double noise_percentile;
} TnNeedleParams;

/**
 * Outcome of [`tn_align`]. `affine` is `[a11, a12, a13, a21, a22, a23]`.
 */
typedef struct TnAlignResult {
  double shift;
  int64_t integer_shift;
  double alpha;
  double affine[6];
  double score;
  size_t matches;
} TnAlignResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *tn_last_error(void);

/**
 * Default parameters: 3x3 patches, temporal radius 3, 3 scales, 30th
 * percentile noise floor.
 */
struct TnNeedleParams tn_needle_params_default(void);

/**
 * Creates a video from `width * height * frames` intensities in `[0, 1]`,
 * frame by frame in row-major order.
 *
 * # Safety
 * `data` must point to `len` readable doubles; `out` must be writable.
 */
enum TnStatus tn_video_new(size_t width,
                           size_t height,
                           size_t frames,
                           double fps,
                           const double *data,
                           size_t len,
                           struct TnVideo **out);

/**
 * Loads a raw-y8 file or, for a directory, an image sequence.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TnStatus tn_video_load(const char *path, struct TnVideo **out);

/**
 * Writes a raw-y8 file.
 *
 * # Safety
 * `video` must come from this library; `path` must be NUL-terminated.
 */
enum TnStatus tn_video_save(const struct TnVideo *video, const char *path);

/**
 * Width, height and frame count.
 *
 * # Safety
 * `video` must come from this library; the outputs must be writable.
 */
enum TnStatus tn_video_dims(const struct TnVideo *video,
                            size_t *width,
                            size_t *height,
                            size_t *frames);

/**
 * Releases a video; null is ignored.
 *
 * # Safety
 * `video` must come from this library and not be used afterwards.
 */
void tn_video_free(struct TnVideo *video);

/**
 * Renders one synthetic actor. `pattern` is `oscillating-dot`,
 * `translating-bar` or `two-phase-gesture`; the remaining motion settings
 * take their defaults.
 *
 * # Safety
 * `pattern` must be NUL-terminated; `out` must be writable.
 */
enum TnStatus tn_synth_render(const char *pattern,
                              size_t width,
                              size_t height,
                              size_t frames,
                              uint64_t seed,
                              struct TnVideo **out);

/**
 * Computes the descriptor field of `video`. `params` may be null for the
 * defaults.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum TnStatus tn_describe(const struct TnVideo *video,
                          const struct TnNeedleParams *params,
                          struct TnField **out);

/**
 * Number of descriptors and their length.
 *
 * # Safety
 * `field` must come from this library; the outputs must be writable.
 */
enum TnStatus tn_field_shape(const struct TnField *field, size_t *count, size_t *dim);

/**
 * Copies the descriptor at pixel `(x, y)` of frame `t` into `out`, which
 * must hold at least `dim` values.
 *
 * # Safety
 * `field` must come from this library; `out` must hold `cap` doubles.
 */
enum TnStatus tn_field_descriptor(const struct TnField *field,
                                  size_t x,
                                  size_t y,
                                  size_t t,
                                  double *out,
                                  size_t cap);

/**
 * Releases a field; null is ignored.
 *
 * # Safety
 * `field` must come from this library and not be used afterwards.
 */
void tn_field_free(struct TnField *field);

/**
 * Aligns `query` to `reference` with default settings and an affine
 * spatial model.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum TnStatus tn_align(const struct TnVideo *query,
                       const struct TnVideo *reference,
                       uint64_t seed,
                       struct TnAlignResult *out);

/**
 * Detects the query action in `reference`. Up to `cap` detections are
 * written, strongest first; `count` receives the total number found.
 *
 * # Safety
 * Handles must come from this library; `frames` and `scores` must hold
 * `cap` values each (they may be null when `cap` is 0).
 */
enum TnStatus tn_detect(const struct TnVideo *query,
                        const struct TnVideo *reference,
                        uint64_t seed,
                        size_t *frames,
                        double *scores,
                        size_t cap,
                        size_t *count);

/**
 * Clusters `count` videos into `clusters` groups; `labels` receives one
 * label per video.
 *
 * # Safety
 * `videos` must hold `count` handles from this library; `labels` must
 * hold `count` values.
 */
enum TnStatus tn_cluster(const struct TnVideo *const *videos,
                         size_t count,
                         size_t clusters,
                         uint64_t seed,
                         size_t *labels);

/**
 * Samples needed to hit a region of `region` points among
 * `pixels * frames` with failure probability `delta`.
 *
 * # Safety
 * `out` must be writable.
 */
enum TnStatus tn_sample_count(size_t pixels,
                              size_t frames,
                              size_t region,
                              double delta,
                              size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TNEEDLE_H */
