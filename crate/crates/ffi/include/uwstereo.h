#ifndef UWSTEREO_H
#define UWSTEREO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum UwsStatus {
  UWS_STATUS_OK = 0,
  UWS_STATUS_NULL_POINTER = 1,
  UWS_STATUS_INVALID_ARGUMENT = 2,
  UWS_STATUS_CONFIG = 3,
  UWS_STATUS_IO = 4,
  UWS_STATUS_FORMAT = 5,
  UWS_STATUS_SHAPE = 6,
  UWS_STATUS_NUMERIC = 7,
  UWS_STATUS_INTERNAL = 8,
} UwsStatus;

// Triangulated points, optionally colored.
typedef struct UwsCloud UwsCloud;

// Disparity map; invalid pixels hold negative infinity.
typedef struct UwsDisparity UwsDisparity;

// Calibrated two-camera rig.
typedef struct UwsRig UwsRig;

// Trained patch-similarity network.
typedef struct UwsStereoNet UwsStereoNet;

// Summary of a reconstruction run.
typedef struct UwsReconstructSummary {
  size_t points;
  size_t raw_points;
  size_t triangles;
  // Negative when no ground truth was available.
  double rmse;
} UwsReconstructSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *uws_version(void);

// Message of the last failed call on this thread, or NULL. Valid until the
// next call into the library from the same thread.
const char *uws_last_error(void);

// Ideal rectified rig: two pinhole cameras `baseline` metres apart along x.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum UwsStatus uws_rig_rectified(double focal,
                                 size_t width,
                                 size_t height,
                                 double baseline,
                                 struct UwsRig **out);

// Loads a rig file written by `uwstereo calibrate`.
//
// # Safety
// `path` must be NUL-terminated; `out` must be valid for one write.
enum UwsStatus uws_rig_load(const char *path, struct UwsRig **out);

// Rectified-frame pixel and disparity to a left-camera point in metres.
// Non-positive disparities are rejected.
//
// # Safety
// `rig` must come from this library; `xyz` must hold three doubles.
enum UwsStatus uws_rig_triangulate(const struct UwsRig *rig,
                                   double x,
                                   double y,
                                   double disparity,
                                   double *xyz);

// # Safety
// `rig` must be NULL or a handle from this library not yet freed.
void uws_rig_free(struct UwsRig *rig);

// Loads a stereo network checkpoint written by `uwstereo train`.
//
// # Safety
// `path` must be NUL-terminated; `out` must be valid for one write.
enum UwsStatus uws_stereo_net_load(const char *path, struct UwsStereoNet **out);

// # Safety
// `net` must be NULL or a handle from this library not yet freed.
void uws_stereo_net_free(struct UwsStereoNet *net);

// Matches a rectified pair of row-major grayscale images in [0, 1]. With
// `net` NULL the block-matching baseline runs; otherwise the network.
// `mask` may be NULL (full frame) or hold one byte per pixel, nonzero on
// the pixels to match.
//
// # Safety
// `left` and `right` must hold `width * height` floats, `mask` (when not
// NULL) that many bytes; `out` must be valid for one write.
enum UwsStatus uws_match(const struct UwsStereoNet *net,
                         const float *left,
                         const float *right,
                         const uint8_t *mask,
                         size_t width,
                         size_t height,
                         size_t min_disparity,
                         size_t max_disparity,
                         struct UwsDisparity **out);

// Wraps caller-provided disparities; non-finite values are invalid.
//
// # Safety
// `values` must hold `width * height` floats; `out` must be valid for one write.
enum UwsStatus uws_disparity_from_values(const float *values,
                                         size_t width,
                                         size_t height,
                                         struct UwsDisparity **out);

// Width and height of a disparity map; 0 for NULL.
//
// # Safety
// `map` must be NULL or a live handle.
size_t uws_disparity_width(const struct UwsDisparity *map);

// # Safety
// `map` must be NULL or a live handle.
size_t uws_disparity_height(const struct UwsDisparity *map);

// Copies the map row-major into `buffer`, which must hold `len >= width *
// height` floats. Invalid pixels are negative infinity.
//
// # Safety
// `map` must be a live handle; `buffer` must be writable for `len` floats.
enum UwsStatus uws_disparity_copy(const struct UwsDisparity *map, float *buffer, size_t len);

// # Safety
// `map` must be NULL or a handle from this library not yet freed.
void uws_disparity_free(struct UwsDisparity *map);

// Triangulates every valid disparity.
//
// # Safety
// Handles must be live; `out` must be valid for one write.
enum UwsStatus uws_cloud_from_disparity(const struct UwsDisparity *map,
                                        const struct UwsRig *rig,
                                        struct UwsCloud **out);

// New cloud without statistical outliers: points whose mean distance to
// `neighbors` nearest neighbours is unusually large.
//
// # Safety
// `cloud` must be live; `out` must be valid for one write.
enum UwsStatus uws_cloud_remove_outliers(const struct UwsCloud *cloud,
                                         size_t neighbors,
                                         double sigma,
                                         struct UwsCloud **out);

// Point count; 0 for NULL.
//
// # Safety
// `cloud` must be NULL or a live handle.
size_t uws_cloud_len(const struct UwsCloud *cloud);

// Copies points as consecutive x, y, z doubles; `len` counts doubles.
//
// # Safety
// `cloud` must be live; `buffer` must be writable for `len` doubles.
enum UwsStatus uws_cloud_copy_points(const struct UwsCloud *cloud, double *buffer, size_t len);

// Writes a binary PLY file.
//
// # Safety
// `cloud` must be live; `path` NUL-terminated.
enum UwsStatus uws_cloud_write_ply(const struct UwsCloud *cloud, const char *path);

// # Safety
// `cloud` must be NULL or a handle from this library not yet freed.
void uws_cloud_free(struct UwsCloud *cloud);

// Runs the `reconstruct` command with a TOML configuration file, or the
// defaults when `config_path` is NULL. Artifacts go to `paths.output`.
//
// # Safety
// `config_path` must be NULL or NUL-terminated; `summary` must be valid
// for one write.
enum UwsStatus uws_reconstruct(const char *config_path,
                               bool no_segmentation,
                               struct UwsReconstructSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UWSTEREO_H */
