#ifndef FSC_H
#define FSC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum FscStatus {
  FSC_STATUS_OK = 0,
  FSC_STATUS_NULL_POINTER = 1,
  FSC_STATUS_INVALID_ARGUMENT = 2,
  FSC_STATUS_IO = 3,
  FSC_STATUS_CONFIG = 4,
  FSC_STATUS_NUMERIC = 5,
  FSC_STATUS_CHECKPOINT = 6,
  FSC_STATUS_PANIC = 7,
} FscStatus;

// A point cloud.
typedef struct FscCloud FscCloud;

// A completion network.
typedef struct FscModel FscModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or an empty string.
// The pointer stays valid until the next call on the same thread.
const char *fsc_last_error(void);

// Library version as a static NUL-terminated string.
const char *fsc_version(void);

// Creates a cloud from `n` points stored as `x0 y0 z0 x1 ...`.
//
// # Safety
// `xyz` must point to `3 * n` readable doubles; `out` must be writable.
enum FscStatus fsc_cloud_new(const double *xyz, size_t n, struct FscCloud **out);

// Reads a PLY cloud.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FscStatus fsc_cloud_read(const char *path, struct FscCloud **out);

// Number of points, or 0 for a null handle.
//
// # Safety
// `cloud` must be null or a live handle.
size_t fsc_cloud_len(const struct FscCloud *cloud);

// Copies the coordinates into `xyz`, which holds `capacity` points.
//
// # Safety
// `cloud` must be a live handle and `xyz` must have room for `3 * capacity` doubles.
enum FscStatus fsc_cloud_copy_points(const struct FscCloud *cloud, double *xyz, size_t capacity);

// # Safety
// `cloud` must be null or a handle not yet freed.
void fsc_cloud_free(struct FscCloud *cloud);

// Symmetric Chamfer distance with L1 point distances.
//
// # Safety
// `a`, `b` must be live handles and `out` writable.
enum FscStatus fsc_chamfer_l1(const struct FscCloud *a, const struct FscCloud *b, double *out);

// Exact earth mover's distance between clouds of equal size.
//
// # Safety
// `a`, `b` must be live handles and `out` writable.
enum FscStatus fsc_emd(const struct FscCloud *a, const struct FscCloud *b, double *out);

// Freshly initialized network. `preset` is "tiny" or "full".
//
// # Safety
// `preset` must be a NUL-terminated string; `out` must be writable.
enum FscStatus fsc_model_new(const char *preset, uint64_t seed, struct FscModel **out);

// Loads a model checkpoint or the generator of a training state.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FscStatus fsc_model_load(const char *path, struct FscModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum FscStatus fsc_model_save(const struct FscModel *model, const char *path);

// Number of points produced by [`fsc_complete`], or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t fsc_model_output_points(const struct FscModel *model);

// Completes `input` into a new cloud of [`fsc_model_output_points`] points.
//
// # Safety
// `model`, `input` must be live handles and `out` writable.
enum FscStatus fsc_complete(const struct FscModel *model,
                            const struct FscCloud *input,
                            struct FscCloud **out);

// # Safety
// `model` must be null or a handle not yet freed.
void fsc_model_free(struct FscModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FSC_H */
