#ifndef MCMR_H
#define MCMR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum McmrStatus {
  MCMR_STATUS_OK = 0,
  MCMR_STATUS_NULL_POINTER = 1,
  MCMR_STATUS_INVALID_ARGUMENT = 2,
  MCMR_STATUS_BUFFER_TOO_SMALL = 3,
  MCMR_STATUS_IO = 4,
  MCMR_STATUS_MODEL = 5,
  MCMR_STATUS_RENDER = 6,
  MCMR_STATUS_INTERNAL = 7,
} McmrStatus;

/**
 * Triangle mesh.
 */
typedef struct McmrMesh McmrMesh;

/**
 * Trained or freshly initialized network with its meanshape bank.
 */
typedef struct McmrModel McmrModel;

/**
 * Inference output for one image.
 */
typedef struct McmrPrediction McmrPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *mcmr_last_error(void);

/**
 * Library version, static storage.
 */
const char *mcmr_version(void);

/**
 * Default architecture with `num_meanshapes` spheres at icosphere `level`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum McmrStatus mcmr_model_new(size_t num_meanshapes,
                               uint32_t level,
                               uint64_t seed,
                               struct McmrModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for writes.
 */
enum McmrStatus mcmr_model_load(const char *path, struct McmrModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum McmrStatus mcmr_model_save(const struct McmrModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library or be null; it is invalid afterwards.
 */
void mcmr_model_free(struct McmrModel *model);

/**
 * Number of meanshapes, or 0 for a null handle.
 *
 * # Safety
 * `model` must come from this library or be null.
 */
size_t mcmr_model_num_meanshapes(const struct McmrModel *model);

/**
 * Vertices per meanshape, or 0 for a null handle.
 *
 * # Safety
 * `model` must come from this library or be null.
 */
size_t mcmr_model_num_vertices(const struct McmrModel *model);

/**
 * Runs the network on a `3×height×width` image.
 *
 * # Safety
 * `rgb` must hold `3*height*width` doubles and `out` be valid for writes.
 */
enum McmrStatus mcmr_predict(const struct McmrModel *model,
                             const double *rgb,
                             size_t height,
                             size_t width,
                             struct McmrPrediction **out);

/**
 * # Safety
 * `prediction` must come from this library or be null.
 */
void mcmr_prediction_free(struct McmrPrediction *prediction);

/**
 * Meanshape weights; `capacity` must be at least the meanshape count.
 *
 * # Safety
 * `out` must be valid for `capacity` writes.
 */
enum McmrStatus mcmr_prediction_weights(const struct McmrPrediction *prediction,
                                        double *out,
                                        size_t capacity);

/**
 * Predicted pose as 7 doubles.
 *
 * # Safety
 * `out` must be valid for 7 writes.
 */
enum McmrStatus mcmr_prediction_pose(const struct McmrPrediction *prediction, double *out);

/**
 * Copies the deformed shape, or with `meanshape` nonzero the weighted
 * meanshape, into a new mesh handle.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum McmrStatus mcmr_prediction_mesh(const struct McmrPrediction *prediction,
                                     int32_t meanshape,
                                     struct McmrMesh **out);

/**
 * Unit icosphere; level 1 is the icosahedron.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum McmrStatus mcmr_mesh_icosphere(uint32_t level, struct McmrMesh **out);

/**
 * # Safety
 * `mesh` must come from this library or be null.
 */
void mcmr_mesh_free(struct McmrMesh *mesh);

/**
 * # Safety
 * `mesh` must come from this library or be null.
 */
size_t mcmr_mesh_num_vertices(const struct McmrMesh *mesh);

/**
 * # Safety
 * `mesh` must come from this library or be null.
 */
size_t mcmr_mesh_num_faces(const struct McmrMesh *mesh);

/**
 * Vertex positions, `x y z` per vertex.
 *
 * # Safety
 * `out` must be valid for `capacity` writes.
 */
enum McmrStatus mcmr_mesh_vertices(const struct McmrMesh *mesh, double *out, size_t capacity);

/**
 * Zero-based vertex indices, three per face.
 *
 * # Safety
 * `out` must be valid for `capacity` writes.
 */
enum McmrStatus mcmr_mesh_faces(const struct McmrMesh *mesh, uint32_t *out, size_t capacity);

/**
 * # Safety
 * `path` must be NUL-terminated.
 */
enum McmrStatus mcmr_mesh_export_obj(const struct McmrMesh *mesh, const char *path);

/**
 * Soft silhouette `size×size` of `mesh` under `pose` with sharpness
 * `sigma`.
 *
 * # Safety
 * `pose` must hold 7 doubles and `out` be valid for `capacity` writes.
 */
enum McmrStatus mcmr_render_silhouette(const struct McmrMesh *mesh,
                                       const double *pose,
                                       size_t size,
                                       double sigma,
                                       double *out,
                                       size_t capacity);

/**
 * IoU of two masks of `len` values binarized at 0.5.
 *
 * # Safety
 * `a` and `b` must hold `len` doubles; `out` must be valid for writes.
 */
enum McmrStatus mcmr_mask_iou(const double *a, const double *b, size_t len, double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* MCMR_H */
