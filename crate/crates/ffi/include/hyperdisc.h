#ifndef HYPERDISC_H
#define HYPERDISC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HdStatus {
  HD_STATUS_OK = 0,
  HD_STATUS_NULL_POINTER = 1,
  HD_STATUS_INVALID_ARGUMENT = 2,
  HD_STATUS_DIMENSION_MISMATCH = 3,
  HD_STATUS_OUTSIDE_BALL = 4,
  HD_STATUS_NON_FINITE = 5,
  HD_STATUS_EMPTY = 6,
  HD_STATUS_PARSE = 7,
  HD_STATUS_IO = 8,
  HD_STATUS_DIVERGED = 9,
  HD_STATUS_PANIC = 10,
} HdStatus;

typedef enum HdGeometry {
  HD_GEOMETRY_POINCARE = 0,
  HD_GEOMETRY_EUCLIDEAN = 1,
} HdGeometry;

/**
 * Result of a K-means fit.
 */
typedef struct HdClusterModel HdClusterModel;

/**
 * Trained encoder parameters.
 */
typedef struct HdEncoder HdEncoder;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL after a success. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *hd_last_error_message(void);

/**
 * Hyperbolic distance between two ball points of dimension `dim`.
 *
 * # Safety
 * `x` and `y` must point to `dim` doubles; `out` to one double.
 */
enum HdStatus hd_poincare_distance(const double *x, const double *y, size_t dim, double *out);

/**
 * Gradients of the distance with respect to `x` and `y`, written to `grad_x` and `grad_y`.
 *
 * # Safety
 * All four pointers must reference `dim` doubles.
 */
enum HdStatus hd_distance_grad(const double *x,
                               const double *y,
                               size_t dim,
                               double *grad_x,
                               double *grad_y);

/**
 * Exponential map at the origin.
 *
 * # Safety
 * `v` and `out` must reference `dim` doubles.
 */
enum HdStatus hd_exp_map_origin(const double *v, size_t dim, double *out);

/**
 * Logarithmic map at the origin.
 *
 * # Safety
 * `p` and `out` must reference `dim` doubles.
 */
enum HdStatus hd_log_map_origin(const double *p, size_t dim, double *out);

/**
 * Weighted Fréchet mean of `n` points. `weights` may be NULL for uniform weights; otherwise
 * it holds `n` nonnegative weights summing to 1.
 *
 * # Safety
 * `points` must reference `n * dim` doubles, `weights` (if not NULL) `n`, `out` `dim`.
 */
enum HdStatus hd_frechet_mean(const double *points,
                              size_t n,
                              size_t dim,
                              const double *weights,
                              double *out);

/**
 * Parses encoder parameters from the JSON written by `hyperdisc train`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum HdStatus hd_encoder_from_json(const char *json, struct HdEncoder **out);

/**
 * Input feature length and output embedding dimension.
 *
 * # Safety
 * `encoder` must come from [`hd_encoder_from_json`]; the out pointers must be writable.
 */
enum HdStatus hd_encoder_dims(const struct HdEncoder *encoder,
                              size_t *input_dim,
                              size_t *output_dim);

/**
 * Embeds one feature vector; `out_len` must equal the output dimension.
 *
 * # Safety
 * `feature` must reference `len` doubles and `out` `out_len` doubles.
 */
enum HdStatus hd_encoder_encode(const struct HdEncoder *encoder,
                                const double *feature,
                                size_t len,
                                double *out,
                                size_t out_len);

/**
 * # Safety
 * `encoder` must be NULL or a handle not yet freed.
 */
void hd_encoder_free(struct HdEncoder *encoder);

/**
 * K-means on `n` points of dimension `dim`, keeping the best of `n_init` seeded restarts.
 * `geometry` is an `HdGeometry` value.
 *
 * # Safety
 * `points` must reference `n * dim` doubles; `out` must be writable.
 */
enum HdStatus hd_kmeans(const double *points,
                        size_t n,
                        size_t dim,
                        size_t k,
                        uint64_t seed,
                        size_t max_iter,
                        size_t n_init,
                        int32_t geometry,
                        struct HdClusterModel **out);

/**
 * Number of clusters, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t hd_cluster_model_k(const struct HdClusterModel *model);

/**
 * Sum of squared distances to the assigned centroids.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum HdStatus hd_cluster_model_inertia(const struct HdClusterModel *model, double *out);

/**
 * Copies the cluster index of each point; `len` must equal the number of points.
 *
 * # Safety
 * `out` must reference `len` writable `size_t`s.
 */
enum HdStatus hd_cluster_model_assignment(const struct HdClusterModel *model,
                                          size_t *out,
                                          size_t len);

/**
 * Copies the centroids row-major; `len` must equal `k * dim`.
 *
 * # Safety
 * `out` must reference `len` writable doubles.
 */
enum HdStatus hd_cluster_model_centroids(const struct HdClusterModel *model,
                                         double *out,
                                         size_t len);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void hd_cluster_model_free(struct HdClusterModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYPERDISC_H */
