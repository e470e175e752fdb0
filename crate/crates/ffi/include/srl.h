#ifndef SRL_H
#define SRL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SrlStatus {
  SrlStatus_Ok = 0,
  SrlStatus_NullPointer = 1,
  SrlStatus_InvalidArgument = 2,
  SrlStatus_Shape = 3,
  SrlStatus_Data = 4,
  SrlStatus_Numeric = 5,
  SrlStatus_Schema = 6,
  SrlStatus_Io = 7,
  SrlStatus_Panic = 8,
} SrlStatus;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct SrlModel SrlModel;

/**
 * Points drawn uniformly from the unit hypersphere.
 */
typedef struct SrlSphere SrlSphere;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *srl_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *srl_version(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SrlStatus srl_model_load(const char *path, struct SrlModel **out);

/**
 * Decodes a checkpoint held in memory.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` must be writable.
 */
enum SrlStatus srl_model_from_bytes(const uint8_t *bytes, uintptr_t len, struct SrlModel **out);

/**
 * # Safety
 * `model` must come from `srl_model_load` or `srl_model_from_bytes` and not be used afterwards.
 */
void srl_model_free(struct SrlModel *model);

/**
 * Number of input features, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t srl_model_input_dim(const struct SrlModel *model);

/**
 * Representation width, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t srl_model_rep_dim(const struct SrlModel *model);

/**
 * Predicts `rows` targets in original units from a row-major `rows x cols` block.
 *
 * # Safety
 * `x` must hold `rows * cols` values and `out` must hold `out_len` values.
 */
enum SrlStatus srl_model_predict(const struct SrlModel *model,
                                 const double *x,
                                 uintptr_t rows,
                                 uintptr_t cols,
                                 double *out,
                                 uintptr_t out_len);

/**
 * Writes the unit-norm representations, `rows x rep_dim` row-major.
 *
 * # Safety
 * `x` must hold `rows * cols` values and `out` must hold `out_len` values.
 */
enum SrlStatus srl_model_encode(const struct SrlModel *model,
                                const double *x,
                                uintptr_t rows,
                                uintptr_t cols,
                                double *out,
                                uintptr_t out_len);

/**
 * Draws `n` points uniformly on the unit sphere in `d` dimensions.
 *
 * # Safety
 * `out` must be writable.
 */
enum SrlStatus srl_sphere_new(uintptr_t n, uintptr_t d, uint64_t seed, struct SrlSphere **out);

/**
 * # Safety
 * `sphere` must come from `srl_sphere_new` and not be used afterwards.
 */
void srl_sphere_free(struct SrlSphere *sphere);

/**
 * Copies the `n x d` sample, row-major.
 *
 * # Safety
 * `out` must hold `out_len` values.
 */
enum SrlStatus srl_sphere_points(const struct SrlSphere *sphere, double *out, uintptr_t out_len);

/**
 * Enveloping loss of `k` unit centroids of width `d` against the sample.
 *
 * # Safety
 * `centroids` must hold `k * d` values and `out` must be writable.
 */
enum SrlStatus srl_enveloping_loss(const struct SrlSphere *sphere,
                                   const double *centroids,
                                   uintptr_t k,
                                   uintptr_t d,
                                   double *out);

/**
 * Fraction of the sample within cosine `epsilon` of some centroid.
 *
 * # Safety
 * `centroids` must hold `k * d` values and `out` must be writable.
 */
enum SrlStatus srl_coverage(const struct SrlSphere *sphere,
                            const double *centroids,
                            uintptr_t k,
                            uintptr_t d,
                            double epsilon,
                            double *out);

/**
 * Homogeneity loss of `k` ordered unit centroids with strictly increasing labels.
 *
 * # Safety
 * `centroids` must hold `k * d` values, `labels` `k` values, and `out` must be writable.
 */
enum SrlStatus srl_homogeneity_loss(const double *centroids,
                                    const double *labels,
                                    uintptr_t k,
                                    uintptr_t d,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SRL_H */
