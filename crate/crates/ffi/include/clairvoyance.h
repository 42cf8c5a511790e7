#ifndef CLAIRVOYANCE_H
#define CLAIRVOYANCE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes.
 */
typedef enum ClvStatus {
  CLV_STATUS_OK = 0,
  CLV_STATUS_NULL_ARGUMENT = 1,
  CLV_STATUS_INVALID_ARGUMENT = 2,
  CLV_STATUS_IO = 3,
  CLV_STATUS_BAD_CHECKPOINT = 4,
  CLV_STATUS_WRONG_MODEL_KIND = 5,
  CLV_STATUS_SHAPE_MISMATCH = 6,
  CLV_STATUS_PANIC = 99,
} ClvStatus;

/**
 * A loaded checkpoint.
 */
typedef struct ClvModel ClvModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum ClvStatus clv_model_load(const char *path, struct ClvModel **out);

/**
 * Decodes a checkpoint held in memory. On success `*out` owns a new handle.
 *
 * # Safety
 * `data` must be valid for `len` reads and `out` a writable pointer.
 */
enum ClvStatus clv_model_from_bytes(const uint8_t *data, size_t len, struct ClvModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from a load function and not be used afterwards.
 */
void clv_model_free(struct ClvModel *model);

/**
 * Raw feature width and class count (0 for the emission regressor).
 *
 * # Safety
 * `model` must be a live handle; the outputs must be writable or null.
 */
enum ClvStatus clv_model_info(const struct ClvModel *model, size_t *input_width, size_t *classes);

/**
 * Demand classes for `n_rows` row-major raw feature rows. `probs_out`
 * may be null; otherwise it receives `n_rows * classes` probabilities.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum ClvStatus clv_predict_class(const struct ClvModel *model,
                                 const double *features,
                                 size_t n_rows,
                                 size_t width,
                                 size_t *classes_out,
                                 double *probs_out);

/**
 * Emission predictions (kg CO2, non-negative) for `n_rows` raw grid feature rows.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum ClvStatus clv_predict_emission(const struct ClvModel *model,
                                    const double *features,
                                    size_t n_rows,
                                    size_t width,
                                    double *out);

/**
 * Top-down emission `Σ kg_per_l · vehicles · km_per_vehicle · l_per_km`
 * over `n` fleet entries.
 *
 * # Safety
 * Each array must be valid for `n` reads; `out` must be writable.
 */
enum ClvStatus clv_top_down(const double *kg_per_l,
                            const double *l_per_km,
                            const double *vehicles,
                            const double *km_per_vehicle,
                            size_t n,
                            double *out);

/**
 * Demand class of a trip count under ascending bin lower edges starting at 0.
 *
 * # Safety
 * `edges` must be valid for `n_edges` reads; `class_out` must be writable.
 */
enum ClvStatus clv_demand_class(uint64_t trips,
                                const uint64_t *edges,
                                size_t n_edges,
                                size_t *class_out);

/**
 * Ranks `n_routes` routes by normalized demand plus normalized emission and
 * writes the first `min(k, n_routes)` route indices to `order_out` with
 * their scores in `scores_out` (nullable). Ties go to the lower index.
 *
 * # Safety
 * `mu` and `theta` must be valid for `n_routes` reads, `order_out` and
 * `scores_out` for `k` writes, `n_out` must be writable.
 */
enum ClvStatus clv_recommend_topk(const double *mu,
                                  const double *theta,
                                  size_t n_routes,
                                  size_t k,
                                  size_t *order_out,
                                  double *scores_out,
                                  size_t *n_out);

/**
 * Copies the calling thread's last error message (NUL-terminated,
 * truncated to fit) into `buf` and returns its full length in bytes.
 * Pass a null `buf` to query the length.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t clv_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *clv_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLAIRVOYANCE_H */
