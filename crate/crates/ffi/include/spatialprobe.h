#ifndef SPATIALPROBE_H
#define SPATIALPROBE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_INVALID_ARGUMENT = 2,
  SP_STATUS_INVALID_UTF8 = 3,
  SP_STATUS_PARSE = 4,
  SP_STATUS_GEOMETRY = 5,
  SP_STATUS_OUT_OF_RANGE = 6,
  SP_STATUS_PANIC = 99,
} SpStatus;

typedef enum SpScaleResult {
  SP_SCALE_RESULT_A_GREATER = 0,
  SP_SCALE_RESULT_B_GREATER = 1,
  SP_SCALE_RESULT_INDETERMINATE = 2,
} SpScaleResult;

typedef enum SpRelation {
  SP_RELATION_ABOVE = 0,
  SP_RELATION_BELOW = 1,
  SP_RELATION_INSIDE = 2,
  SP_RELATION_BESIDE = 3,
} SpRelation;

/**
 * Row-major depth grid, larger values farther away.
 */
typedef struct SpDepthMap SpDepthMap;

/**
 * Ordered-pair comparison predictions.
 */
typedef struct SpPredictionTable SpPredictionTable;

/**
 * Scale comparison dataset.
 */
typedef struct SpScaleDataset SpScaleDataset;

/**
 * Pixel box, origin top-left, y downward.
 */
typedef struct SpBox {
  double x_min;
  double y_min;
  double x_max;
  double y_max;
  double confidence;
} SpBox;

typedef struct SpConsistency {
  double symmetry;
  double transitivity;
  size_t pairs_evaluated;
  size_t pairs_consistent;
  size_t triples_evaluated;
  size_t triples_consistent;
} SpConsistency;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next library call on the same thread.
 */
const char *sp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sp_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void sp_string_free(char *s);

/**
 * Builds the ordered cross-group pair dataset from an objects table
 * (`name<TAB>group<TAB>dimension` rows). A null `objects_tsv` selects the
 * bundled table for `dimension` (0 size, 1 height).
 *
 * # Safety
 * `objects_tsv` is null or a NUL-terminated string; `out` is writable.
 */
enum SpStatus sp_scale_dataset_build(const char *objects_tsv,
                                     uint32_t dimension,
                                     struct SpScaleDataset **out);

/**
 * Number of instances; 0 for a null handle.
 *
 * # Safety
 * `ds` is null or a live handle.
 */
size_t sp_scale_dataset_len(const struct SpScaleDataset *ds);

/**
 * Instance `index`: object names (free with [`sp_string_free`]) and the
 * gold, 0 when the first object is greater and 1 otherwise.
 *
 * # Safety
 * `ds` is a live handle; out-pointers are writable.
 */
enum SpStatus sp_scale_dataset_get(const struct SpScaleDataset *ds,
                                   size_t index,
                                   char **obj_a,
                                   char **obj_b,
                                   uint32_t *gold);

/**
 * The dataset as JSON lines; free with [`sp_string_free`].
 *
 * # Safety
 * `ds` is a live handle; `out` is writable.
 */
enum SpStatus sp_scale_dataset_to_jsonl(const struct SpScaleDataset *ds, char **out);

/**
 * # Safety
 * `ds` is null or a live handle, not used afterwards.
 */
void sp_scale_dataset_free(struct SpScaleDataset *ds);

/**
 * Copies `width * height` values.
 *
 * # Safety
 * `values` points to `width * height` floats; `out` is writable.
 */
enum SpStatus sp_depth_map_new(size_t width,
                               size_t height,
                               const float *values,
                               struct SpDepthMap **out);

/**
 * # Safety
 * `map` is null or a live handle, not used afterwards.
 */
void sp_depth_map_free(struct SpDepthMap *map);

/**
 * Mean depth over the pixels covered by `bbox`.
 *
 * # Safety
 * Pointers are live and `out` is writable.
 */
enum SpStatus sp_mean_depth(const struct SpDepthMap *map, const struct SpBox *bbox, double *out);

/**
 * `area * depth^2` (dimension 0) or `height * depth` (dimension 1).
 *
 * # Safety
 * `bbox` is live and `out` is writable.
 */
enum SpStatus sp_dimension_score(const struct SpBox *bbox,
                                 double depth,
                                 uint32_t dimension,
                                 double *out);

/**
 * Compares two detected objects on one depth map.
 *
 * # Safety
 * Pointers are live and `out` is writable.
 */
enum SpStatus sp_compare_scale(const struct SpBox *a,
                               const struct SpBox *b,
                               const struct SpDepthMap *map,
                               uint32_t dimension,
                               enum SpScaleResult *out);

/**
 * Direction from `y`'s centroid to `x`'s centroid in `[0, 360)` degrees;
 * straight up on screen is 270.
 *
 * # Safety
 * Pointers are live and `out` is writable.
 */
enum SpStatus sp_centroid_angle(const struct SpBox *x, const struct SpBox *y, double *out);

/**
 * Relation whose angle window contains `degrees` (any real, normalized
 * first).
 */
enum SpRelation sp_relation_for_angle(double degrees);

/**
 * Relation of the person box to the object box, `inside` when at least
 * `tau` of the person's area is covered.
 *
 * # Safety
 * Pointers are live and `out` is writable.
 */
enum SpStatus sp_classify_relation(const struct SpBox *person,
                                   const struct SpBox *object,
                                   double tau,
                                   enum SpRelation *out);

/**
 * `r * subset + (1 - r) / k`.
 *
 * # Safety
 * `out` is writable.
 */
enum SpStatus sp_expected_imputed_accuracy(double recognized_ratio,
                                           double subset_accuracy,
                                           size_t k,
                                           double *out);

/**
 * # Safety
 * `out` is writable.
 */
enum SpStatus sp_prediction_table_new(struct SpPredictionTable **out);

/**
 * Records the prediction for the ordered pair `(a, b)`: 0 means `a` is
 * greater, 1 smaller, -1 unrecognized.
 *
 * # Safety
 * `table` is live; `a` and `b` are NUL-terminated strings.
 */
enum SpStatus sp_prediction_table_insert(struct SpPredictionTable *table,
                                         const char *a,
                                         const char *b,
                                         int32_t comparison);

/**
 * Symmetry over unordered pairs and transitivity over ordered triples.
 *
 * # Safety
 * `table` is live and `out` is writable.
 */
enum SpStatus sp_prediction_table_consistency(const struct SpPredictionTable *table,
                                              struct SpConsistency *out);

/**
 * # Safety
 * `table` is null or a live handle, not used afterwards.
 */
void sp_prediction_table_free(struct SpPredictionTable *table);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPATIALPROBE_H */
