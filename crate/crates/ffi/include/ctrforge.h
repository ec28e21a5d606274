#ifndef CTRFORGE_H
#define CTRFORGE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CtrStatus {
  CTR_STATUS_OK = 0,
  CTR_STATUS_NULL_POINTER = 1,
  CTR_STATUS_INVALID_ARGUMENT = 2,
  CTR_STATUS_IO = 3,
  CTR_STATUS_FORMAT = 4,
  CTR_STATUS_ENCODE = 5,
  CTR_STATUS_UNDEFINED_METRIC = 6,
  CTR_STATUS_PANIC = 7,
} CtrStatus;

/**
 * A loaded checkpoint. Read-only after load, so one handle may be shared
 * between threads for prediction.
 */
typedef struct CtrModel CtrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version string of this library, static and NUL-terminated.
 */
const char *ctrforge_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *ctrforge_last_error(void);

/**
 * Loads a checkpoint file. On success `*out` owns a handle that must be
 * released with `ctrforge_model_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CtrStatus ctrforge_model_load(const char *path, struct CtrModel **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from `ctrforge_model_load` and not be used afterwards.
 */
void ctrforge_model_free(struct CtrModel *model);

/**
 * Number of input fields a row must supply, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t ctrforge_model_num_fields(const struct CtrModel *model);

/**
 * Name of field `index`, or NULL when out of range. Owned by the handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
const char *ctrforge_model_field_name(const struct CtrModel *model, size_t index);

/**
 * Scores `num_rows` rows. `values` holds `num_rows * num_fields` strings,
 * row-major, in field order; numeric fields are decimal text. Unknown
 * categorical values map to the out-of-vocabulary slot. Click probabilities
 * are written to `out[0..num_rows]`.
 *
 * # Safety
 * `model` must be a live handle, `values` must point to that many
 * NUL-terminated strings and `out` to `num_rows` writable doubles.
 */
enum CtrStatus ctrforge_model_predict(const struct CtrModel *model,
                                      const char *const *values,
                                      size_t num_rows,
                                      double *out);

/**
 * Rank AUC with midrank ties. Labels are 0 or 1.
 *
 * # Safety
 * `scores` and `labels` must point to `n` doubles and `out` to one.
 */
enum CtrStatus ctrforge_auc(const double *scores, const double *labels, size_t n, double *out);

/**
 * Root-mean-square error between predictions and labels.
 *
 * # Safety
 * `predictions` and `labels` must point to `n` doubles and `out` to one.
 */
enum CtrStatus ctrforge_rmse(const double *predictions,
                             const double *labels,
                             size_t n,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTRFORGE_H */
