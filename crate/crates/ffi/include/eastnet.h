#ifndef EASTNET_H
#define EASTNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum EastnetStatus {
  EASTNET_STATUS_OK = 0,
  EASTNET_STATUS_NULL_POINTER = 1,
  EASTNET_STATUS_CONFIG = 2,
  EASTNET_STATUS_IO = 3,
  EASTNET_STATUS_NUMERIC = 4,
  EASTNET_STATUS_SHAPE = 5,
  EASTNET_STATUS_CONTRACT = 6,
  EASTNET_STATUS_FORMAT = 7,
  EASTNET_STATUS_INCOMPATIBLE_MEMORY = 8,
  EASTNET_STATUS_INVALID_UTF8 = 9,
  EASTNET_STATUS_PANIC = 10,
} EastnetStatus;

/**
 * Opaque dataset handle.
 */
typedef struct EastnetDataset EastnetDataset;

/**
 * Opaque model handle.
 */
typedef struct EastnetModel EastnetModel;

/**
 * Window geometry of a model.
 */
typedef struct EastnetModelDims {
  size_t input_len;
  size_t horizon;
  size_t nodes;
  size_t channels;
  size_t covariate_width;
} EastnetModelDims;

/**
 * Test-split scores in raw units. `has_mape` is 0 when no target passed
 * the MAPE mask, in which case `mape` is NaN.
 */
typedef struct EastnetMetrics {
  double rmse;
  double mae;
  double mape;
  int32_t has_mape;
} EastnetMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *eastnet_last_error(void);

/**
 * Generate a synthetic dataset from `data.*` and `event.*` keys. A null
 * `config` selects the standard dataset.
 *
 * # Safety
 * `config` must be null or a NUL-terminated string; `out` must be writable.
 */
enum EastnetStatus eastnet_dataset_generate(const char *config, struct EastnetDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EastnetStatus eastnet_dataset_read(const char *path, struct EastnetDataset **out);

/**
 * # Safety
 * `dataset` must come from this library; `path` must be NUL-terminated.
 */
enum EastnetStatus eastnet_dataset_write(const struct EastnetDataset *dataset, const char *path);

/**
 * Slot, region and channel counts. Any output pointer may be null.
 *
 * # Safety
 * `dataset` must come from this library.
 */
enum EastnetStatus eastnet_dataset_dims(const struct EastnetDataset *dataset,
                                        size_t *slots,
                                        size_t *nodes,
                                        size_t *channels);

/**
 * # Safety
 * `dataset` must be null or come from this library, and not be used again.
 */
void eastnet_dataset_free(struct EastnetDataset *dataset);

/**
 * Build an untrained model of `model.variant` sized for `dataset`, seeded
 * with `seed`.
 *
 * # Safety
 * `config` must be null or NUL-terminated; `dataset` must come from this
 * library; `out` must be writable.
 */
enum EastnetStatus eastnet_model_new(const char *config,
                                     const struct EastnetDataset *dataset,
                                     struct EastnetModel **out);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum EastnetStatus eastnet_model_load(const char *path, struct EastnetModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum EastnetStatus eastnet_model_save(const struct EastnetModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum EastnetStatus eastnet_model_dims(const struct EastnetModel *model,
                                      struct EastnetModelDims *out);

/**
 * Train with early stopping using the `train.*` keys and `seed` of
 * `config`, then write test-split scores to `out` (which may be null).
 *
 * # Safety
 * Handles must come from this library; `config` must be null or
 * NUL-terminated.
 */
enum EastnetStatus eastnet_model_train(struct EastnetModel *model,
                                       const struct EastnetDataset *dataset,
                                       const char *config,
                                       struct EastnetMetrics *out);

/**
 * Score the model on the test split of `dataset`.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum EastnetStatus eastnet_model_evaluate(const struct EastnetModel *model,
                                          const struct EastnetDataset *dataset,
                                          struct EastnetMetrics *out);

/**
 * Forecast one window in normalized units. `inputs` holds
 * `input_len * nodes * channels` values, `covariates` holds
 * `(input_len + horizon) * covariate_width` values and `out` receives
 * `horizon * nodes * channels` values, all row-major.
 *
 * # Safety
 * Each buffer must hold at least its stated length.
 */
enum EastnetStatus eastnet_model_forecast(const struct EastnetModel *model,
                                          const double *inputs,
                                          size_t inputs_len,
                                          const double *covariates,
                                          size_t covariates_len,
                                          double *out,
                                          size_t out_len);

/**
 * Write the memory snapshot of a memory variant.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum EastnetStatus eastnet_model_export_memory(const struct EastnetModel *model, const char *path);

/**
 * Load a memory snapshot; `retrain` 0 freezes it, nonzero keeps it
 * trainable. On failure the model is unchanged.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum EastnetStatus eastnet_model_import_memory(struct EastnetModel *model,
                                               const char *path,
                                               int32_t retrain);

/**
 * # Safety
 * `model` must be null or come from this library, and not be used again.
 */
void eastnet_model_free(struct EastnetModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EASTNET_H */
