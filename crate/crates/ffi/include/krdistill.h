#ifndef KRDISTILL_H
#define KRDISTILL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KrdStatus {
  KRD_STATUS_OK = 0,
  KRD_STATUS_NULL_POINTER = 1,
  KRD_STATUS_INVALID_ARGUMENT = 2,
  KRD_STATUS_DATA_ERROR = 3,
  KRD_STATUS_NUMERIC_ERROR = 4,
  KRD_STATUS_PANIC = 5,
} KrdStatus;

/**
 * Loaded labeled dataset.
 */
typedef struct KrdDataset KrdDataset;

/**
 * Loaded feed-forward network.
 */
typedef struct KrdNet KrdNet;

/**
 * Top-1 accuracies; a group with no classes reports NaN.
 */
typedef struct KrdMetrics {
  double overall;
  double head;
  double medium;
  double tail;
} KrdMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next `krd_*` call on the same thread.
 */
const char *krd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *krd_version(void);

/**
 * Loads a network written by `krdistill`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KrdStatus krd_net_load(const char *path, struct KrdNet **out);

/**
 * # Safety
 * `net` must come from [`krd_net_load`] and not be used afterwards. Null is ignored.
 */
void krd_net_free(struct KrdNet *net);

/**
 * Writes input, feature and output widths. Any out pointer may be null.
 *
 * # Safety
 * `net` must be a live handle; non-null out pointers must be valid.
 */
enum KrdStatus krd_net_dims(const struct KrdNet *net,
                            size_t *input_dim,
                            size_t *feature_dim,
                            size_t *output_dim);

/**
 * Runs `rows` inputs of width `cols` through the net. `logits` must hold
 * `rows * output_dim` values; `features`, if non-null, `rows * feature_dim`.
 *
 * # Safety
 * Buffers must be valid for the stated lengths.
 */
enum KrdStatus krd_net_forward(const struct KrdNet *net,
                               const double *x,
                               size_t rows,
                               size_t cols,
                               double *logits,
                               size_t logits_len,
                               double *features,
                               size_t features_len);

/**
 * Loads a labeled CSV. `classes == 0` infers the class count from the labels.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KrdStatus krd_dataset_load(const char *path, size_t classes, struct KrdDataset **out);

/**
 * # Safety
 * `data` must come from [`krd_dataset_load`] and not be used afterwards. Null is ignored.
 */
void krd_dataset_free(struct KrdDataset *data);

/**
 * Writes row count, feature width and class count. Any out pointer may be null.
 *
 * # Safety
 * `data` must be a live handle; non-null out pointers must be valid.
 */
enum KrdStatus krd_dataset_dims(const struct KrdDataset *data,
                                size_t *len,
                                size_t *dim,
                                size_t *classes);

/**
 * Top-1 accuracy of `net` on `eval`, with head/medium/tail groups taken as
 * count-sorted thirds of `train_counts`.
 *
 * # Safety
 * Handles must be live; `train_counts` must hold `classes` values.
 */
enum KrdStatus krd_evaluate(const struct KrdNet *net,
                            const struct KrdDataset *eval,
                            const size_t *train_counts,
                            size_t classes,
                            struct KrdMetrics *out);

/**
 * Rectifies one teacher distribution toward `target`. `out` receives `len`
 * values; `was_rectified`, if non-null, 1 when the argmax was wrong.
 *
 * # Safety
 * `p` and `out` must hold `len` values.
 */
enum KrdStatus krd_rectify_prediction(const double *p,
                                      size_t len,
                                      size_t target,
                                      double *out,
                                      int *was_rectified);

/**
 * Inverse-frequency class weights with mean 1.
 *
 * # Safety
 * `counts` and `out` must hold `classes` values.
 */
enum KrdStatus krd_class_weights(const size_t *counts, size_t classes, double *out);

/**
 * Row-wise softmax at temperature `tau`.
 *
 * # Safety
 * `logits` and `out` must hold `rows * cols` values.
 */
enum KrdStatus krd_softmax_rows(const double *logits,
                                size_t rows,
                                size_t cols,
                                double tau,
                                double *out);

/**
 * Spreads `classes` unit vectors of width `dim` apart, starting from `init`.
 *
 * # Safety
 * `init` and `out` must hold `classes * dim` values.
 */
enum KrdStatus krd_optimize_ideal_means(const double *init,
                                        size_t classes,
                                        size_t dim,
                                        size_t steps,
                                        double step_size,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KRDISTILL_H */
