#ifndef NOISY_GPR_H
#define NOISY_GPR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum NgprStatus {
  NGPR_STATUS_OK = 0,
  NGPR_STATUS_NULL_POINTER = 1,
  NGPR_STATUS_INVALID_INPUT = 2,
  NGPR_STATUS_CONFIG = 3,
  NGPR_STATUS_IO = 4,
  NGPR_STATUS_PARSE = 5,
  NGPR_STATUS_NUMERICAL = 6,
  NGPR_STATUS_UNDEFINED_METRIC = 7,
  NGPR_STATUS_PANIC = 8,
} NgprStatus;

typedef struct NgprDataset NgprDataset;

typedef struct NgprFit NgprFit;

/*
 Optimizer and kernel settings. Non-positive kernel values select the
 data-driven heuristic.
 */
typedef struct NgprFitOptions {
  double signal_variance;
  double length_scale;
  size_t max_iters;
  double tol_sigma;
  double tol_nll;
  double penalty_lambda;
  double penalty_p;
} NgprFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library defaults: heuristic kernel, no penalty.
 */
struct NgprFitOptions ngpr_fit_options_default(void);

/*
 Message for the last failed call on this thread; empty if none. The
 pointer stays valid until the next failing call on the same thread.
 */
const char *ngpr_last_error_message(void);

/*
 Builds a dataset from row-major inputs `x` (`n × dim`) and labels `y`.

 # Safety
 `x` must point to `n * dim` doubles, `y` to `n` doubles and `out` to
 writable storage for one pointer.
 */
enum NgprStatus ngpr_dataset_new(const double *x,
                                 size_t n,
                                 size_t dim,
                                 const double *y,
                                 struct NgprDataset **out);

/*
 Reads a dataset CSV.

 # Safety
 `path` must be a nul-terminated string and `out` writable.
 */
enum NgprStatus ngpr_dataset_read_csv(const char *path, struct NgprDataset **out);

/*
 # Safety
 `data` must be null or a handle from this library not yet freed.
 */
void ngpr_dataset_free(struct NgprDataset *data);

/*
 Number of labels, or 0 for a null handle.

 # Safety
 `data` must be null or a live handle.
 */
size_t ngpr_dataset_len(const struct NgprDataset *data);

/*
 Fits the per-label noise at fixed kernel. `options` may be null for
 defaults. A fit that stops at `max_iters` still succeeds; check
 [`ngpr_fit_summary`].

 # Safety
 `data` must be a live handle, `options` null or valid, `out` writable.
 */
enum NgprStatus ngpr_optimize_sigma(const struct NgprDataset *data,
                                    const struct NgprFitOptions *options,
                                    struct NgprFit **out);

/*
 Fits noise and kernel jointly from `restarts` starting points around
 the kernel in `options`.

 # Safety
 As [`ngpr_optimize_sigma`].
 */
enum NgprStatus ngpr_joint_optimize(const struct NgprDataset *data,
                                    const struct NgprFitOptions *options,
                                    size_t restarts,
                                    uint64_t seed,
                                    struct NgprFit **out);

/*
 # Safety
 `fit` must be null or a handle from this library not yet freed.
 */
void ngpr_fit_free(struct NgprFit *fit);

/*
 Copies the learned noise variances into `out` (`len` must equal N).

 # Safety
 `fit` must be a live handle and `out` point to `len` writable doubles.
 */
enum NgprStatus ngpr_fit_sigma(const struct NgprFit *fit, double *out, size_t len);

/*
 Final objective, iteration count, convergence flag and kernel.

 # Safety
 `fit` must be a live handle; each output pointer may be null to skip it.
 */
enum NgprStatus ngpr_fit_summary(const struct NgprFit *fit,
                                 double *nll,
                                 size_t *iters,
                                 bool *converged,
                                 double *signal_variance,
                                 double *length_scale);

/*
 Closed-form leave-one-out errors and standard deviations of the fitted
 model; both buffers hold `len` (= N) doubles.

 # Safety
 `fit` must be a live handle and both buffers writable.
 */
enum NgprStatus ngpr_fit_loocv(const struct NgprFit *fit, double *errors, double *stds, size_t len);

/*
 Area under the ROC curve of `scores` against `truth`, ties counting one
 half.

 # Safety
 `scores` and `truth` must hold `n` elements and `out` be writable.
 */
enum NgprStatus ngpr_roc_auc(const double *scores, const bool *truth, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NOISY_GPR_H */
