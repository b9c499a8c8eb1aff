#ifndef DISTKM_H
#define DISTKM_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of a fallible call.
typedef enum DistkmStatus {
  DISTKM_STATUS_OK = 0,
  DISTKM_STATUS_NULL_POINTER = 1,
  DISTKM_STATUS_INVALID_ARGUMENT = 2,
  DISTKM_STATUS_DATA_ERROR = 3,
  DISTKM_STATUS_NUMERIC_ERROR = 4,
  DISTKM_STATUS_IO_ERROR = 5,
  DISTKM_STATUS_PANIC = 6,
} DistkmStatus;

// Standard-error variant used for the distributional estimate.
typedef enum DistkmSeMode {
  DISTKM_SE_MODE_PAPER_DELTA = 0,
  DISTKM_SE_MODE_FULL_DELTA = 1,
  DISTKM_SE_MODE_BOOTSTRAP = 2,
  DISTKM_SE_MODE_ALL = 3,
} DistkmSeMode;

// An estimated survival curve.
typedef struct DistkmCurve DistkmCurve;

// Long-format observations: one (subject, time, value) record per entry.
typedef struct DistkmDataset DistkmDataset;

// Estimation settings; obtain defaults from [`distkm_estimate_options_default`].
typedef struct DistkmEstimateOptions {
  double cutpoint;
  size_t min_n_fit;
  size_t bootstrap_reps;
  enum DistkmSeMode se_mode;
  uint64_t seed;
  // Drop subjects above the cut-point at time 1 and start at time 2.
  bool baseline_exclusion;
  // Keep subjects whose first observation is after time 1.
  bool allow_late_entry;
} DistkmEstimateOptions;

// One time point of a curve. Undefined quantities are NaN.
typedef struct DistkmPoint {
  uint32_t time;
  size_t n_risk;
  size_t n_event;
  size_t n_est;
  bool estimable;
  double p_hat;
  double s_hat;
  double se_dist;
  double se_boot;
} DistkmPoint;

// Skew-normal fit in direct parameters.
typedef struct DistkmSnFit {
  double location;
  double scale;
  double shape;
  double loglik;
  size_t n_fit;
  bool converged;
  // The shape was set to 0 because the skew-normal fit did not improve on the normal.
  bool fallback;
} DistkmSnFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *distkm_version(void);

// Message for the last failure on this thread, or NULL. Valid until the next
// call into this library on the same thread.
const char *distkm_last_error(void);

// Create an empty dataset. Release with [`distkm_dataset_free`].
struct DistkmDataset *distkm_dataset_new(void);

// Release a dataset. NULL is ignored.
//
// # Safety
// `dataset` must be NULL or a handle from this library not yet freed.
void distkm_dataset_free(struct DistkmDataset *dataset);

// Append one observation. A NaN value records a missing measurement.
//
// # Safety
// `dataset` must be a live handle and `subject` a NUL-terminated UTF-8 string.
enum DistkmStatus distkm_dataset_push(struct DistkmDataset *dataset,
                                      const char *subject,
                                      uint32_t time,
                                      double value);

// Number of records held; values missing in a loaded file are not stored.
//
// # Safety
// `dataset` must be NULL or a live handle.
size_t distkm_dataset_len(const struct DistkmDataset *dataset);

// Load a long-format CSV with columns `subject`, `time`, `value` into a new dataset.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DistkmStatus distkm_dataset_load_csv(const char *path, struct DistkmDataset **out);

// Defaults: cut-point 0, at least 20 observations per fit, 500 bootstrap
// replicates, all standard errors, seed 1.
struct DistkmEstimateOptions distkm_estimate_options_default(void);

// Distributional Kaplan-Meier curve. Release the result with [`distkm_curve_free`].
//
// # Safety
// `dataset` must be a live handle, `options` and `out` valid pointers.
enum DistkmStatus distkm_estimate_dkm(const struct DistkmDataset *dataset,
                                      const struct DistkmEstimateOptions *options,
                                      struct DistkmCurve **out);

// Classical Kaplan-Meier curve at `options.cutpoint`; only the cut-point and
// the operationalisation flags are used.
//
// # Safety
// `dataset` must be a live handle, `options` and `out` valid pointers.
enum DistkmStatus distkm_estimate_km(const struct DistkmDataset *dataset,
                                     const struct DistkmEstimateOptions *options,
                                     struct DistkmCurve **out);

// Number of time points in a curve.
//
// # Safety
// `curve` must be NULL or a live handle.
size_t distkm_curve_len(const struct DistkmCurve *curve);

// Copy time point `index` (0-based) into `out`.
//
// # Safety
// `curve` must be a live handle and `out` a valid pointer.
enum DistkmStatus distkm_curve_point(const struct DistkmCurve *curve,
                                     size_t index,
                                     struct DistkmPoint *out);

// Release a curve. NULL is ignored.
//
// # Safety
// `curve` must be NULL or a handle from this library not yet freed.
void distkm_curve_free(struct DistkmCurve *curve);

// Owen's T function T(h, a).
double distkm_owen_t(double h, double a);

// Skew-normal CDF; NaN if `scale` is not positive.
double distkm_sn_cdf(double x, double location, double scale, double shape);

// Maximum-likelihood skew-normal fit of `n` values.
//
// # Safety
// `values` must point to `n` readable doubles and `out` be a valid pointer.
enum DistkmStatus distkm_sn_fit(const double *values, size_t n, struct DistkmSnFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISTKM_H */
