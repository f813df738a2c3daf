#ifndef CALIBRAX_H
#define CALIBRAX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CalibraxStatus {
  CALIBRAX_STATUS_OK = 0,
  CALIBRAX_STATUS_NULL_POINTER = 1,
  CALIBRAX_STATUS_INVALID_ARGUMENT = 2,
  CALIBRAX_STATUS_DATA_ERROR = 3,
  CALIBRAX_STATUS_NUMERIC_ERROR = 4,
  CALIBRAX_STATUS_PROTOCOL_ERROR = 5,
  CALIBRAX_STATUS_BUFFER_TOO_SMALL = 6,
  CALIBRAX_STATUS_PANIC = 7,
} CalibraxStatus;

/*
 A fitted base model.
 */
typedef struct CalibraxModel CalibraxModel;

/*
 Online recalibrator for binary events.
 */
typedef struct CalibraxOnline CalibraxOnline;

/*
 A fitted recalibrator.
 */
typedef struct CalibraxRecalibrator CalibraxRecalibrator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or an empty string. The
 pointer stays valid until the next call on this thread.
 */
const char *calibrax_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *calibrax_version(void);

/*
 Loads a base model saved by the CLI `fit` command.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CalibraxStatus calibrax_model_load(const char *path, struct CalibraxModel **out);

/*
 # Safety
 `model` must come from [`calibrax_model_load`] and not be used afterwards.
 */
void calibrax_model_free(struct CalibraxModel *model);

/*
 # Safety
 `model` must be a live handle; `out` must be writable.
 */
enum CalibraxStatus calibrax_model_num_features(const struct CalibraxModel *model, size_t *out);

/*
 Quantiles of the forecast for one feature row, recalibrated when
 `recal` is non-null. Writes `n_levels` values to `out`.

 # Safety
 Pointers must be valid for the stated lengths; `recal` may be null.
 */
enum CalibraxStatus calibrax_predict_quantiles(const struct CalibraxModel *model,
                                               const struct CalibraxRecalibrator *recal,
                                               const double *x,
                                               size_t nx,
                                               const double *levels,
                                               size_t n_levels,
                                               double *out);

/*
 Class probabilities for one feature row, recalibrated when `recal` is
 non-null. `capacity` is the length of `out`; the class count is written
 to `n_classes` even when the buffer is too small.

 # Safety
 Pointers must be valid for the stated lengths; `recal` may be null.
 */
enum CalibraxStatus calibrax_predict_probs(const struct CalibraxModel *model,
                                           const struct CalibraxRecalibrator *recal,
                                           const double *x,
                                           size_t nx,
                                           double *out,
                                           size_t capacity,
                                           size_t *n_classes);

/*
 Loads a recalibrator saved by the CLI `recalibrate` command.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CalibraxStatus calibrax_recalibrator_load(const char *path, struct CalibraxRecalibrator **out);

/*
 Fits a binary recalibrator (`"platt"` or `"kde"`) on scores in [0, 1]
 and 0/1 labels.

 # Safety
 `method` must be NUL-terminated; arrays must hold `n` entries.
 */
enum CalibraxStatus calibrax_recalibrator_fit_binary(const char *method,
                                                     const double *scores,
                                                     const uint8_t *labels,
                                                     size_t n,
                                                     uint64_t seed,
                                                     struct CalibraxRecalibrator **out);

/*
 Recalibrated probability of the positive class for a raw score.

 # Safety
 `recal` must be a live handle; `out` must be writable.
 */
enum CalibraxStatus calibrax_recalibrator_apply_binary(const struct CalibraxRecalibrator *recal,
                                                       double score,
                                                       double *out);

/*
 Saves a recalibrator in the versioned JSON format.

 # Safety
 `recal` must be a live handle; `path` must be NUL-terminated.
 */
enum CalibraxStatus calibrax_recalibrator_save(const struct CalibraxRecalibrator *recal,
                                               const char *path);

/*
 # Safety
 `recal` must come from this library and not be used afterwards.
 */
void calibrax_recalibrator_free(struct CalibraxRecalibrator *recal);

/*
 Creates an online recalibrator with forecast grid resolution `n` and `m`
 routing buckets.

 # Safety
 `out` must be writable.
 */
enum CalibraxStatus calibrax_online_new(size_t n,
                                        size_t m,
                                        uint64_t seed,
                                        struct CalibraxOnline **out);

/*
 Forecast for a raw probability. Must be followed by
 [`calibrax_online_update`] with the same raw probability.

 # Safety
 `state` must be a live handle; `out` must be writable.
 */
enum CalibraxStatus calibrax_online_predict(struct CalibraxOnline *state,
                                            double p_raw,
                                            double *out);

/*
 Reports the outcome (0 or 1) for the pending forecast of `p_raw`.

 # Safety
 `state` must be a live handle.
 */
enum CalibraxStatus calibrax_online_update(struct CalibraxOnline *state, double p_raw, uint8_t y);

/*
 ℓ1 calibration error of the forecasts issued so far.

 # Safety
 `state` must be a live handle; `out` must be writable.
 */
enum CalibraxStatus calibrax_online_calibration_error(const struct CalibraxOnline *state,
                                                      double *out);

/*
 # Safety
 `state` must come from [`calibrax_online_new`] and not be used afterwards.
 */
void calibrax_online_free(struct CalibraxOnline *state);

/*
 Closed-form CRPS of a Gaussian forecast.

 # Safety
 `out` must be writable.
 */
enum CalibraxStatus calibrax_crps_gaussian(double mu, double sigma, double y, double *out);

/*
 Check (pinball) score `ρ_τ(y - f)`.

 # Safety
 `out` must be writable.
 */
enum CalibraxStatus calibrax_check_score(double tau, double y, double f, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CALIBRAX_H */
