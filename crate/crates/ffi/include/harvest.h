#ifndef HARVEST_H
#define HARVEST_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HarvestRegion {
  HARVEST_REGION_R1 = 0,
  HARVEST_REGION_R2,
  HARVEST_REGION_R3,
  HARVEST_REGION_R4,
  HARVEST_REGION_R5,
  HARVEST_REGION_SIGMA_STAR,
  HARVEST_REGION_SIGMA_TILDE,
  HARVEST_REGION_SIGMA0,
  HARVEST_REGION_SIGMA_S,
  HARVEST_REGION_GAMMA3,
  HARVEST_REGION_GAMMA4,
  HARVEST_REGION_SINGULAR_POINT,
  HARVEST_REGION_SINGULAR_TILDE,
  HARVEST_REGION_BOUNDARY,
  HARVEST_REGION_UNSUPPORTED,
} HarvestRegion;

typedef enum HarvestStatus {
  HARVEST_STATUS_OK = 0,
  HARVEST_STATUS_NULL_POINTER = 1,
  HARVEST_STATUS_INVALID_ARGUMENT = 2,
  HARVEST_STATUS_PARSE = 3,
  HARVEST_STATUS_ASSUMPTION_FAILURE = 4,
  HARVEST_STATUS_UNSUPPORTED = 5,
  HARVEST_STATUS_NUMERICAL = 6,
  HARVEST_STATUS_PANIC = 7,
} HarvestStatus;

/**
 * Opaque model handle.
 */
typedef struct HarvestModel HarvestModel;

/**
 * Opaque phase-portrait handle.
 */
typedef struct HarvestPortrait HarvestPortrait;

/**
 * Derived constants of a model.
 */
typedef struct HarvestConstants {
  double kappa;
  double r_prime;
  double c_star;
  double x_tilde;
  double x_star;
  double k_tilde;
  double k_star;
  double x_bar;
} HarvestConstants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after a
 * success. The pointer stays valid until the next call on this thread.
 */
const char *harvest_last_error(void);

/**
 * Static description of a status code.
 */
const char *harvest_status_message(enum HarvestStatus status);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void harvest_string_free(char *s);

/**
 * The built-in default model (logistic a = k = 1).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum HarvestStatus harvest_model_fix1(struct HarvestModel **out);

/**
 * A model from a parameter JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum HarvestStatus harvest_model_from_json(const char *json, struct HarvestModel **out);

/**
 * # Safety
 * `model` must come from this library or be null.
 */
void harvest_model_free(struct HarvestModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum HarvestStatus harvest_model_constants(const struct HarvestModel *model,
                                           struct HarvestConstants *out);

/**
 * Builds the phase portrait of a model.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum HarvestStatus harvest_portrait_build(const struct HarvestModel *model,
                                          struct HarvestPortrait **out);

/**
 * # Safety
 * `portrait` must come from this library or be null.
 */
void harvest_portrait_free(struct HarvestPortrait *portrait);

/**
 * Special points of the portrait as JSON.
 *
 * # Safety
 * `portrait` must be a live handle; `out` must be writable.
 */
enum HarvestStatus harvest_portrait_specials_json(const struct HarvestPortrait *portrait,
                                                  char **out);

/**
 * Region of (x, K). Boundary and unsupported states are reported through
 * `out`, not as an error.
 *
 * # Safety
 * `portrait` must be a live handle; `out` must be writable.
 */
enum HarvestStatus harvest_classify(const struct HarvestPortrait *portrait,
                                    double x,
                                    double k,
                                    enum HarvestRegion *out);

/**
 * Objective of the optimal policy from (x, K) over `horizon` plus the
 * stationary tail.
 *
 * # Safety
 * `portrait` must be a live handle; `out` must be writable.
 */
enum HarvestStatus harvest_value(const struct HarvestPortrait *portrait,
                                 double x,
                                 double k,
                                 double horizon,
                                 double *out);

/**
 * Rolls out the optimal policy. Writes the schedule JSON and, when
 * `trajectory_csv_out` is non-null, the trajectory sampled every `dt`.
 *
 * # Safety
 * `portrait` must be a live handle; `schedule_out` must be writable;
 * `trajectory_csv_out` must be writable or null.
 */
enum HarvestStatus harvest_simulate(const struct HarvestPortrait *portrait,
                                    double x,
                                    double k,
                                    double horizon,
                                    double dt,
                                    char **schedule_out,
                                    char **trajectory_csv_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HARVEST_H */
