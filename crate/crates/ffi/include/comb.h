#ifndef COMB_H
#define COMB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CombStatus {
  COMB_STATUS_OK = 0,
  COMB_STATUS_NULL_POINTER = 1,
  COMB_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed JSON or out-of-range argument.
   */
  COMB_STATUS_INVALID_ARGUMENT = 3,
  /**
   * The controller refused the transition.
   */
  COMB_STATUS_REJECTED = 4,
  /**
   * A computation failed; see the last error message.
   */
  COMB_STATUS_FAILED = 5,
  COMB_STATUS_PANIC = 6,
} CombStatus;

typedef enum CombMatching {
  COMB_MATCHING_PHASE = 0,
  COMB_MATCHING_NEAREST_POINT = 1,
} CombMatching;

typedef enum CombMode {
  COMB_MODE_IDLE = 0,
  COMB_MODE_JOG = 1,
  COMB_MODE_DANCE = 2,
  COMB_MODE_SCAN = 3,
  COMB_MODE_FLAP = 4,
} CombMode;

typedef enum CombRoutine {
  COMB_ROUTINE_NONE = 0,
  COMB_ROUTINE_DANCE = 1,
  COMB_ROUTINE_SCAN = 2,
} CombRoutine;

/**
 * Opaque controller handle.
 */
typedef struct CombController CombController;

/**
 * Opaque trajectory plan handle.
 */
typedef struct CombDancePlan CombDancePlan;

typedef struct CombPeak {
  double freq_hz;
  double magnitude;
  double bin_width_hz;
  double snr;
} CombPeak;

typedef struct CombErrorStats {
  double cte_rms;
  double cte_max;
  double ate_rms;
  double ate_max;
  double euclid_rms;
  double euclid_max;
  size_t excluded;
} CombErrorStats;

typedef struct CombWaypoint {
  double t_s;
  double x_mm;
  double y_mm;
} CombWaypoint;

typedef struct CombState {
  enum CombMode mode;
  bool motion_enabled;
  enum CombRoutine routine;
  double flapper_hz;
  double flapper_setpoint_hz;
  double progress;
} CombState;

typedef struct CombPose {
  double t_s;
  double x_mm;
  double y_mm;
} CombPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *comb_last_error(void);

/**
 * Frees a string returned by this library. Null is ignored.
 */
void comb_string_free(char *s);

/**
 * Library version as a static string.
 */
const char *comb_version(void);

/**
 * Minimum rest-to-rest move time.
 */
enum CombStatus comb_move_duration(double distance_mm, double v_max, double a_max, double *out_s);

/**
 * Derived window geometry as JSON. `params_json` may be null for defaults.
 */
enum CombStatus comb_maw_derive(const char *params_json, char **out_json);

/**
 * Coverage of a grid as multiples of the footprint width and height.
 */
enum CombStatus comb_scan_coverage(size_t rows,
                                   size_t cols,
                                   double row_overlap,
                                   double col_overlap,
                                   double *out_w,
                                   double *out_h);

/**
 * Dominant frequency of a uniformly sampled signal.
 */
enum CombStatus comb_dominant_frequency(const double *samples,
                                        size_t len,
                                        double fps,
                                        double snr_threshold,
                                        struct CombPeak *out_peak);

/**
 * Cross-track and along-track statistics of one run. Both arrays hold `n`
 * interleaved `x, y` pairs on the same phase grid.
 */
enum CombStatus comb_track_errors(const double *measured_xy,
                                  const double *commanded_xy,
                                  size_t n,
                                  enum CombMatching matching,
                                  struct CombErrorStats *out_stats);

/**
 * Generates a plan. `params_json` may be null for defaults.
 */
enum CombStatus comb_dance_plan_new(const char *params_json, struct CombDancePlan **out_plan);

void comb_dance_plan_free(struct CombDancePlan *plan);

enum CombStatus comb_dance_plan_len(const struct CombDancePlan *plan, size_t *out_len);

/**
 * Copies up to `capacity` waypoints into `dst`; `out_written` receives the
 * number copied.
 */
enum CombStatus comb_dance_plan_waypoints(const struct CombDancePlan *plan,
                                          struct CombWaypoint *dst,
                                          size_t capacity,
                                          size_t *out_written);

/**
 * Plan as JSON, including cycle boundaries.
 */
enum CombStatus comb_dance_plan_json(const struct CombDancePlan *plan, char **out_json);

/**
 * Creates a controller from a full config JSON, or defaults when null.
 */
enum CombStatus comb_controller_new(const char *config_json, struct CombController **out_ctl);

void comb_controller_free(struct CombController *ctl);

/**
 * Presses a key given by name (`START`) or keypad symbol (`#`).
 * `out_state` may be null.
 */
enum CombStatus comb_controller_press(struct CombController *ctl,
                                      const char *key,
                                      struct CombState *out_state);

/**
 * Starts a dance with `params_json` (null for the configured defaults).
 */
enum CombStatus comb_controller_start_dance(struct CombController *ctl, const char *params_json);

/**
 * Advances simulated time by `ticks`.
 */
enum CombStatus comb_controller_advance(struct CombController *ctl,
                                        uint64_t ticks,
                                        struct CombState *out_state);

enum CombStatus comb_controller_pose(const struct CombController *ctl, struct CombPose *out_pose);

enum CombStatus comb_controller_state(const struct CombController *ctl,
                                      struct CombState *out_state);

/**
 * Execution log of the current or last routine as JSON.
 */
enum CombStatus comb_controller_log_json(const struct CombController *ctl, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMB_H */
