#ifndef EXMART_H
#define EXMART_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bit set in [`ExmartMonitorState::fired`] once the detector has alarmed.
 */
#define EXMART_FIRED_VILLE 1

#define EXMART_FIRED_CUSUM 2

#define EXMART_FIRED_SR 4

/**
 * Status codes shared by every function.
 */
typedef enum ExmartStatus {
  EXMART_STATUS_OK = 0,
  EXMART_STATUS_NULL_POINTER = 1,
  EXMART_STATUS_INVALID_ARGUMENT = 2,
  EXMART_STATUS_DATA_ERROR = 3,
  EXMART_STATUS_RUNTIME_ERROR = 4,
  EXMART_STATUS_PANIC = 5,
} ExmartStatus;

typedef enum ExmartScheduleKind {
  EXMART_SCHEDULE_KIND_VARIABLE = 0,
  EXMART_SCHEDULE_KIND_FIXED = 1,
  EXMART_SCHEDULE_KIND_MIDDLEGAME_ONLY = 2,
} ExmartScheduleKind;

typedef enum ExmartStage {
  EXMART_STAGE_OPENING = 0,
  EXMART_STAGE_MIDDLEGAME = 1,
  EXMART_STAGE_ENDGAME = 2,
} ExmartStage;

/**
 * Simple Jumper test martingale.
 */
typedef struct ExmartJumper ExmartJumper;

/**
 * A Simple Jumper driving Ville, CUSUM and Shiryaev-Roberts detectors.
 */
typedef struct ExmartMonitor ExmartMonitor;

/**
 * Online conformal p-values from a stream of conformity scores.
 */
typedef struct ExmartPValueStream ExmartPValueStream;

/**
 * Multi-fold retraining schedule fed with precomputed conformity scores.
 */
typedef struct ExmartSchedule ExmartSchedule;

/**
 * State of a detector bundle after a step.
 */
typedef struct ExmartMonitorState {
  uint64_t step;
  double log10_capital;
  double cusum;
  double shiryaev_roberts;
  /**
   * Bitwise OR of the `EXMART_FIRED_*` flags.
   */
  uint32_t fired;
} ExmartMonitorState;

/**
 * Schedule settings. Optional values are NaN when unset.
 */
typedef struct ExmartScheduleParams {
  enum ExmartScheduleKind kind;
  uint64_t target_lifespan;
  double opening_threshold;
  double endgame_threshold;
  double endgame_alpha;
  double middlegame_slope;
  double middlegame_alpha;
  uint32_t quorum;
  uint32_t folds;
  double jump_rate;
} ExmartScheduleParams;

/**
 * A quorum alarm.
 */
typedef struct ExmartAlarmEvent {
  enum ExmartStage stage;
  uint64_t step;
  /**
   * Test-stream ordinal of the alarm, `<= 0` if raised on calibration.
   */
  int64_t delay;
  uint32_t firing_folds;
} ExmartAlarmEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (nul
 * terminated, truncated to `len`) and returns the full message length in
 * bytes, excluding the terminator. Returns 0 if there is no error.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t exmart_last_error(char *buf, size_t len);

/**
 * Library version as a static nul-terminated string.
 */
const char *exmart_version(void);

/**
 * # Safety
 * `out` must be valid for writing a pointer.
 */
enum ExmartStatus exmart_pvalue_stream_new(struct ExmartPValueStream **out);

/**
 * Adds `score` with tie-break `tiebreak` in [0, 1] and writes its p-value.
 *
 * # Safety
 * `stream` must come from [`exmart_pvalue_stream_new`]; `p_out` must be
 * valid for writing.
 */
enum ExmartStatus exmart_pvalue_stream_push(struct ExmartPValueStream *stream,
                                            double score,
                                            double tiebreak,
                                            double *p_out);

/**
 * Number of scores seen so far; 0 for a null handle.
 *
 * # Safety
 * `stream` must be null or a live handle.
 */
uint64_t exmart_pvalue_stream_len(const struct ExmartPValueStream *stream);

/**
 * # Safety
 * `stream` must be null or a live handle; it is invalid afterwards.
 */
void exmart_pvalue_stream_free(struct ExmartPValueStream *stream);

/**
 * # Safety
 * `out` must be valid for writing a pointer.
 */
enum ExmartStatus exmart_jumper_new(double jump_rate, struct ExmartJumper **out);

/**
 * Bets on `p` and writes the capital ratio `S_n / S_{n-1}` and the new
 * `ln S_n`. Either out-pointer may be null.
 *
 * # Safety
 * `jumper` must be a live handle; non-null out-pointers must be writable.
 */
enum ExmartStatus exmart_jumper_step(struct ExmartJumper *jumper,
                                     double p,
                                     double *ratio_out,
                                     double *log_capital_out);

/**
 * Current `ln S_n`; NaN for a null handle.
 *
 * # Safety
 * `jumper` must be null or a live handle.
 */
double exmart_jumper_log_capital(const struct ExmartJumper *jumper);

/**
 * # Safety
 * `jumper` must be null or a live handle; it is invalid afterwards.
 */
void exmart_jumper_free(struct ExmartJumper *jumper);

/**
 * Creates a bundle. Pass `INFINITY` for a detector that should never
 * fire.
 *
 * # Safety
 * `out` must be valid for writing a pointer.
 */
enum ExmartStatus exmart_monitor_new(double jump_rate,
                                     double ville_threshold,
                                     double cusum_threshold,
                                     double sr_threshold,
                                     struct ExmartMonitor **out);

/**
 * Feeds one p-value; `state_out` may be null.
 *
 * # Safety
 * `monitor` must be a live handle; `state_out` null or writable.
 */
enum ExmartStatus exmart_monitor_step(struct ExmartMonitor *monitor,
                                      double p,
                                      struct ExmartMonitorState *state_out);

/**
 * # Safety
 * `monitor` must be a live handle; `state_out` writable.
 */
enum ExmartStatus exmart_monitor_state(const struct ExmartMonitor *monitor,
                                       struct ExmartMonitorState *state_out);

/**
 * # Safety
 * `monitor` must be null or a live handle; it is invalid afterwards.
 */
void exmart_monitor_free(struct ExmartMonitor *monitor);

/**
 * Fills `params` with the variable schedule for target lifespan
 * `target_lifespan`.
 *
 * # Safety
 * `params` must be writable.
 */
enum ExmartStatus exmart_schedule_params_variable(uint64_t target_lifespan,
                                                  struct ExmartScheduleParams *params);

/**
 * # Safety
 * `params` must be readable; `out` writable.
 */
enum ExmartStatus exmart_schedule_new(const struct ExmartScheduleParams *params,
                                      struct ExmartSchedule **out);

/**
 * Feeds fold `fold` (1-based) its calibration scores and tie-breaks.
 *
 * # Safety
 * `schedule` must be a live handle; both arrays must hold `len` values.
 */
enum ExmartStatus exmart_schedule_calibrate(struct ExmartSchedule *schedule,
                                            uint32_t fold,
                                            const double *scores,
                                            const double *tiebreaks,
                                            size_t len);

/**
 * Ends calibration; writes how many events it raised (may be null).
 *
 * # Safety
 * `schedule` must be a live handle; `new_events` null or writable.
 */
enum ExmartStatus exmart_schedule_finish_calibration(struct ExmartSchedule *schedule,
                                                     uint32_t *new_events);

/**
 * Feeds one test observation: one score and tie-break per fold.
 *
 * # Safety
 * `schedule` must be a live handle; both arrays must hold `folds` values;
 * `new_events` null or writable.
 */
enum ExmartStatus exmart_schedule_advance(struct ExmartSchedule *schedule,
                                          const double *scores,
                                          const double *tiebreaks,
                                          size_t folds,
                                          uint32_t *new_events);

/**
 * Number of alarm events so far; 0 for a null handle.
 *
 * # Safety
 * `schedule` must be null or a live handle.
 */
uint32_t exmart_schedule_event_count(const struct ExmartSchedule *schedule);

/**
 * Copies event `index` (0-based, in order raised).
 *
 * # Safety
 * `schedule` must be a live handle; `event_out` writable.
 */
enum ExmartStatus exmart_schedule_event(const struct ExmartSchedule *schedule,
                                        uint32_t index,
                                        struct ExmartAlarmEvent *event_out);

/**
 * True once the schedule has raised its alarm and stopped.
 *
 * # Safety
 * `schedule` must be null or a live handle.
 */
bool exmart_schedule_is_terminated(const struct ExmartSchedule *schedule);

/**
 * # Safety
 * `schedule` must be null or a live handle; it is invalid afterwards.
 */
void exmart_schedule_free(struct ExmartSchedule *schedule);

/**
 * Horizon at which the opening threshold meets a barrier of slope `slope`
 * under per-step decay `decay` in log10 capital.
 *
 * # Safety
 * `out` must be writable.
 */
enum ExmartStatus exmart_boundary_solve(double opening_threshold,
                                        double slope,
                                        double decay,
                                        double *out);

/**
 * Two-sided Clopper-Pearson interval for `successes` out of `trials`.
 *
 * # Safety
 * `lower` and `upper` must be writable.
 */
enum ExmartStatus exmart_clopper_pearson(uint64_t successes,
                                         uint64_t trials,
                                         double level,
                                         double *lower,
                                         double *upper);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EXMART_H */
