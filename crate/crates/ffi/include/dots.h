#ifndef DOTS_H
#define DOTS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DOTS_ABLATE_NO_LOCAL_BACKPROP 1

#define DOTS_ABLATE_NO_ADAPTIVE_WEIGHT 2

#define DOTS_ABLATE_NO_TOP_VISIT 4

#define DOTS_ABLATE_GREEDY 8

typedef enum DotsStatus {
  DOTS_STATUS_OK = 0,
  DOTS_STATUS_NULL_POINTER = 1,
  DOTS_STATUS_INVALID_ARGUMENT = 2,
  DOTS_STATUS_DIMENSION_MISMATCH = 3,
  DOTS_STATUS_INFEASIBLE = 4,
  DOTS_STATUS_EVALUATION = 5,
  DOTS_STATUS_PROTOCOL = 6,
  DOTS_STATUS_IO = 7,
  DOTS_STATUS_BUFFER_TOO_SMALL = 8,
  DOTS_STATUS_PANIC = 9,
} DotsStatus;

typedef enum DotsScenario {
  DOTS_SCENARIO_EXACT = 0,
  DOTS_SCENARIO_SURROGATE = 1,
} DotsScenario;

typedef struct DotsHistory DotsHistory;

typedef struct DotsSpace DotsSpace;

/**
 * Run settings. Fill with [`dots_run_options_default`] before changing fields.
 */
typedef struct DotsRunOptions {
  enum DotsScenario scenario;
  size_t init_points;
  size_t batch;
  size_t rounds;
  size_t eval_budget;
  size_t chains;
  size_t rollouts;
  double c0;
  uint32_t score_parts;
  uint32_t visit_parts;
  double tol;
  /**
   * Nonzero to use `target` instead of the objective's known optimum.
   */
  int has_target;
  double target;
  /**
   * Bitwise OR of `DOTS_ABLATE_*`.
   */
  uint32_t ablations;
  uint64_t seed;
} DotsRunOptions;

/**
 * Objective callback: write f(x) to `out` and return 0, or nonzero on failure.
 */
typedef int (*DotsObjectiveFn)(void *user_data, const double *x, size_t dims, double *out);

/**
 * One history row. `r2` is NaN when no fit diagnostic exists.
 */
typedef struct DotsRoundEntry {
  size_t round;
  size_t evals;
  size_t evals_cum;
  double best_value;
  double c_eff;
  double r2;
} DotsRoundEntry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dots_version(void);

/**
 * Copies the calling thread's last error message into `buf`.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes; `needed` may be null.
 */
enum DotsStatus dots_last_error(char *buf, size_t cap, size_t *needed);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum DotsStatus dots_run_options_default(struct DotsRunOptions *out);

/**
 * Lattice with per-dimension bounds and steps.
 *
 * # Safety
 * `lower`, `upper` and `step` must each hold `dims` values; `out` must be
 * valid for writes.
 */
enum DotsStatus dots_space_new(const double *lower,
                               const double *upper,
                               const double *step,
                               size_t dims,
                               struct DotsSpace **out);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum DotsStatus dots_space_uniform(size_t dims,
                                   double lower,
                                   double upper,
                                   double step,
                                   struct DotsSpace **out);

/**
 * Number of dimensions, or 0 for a null handle.
 *
 * # Safety
 * `space` must be null or a live handle.
 */
size_t dots_space_dims(const struct DotsSpace *space);

/**
 * # Safety
 * `space` must be null or a handle not freed before.
 */
void dots_space_free(struct DotsSpace *space);

/**
 * Evaluates a named benchmark ("ackley", "rastrigin", ...) at `x`.
 *
 * # Safety
 * `name` must be a NUL-terminated string, `x` must hold `dims` values and
 * `out` must be valid for writes.
 */
enum DotsStatus dots_benchmark_eval(const char *name, const double *x, size_t dims, double *out);

/**
 * Optimizes a named benchmark over `space`.
 *
 * # Safety
 * Pointers must be valid; `out` receives a history to release with
 * [`dots_history_free`].
 */
enum DotsStatus dots_run_benchmark(const char *name,
                                   const struct DotsSpace *space,
                                   const struct DotsRunOptions *options,
                                   struct DotsHistory **out);

/**
 * Optimizes a caller-supplied objective. `maximize` nonzero flips the
 * direction. Convergence needs `has_target` in the options.
 *
 * # Safety
 * `f` is called synchronously on this thread with `user_data`; other
 * pointers as for [`dots_run_benchmark`].
 */
enum DotsStatus dots_run_callback(DotsObjectiveFn f,
                                  void *user_data,
                                  int maximize,
                                  const struct DotsSpace *space,
                                  const struct DotsRunOptions *options,
                                  struct DotsHistory **out);

/**
 * History rows including the initialization row; 0 for null.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t dots_history_len(const struct DotsHistory *h);

/**
 * # Safety
 * `h` must be a live handle and `out` valid for writes.
 */
enum DotsStatus dots_history_entry(const struct DotsHistory *h,
                                   size_t index,
                                   struct DotsRoundEntry *out);

/**
 * Best value, its coordinates (`x` holds `dims` values, may be null) and
 * whether the run converged.
 *
 * # Safety
 * `h` must be a live handle; non-null out pointers must be writable.
 */
enum DotsStatus dots_history_best(const struct DotsHistory *h,
                                  double *value,
                                  double *x,
                                  size_t dims,
                                  int *converged);

/**
 * History as CSV text (header `round,evals_cum,best_value,c_eff,r2`).
 *
 * # Safety
 * `h` must be a live handle; `buf` must hold `cap` bytes; `needed` may be null.
 */
enum DotsStatus dots_history_csv(const struct DotsHistory *h,
                                 char *buf,
                                 size_t cap,
                                 size_t *needed);

/**
 * # Safety
 * `h` must be null or a handle not freed before.
 */
void dots_history_free(struct DotsHistory *h);

/**
 * Fraction of `best_values` within `tol` of `target`.
 *
 * # Safety
 * `best_values` must hold `n` values; `out` must be writable.
 */
enum DotsStatus dots_convergence_ratio(const double *best_values,
                                       size_t n,
                                       double target,
                                       double tol,
                                       double *out);

/**
 * Dynamic upper confidence bound of a node.
 *
 * # Safety
 * `out` must be writable.
 */
enum DotsStatus dots_ducb(double value,
                          uint64_t n_node,
                          uint64_t n_root,
                          double c_eff,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOTS_H */
