#ifndef RCMDP_H
#define RCMDP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RcmdpStatus {
  RCMDP_STATUS_OK = 0,
  RCMDP_STATUS_NULL_POINTER = 1,
  RCMDP_STATUS_INVALID_ARGUMENT = 2,
  RCMDP_STATUS_INVALID_INSTANCE = 3,
  RCMDP_STATUS_NUMERICAL = 4,
  RCMDP_STATUS_INFEASIBLE = 5,
  RCMDP_STATUS_UNSUPPORTED = 6,
  RCMDP_STATUS_IO = 7,
  RCMDP_STATUS_PARSE = 8,
  RCMDP_STATUS_PANIC = 9,
} RcmdpStatus;

/**
 * Opaque instance handle.
 */
typedef struct RcmdpInstance RcmdpInstance;

/**
 * Opaque policy handle (`S x A`, row-major, rows on the simplex).
 */
typedef struct RcmdpPolicy RcmdpPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *rcmdp_last_error_message(void);

/**
 * Parses an instance from its JSON form.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` a valid pointer.
 */
enum RcmdpStatus rcmdp_instance_from_json(const char *json, struct RcmdpInstance **out);

/**
 * Generates a random instance with the default sizes of `setting`
 * (`"finite"`, `"kl"` or `"cmdp"`).
 *
 * # Safety
 * `setting` must be a nul-terminated string and `out` a valid pointer.
 */
enum RcmdpStatus rcmdp_instance_generate(const char *setting,
                                         uint64_t seed,
                                         struct RcmdpInstance **out);

/**
 * The four-state two-kernel gradient-conflict instance with threshold `b1`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum RcmdpStatus rcmdp_instance_counterexample(double gamma,
                                               double delta,
                                               double b1,
                                               struct RcmdpInstance **out);

/**
 * # Safety
 * `inst` must be null or a handle from this library that has not been freed.
 */
void rcmdp_instance_free(struct RcmdpInstance *inst);

/**
 * Writes the instance dimensions; any output pointer may be null.
 *
 * # Safety
 * `inst` must be a live handle; non-null outputs must be valid.
 */
enum RcmdpStatus rcmdp_instance_dims(const struct RcmdpInstance *inst,
                                     size_t *num_states,
                                     size_t *num_actions,
                                     size_t *num_costs,
                                     double *gamma);

/**
 * Serializes the instance; release the string with [`rcmdp_string_free`].
 *
 * # Safety
 * `inst` must be a live handle and `out` a valid pointer.
 */
enum RcmdpStatus rcmdp_instance_to_json(const struct RcmdpInstance *inst, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void rcmdp_string_free(char *s);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum RcmdpStatus rcmdp_policy_uniform(size_t num_states,
                                      size_t num_actions,
                                      struct RcmdpPolicy **out);

/**
 * Builds a policy from `num_states * num_actions` row-major probabilities.
 *
 * # Safety
 * `probs` must point to that many readable doubles; `out` must be valid.
 */
enum RcmdpStatus rcmdp_policy_from_array(const double *probs,
                                         size_t num_states,
                                         size_t num_actions,
                                         struct RcmdpPolicy **out);

/**
 * Copies the probabilities row-major into `buf`, which must hold `S * A` values.
 *
 * # Safety
 * `policy` must be a live handle and `buf` must have room for `len` doubles.
 */
enum RcmdpStatus rcmdp_policy_copy_to(const struct RcmdpPolicy *policy, double *buf, size_t len);

/**
 * # Safety
 * `policy` must be null or a live handle from this library.
 */
void rcmdp_policy_free(struct RcmdpPolicy *policy);

/**
 * Worst-case return of cost `n` (0 is the objective).
 *
 * # Safety
 * Handles must be live; `value` must be valid.
 */
enum RcmdpStatus rcmdp_robust_eval(const struct RcmdpInstance *inst,
                                   const struct RcmdpPolicy *policy,
                                   size_t n,
                                   double *value);

/**
 * Worst-case returns of all `N + 1` costs written to `out[0..len]`.
 *
 * # Safety
 * Handles must be live; `out` must hold `len` doubles.
 */
enum RcmdpStatus rcmdp_robust_values(const struct RcmdpInstance *inst,
                                     const struct RcmdpPolicy *policy,
                                     double *out,
                                     size_t len);

/**
 * `max_n J_n - b_n` with `b0` for the objective, and the maximizing index.
 *
 * # Safety
 * Handles must be live; `value` must be valid, `index` may be null.
 */
enum RcmdpStatus rcmdp_delta_hat(const struct RcmdpInstance *inst,
                                 const struct RcmdpPolicy *policy,
                                 double b0,
                                 double *value,
                                 size_t *index);

/**
 * Epigraph bisection with `outer_iterations` thresholds and a warm-started
 * projected-gradient subroutine of `iterations` steps of size `learning_rate`.
 *
 * # Safety
 * `inst` must be live and `out` valid.
 */
enum RcmdpStatus rcmdp_solve_epigraph(const struct RcmdpInstance *inst,
                                      size_t outer_iterations,
                                      size_t iterations,
                                      double learning_rate,
                                      struct RcmdpPolicy **out);

/**
 * Optimal return of a single-kernel instance and the extracted policy.
 *
 * # Safety
 * `inst` must be live; `value` and `out` valid.
 */
enum RcmdpStatus rcmdp_solve_lp(const struct RcmdpInstance *inst,
                                double *value,
                                struct RcmdpPolicy **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RCMDP_H */
