#ifndef DOPT_LAB_H
#define DOPT_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DoptStatus {
  DOPT_STATUS_OK = 0,
  DOPT_STATUS_NULL_POINTER = 1,
  DOPT_STATUS_INVALID_ARGUMENT = 2,
  DOPT_STATUS_SHAPE_MISMATCH = 3,
  DOPT_STATUS_COVERAGE_VIOLATION = 4,
  DOPT_STATUS_INFEASIBLE = 5,
  DOPT_STATUS_PANIC = 6,
} DoptStatus;

/**
 * Opaque finite-horizon MDP.
 */
typedef struct DoptMdp DoptMdp;

/**
 * Opaque time-indexed policy.
 */
typedef struct DoptPolicy DoptPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf`, NUL-terminated
 * and truncated to fit. Returns the full message length in bytes, not
 * counting the terminator, so a caller can size a second attempt.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes of writes.
 */
size_t dopt_last_error(char *buf, size_t len);

/**
 * Builds an MDP from flat arrays: `transition[s][a][s']`, `reward[s][a]`
 * and `initial[s]`.
 *
 * # Safety
 * Each array pointer must be valid for its stated length and `out` must be
 * a valid place to store the handle.
 */
enum DoptStatus dopt_mdp_new(size_t states,
                             size_t actions,
                             size_t horizon,
                             const double *transition,
                             size_t transition_len,
                             const double *reward,
                             size_t reward_len,
                             const double *initial,
                             size_t initial_len,
                             struct DoptMdp **out);

/**
 * The `n x n` slippery gridworld with horizon `n`.
 *
 * # Safety
 * `out` must be a valid place to store the handle.
 */
enum DoptStatus dopt_mdp_gridworld(size_t n,
                                   double slip,
                                   uint64_t reward_seed,
                                   struct DoptMdp **out);

/**
 * # Safety
 * `mdp` must be null or a handle from this library not yet freed.
 */
void dopt_mdp_free(struct DoptMdp *mdp);

/**
 * # Safety
 * `mdp` must be a live handle; each output pointer must be valid.
 */
enum DoptStatus dopt_mdp_dims(const struct DoptMdp *mdp,
                              size_t *states,
                              size_t *actions,
                              size_t *horizon);

/**
 * Builds a policy from `probs[t][s][a]`; each row must be a distribution.
 *
 * # Safety
 * `probs` must be valid for `len` reads and `out` a valid place to store the
 * handle.
 */
enum DoptStatus dopt_policy_new(size_t states,
                                size_t actions,
                                size_t horizon,
                                const double *probs,
                                size_t len,
                                struct DoptPolicy **out);

/**
 * A random target policy for `mdp`, drawn from `seed`.
 *
 * # Safety
 * `mdp` must be a live handle and `out` a valid place to store the handle.
 */
enum DoptStatus dopt_policy_random(const struct DoptMdp *mdp,
                                   uint64_t seed,
                                   struct DoptPolicy **out);

/**
 * # Safety
 * `policy` must be null or a handle from this library not yet freed.
 */
void dopt_policy_free(struct DoptPolicy *policy);

/**
 * Copies the probabilities of `policy` into `out`, which must hold exactly
 * `horizon * states * actions` values.
 *
 * # Safety
 * `policy` must be a live handle and `out` valid for `len` writes.
 */
enum DoptStatus dopt_policy_probs(const struct DoptPolicy *policy, double *out, size_t len);

/**
 * Expected total reward of `target` from the initial distribution.
 *
 * # Safety
 * Both handles must be live and `out` must be valid for one write.
 */
enum DoptStatus dopt_policy_performance(const struct DoptMdp *mdp,
                                        const struct DoptPolicy *target,
                                        double *out);

/**
 * The variance-optimal behavior policy for `target` paired with the optimal
 * baseline. When `variance` is not null it receives the estimator variance
 * under that pair.
 *
 * # Safety
 * Both handles must be live, `out` a valid place to store the new handle and
 * `variance` null or valid for one write.
 */
enum DoptStatus dopt_optimal_behavior(const struct DoptMdp *mdp,
                                      const struct DoptPolicy *target,
                                      struct DoptPolicy **out,
                                      double *variance);

/**
 * Writes the optimal baseline (the action values of `target`) into `out`.
 *
 * # Safety
 * Both handles must be live and `out` valid for `len` writes.
 */
enum DoptStatus dopt_optimal_baseline(const struct DoptMdp *mdp,
                                      const struct DoptPolicy *target,
                                      double *out,
                                      size_t len);

/**
 * Exact variance of the baseline-corrected return when sampling from
 * `behavior`. A null `baseline` means the zero baseline, which gives plain
 * per-decision importance sampling.
 *
 * # Safety
 * The handles must be live, `baseline` null or valid for `baseline_len`
 * reads and `out` valid for one write.
 */
enum DoptStatus dopt_exact_variance(const struct DoptMdp *mdp,
                                    const struct DoptPolicy *target,
                                    const struct DoptPolicy *behavior,
                                    const double *baseline,
                                    size_t baseline_len,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOPT_LAB_H */
