#ifndef BGCN_H
#define BGCN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

enum BgcnStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  BGCN_STATUS_OK = 0,
  BGCN_STATUS_NULL_POINTER = 1,
  BGCN_STATUS_INVALID_ARGUMENT = 2,
  BGCN_STATUS_IO = 3,
  BGCN_STATUS_LOAD = 4,
  BGCN_STATUS_VALIDATION = 5,
  BGCN_STATUS_DIMENSION = 6,
  BGCN_STATUS_NON_FINITE = 7,
  BGCN_STATUS_EMPTY_MASK = 8,
  BGCN_STATUS_COORDINATION = 9,
  BGCN_STATUS_PANIC = 10,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum BgcnStatus BgcnStatus;
#else
typedef int32_t BgcnStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

enum BgcnProposal
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  BGCN_PROPOSAL_RANDOM_WALK = 0,
  BGCN_PROPOSAL_LG = 1,
  BGCN_PROPOSAL_ADAPT_LG = 2,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum BgcnProposal BgcnProposal;
#else
typedef int32_t BgcnProposal;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Opaque loaded dataset.
 */
typedef struct BgcnDataset BgcnDataset;

/**
 * Opaque finished run.
 */
typedef struct BgcnRun BgcnRun;

/**
 * Sampler settings. Fill with `bgcn_run_config_default` and adjust.
 */
typedef struct BgcnRunConfig {
  size_t replicas;
  size_t max_samples;
  double tmax;
  size_t swap_interval;
  double switch_fraction;
  BgcnProposal proposal;
  double lg_rate;
  /**
   * Gradient step scale.
   */
  double lr;
  double rw_std;
  double prior_var;
  size_t hidden;
  uint64_t seed;
  size_t thin;
  /**
   * Coordinates for trace, histogram and r-hat output; may be null when
   * `num_weight_ids` is 0.
   */
  const size_t *weight_ids;
  size_t num_weight_ids;
  size_t bins;
} BgcnRunConfig;

/**
 * Accuracy statistics and rates of a finished run.
 */
typedef struct BgcnSummary {
  double train_mean;
  double train_max;
  double train_std;
  double test_mean;
  double test_max;
  double test_std;
  double acceptance_pct;
  double swap_pct_of_attempts;
  double swap_pct_of_samples;
  double wall_clock_minutes;
  size_t replicas;
  size_t per_replica_budget;
  size_t param_count;
} BgcnSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *bgcn_last_error(void);

/**
 * Number of weights and biases in a two-layer network.
 */
size_t bgcn_param_count(size_t in_features, size_t hidden, size_t out_classes);

/**
 * Log swap acceptance for two replicas' log-likelihoods and temperatures.
 */
double bgcn_swap_log_prob(double log_lik_i, double log_lik_j, double t_i, double t_j);

/**
 * Gelman–Rubin r-hat of `num_chains` chains of `len` values each, stored
 * chain after chain. Writes `INFINITY` when chains are constant but differ.
 *
 * # Safety
 * `values` must point to `num_chains * len` readable doubles and `out` to a
 * writable double.
 */
BgcnStatus bgcn_gelman_rubin(const double *values, size_t num_chains, size_t len, double *out);

/**
 * Loads a dataset directory.
 *
 * # Safety
 * `dir` must be a nul-terminated string and `out` a writable pointer.
 */
BgcnStatus bgcn_dataset_load(const char *dir, struct BgcnDataset **out);

/**
 * Writes node, feature and class counts; any output pointer may be null.
 *
 * # Safety
 * `ds` must come from `bgcn_dataset_load`; non-null outputs must be writable.
 */
BgcnStatus bgcn_dataset_shape(const struct BgcnDataset *ds,
                              size_t *nodes,
                              size_t *features,
                              size_t *classes);

/**
 * # Safety
 * `ds` must come from `bgcn_dataset_load` or be null.
 */
void bgcn_dataset_free(struct BgcnDataset *ds);

/**
 * Fills `cfg` with the default experiment settings.
 *
 * # Safety
 * `cfg` must be writable.
 */
BgcnStatus bgcn_run_config_default(struct BgcnRunConfig *cfg);

/**
 * Samples the posterior. Blocks until every replica finishes.
 *
 * # Safety
 * `ds` must come from `bgcn_dataset_load`, `cfg` must be readable and `out`
 * writable.
 */
BgcnStatus bgcn_run(const struct BgcnDataset *ds,
                    const struct BgcnRunConfig *cfg,
                    struct BgcnRun **out);

/**
 * # Safety
 * `run` must come from `bgcn_run`; `out` must be writable.
 */
BgcnStatus bgcn_run_summary(const struct BgcnRun *run, struct BgcnSummary *out);

/**
 * r-hat of one coordinate across the run's replicas after discarding the
 * first `burn_in_fraction` of each chain.
 *
 * # Safety
 * `run` must come from `bgcn_run`; `out` must be writable.
 */
BgcnStatus bgcn_run_rhat(const struct BgcnRun *run,
                         size_t weight_id,
                         double burn_in_fraction,
                         double *out);

/**
 * Writes the summary, traces, histograms and sample files into `dir`.
 *
 * # Safety
 * `run` must come from `bgcn_run`; `dir` must be a nul-terminated string.
 */
BgcnStatus bgcn_run_write(const struct BgcnRun *run, const char *dir);

/**
 * # Safety
 * `run` must come from `bgcn_run` or be null.
 */
void bgcn_run_free(struct BgcnRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BGCN_H */
