#ifndef ICAC_H
#define ICAC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum IcacOutcome {
  ICAC_OUTCOME_RUNNING = 0,
  ICAC_OUTCOME_SUCCESS = 1,
  ICAC_OUTCOME_TOPPLED = 2,
  ICAC_OUTCOME_TIMEOUT = 3,
} IcacOutcome;

typedef enum IcacStatus {
  ICAC_STATUS_OK = 0,
  ICAC_STATUS_NULL_POINTER = 1,
  ICAC_STATUS_INVALID_ARGUMENT = 2,
  ICAC_STATUS_DIMENSION_MISMATCH = 3,
  ICAC_STATUS_EPISODE_DONE = 4,
  ICAC_STATUS_CONFIG = 5,
  ICAC_STATUS_IO = 6,
  ICAC_STATUS_DIVERGED = 7,
  ICAC_STATUS_INTERNAL = 8,
} IcacStatus;

typedef struct IcacConfig IcacConfig;

/**
 * Grasping environment with its own random stream.
 */
typedef struct IcacEnv IcacEnv;

typedef struct IcacTrainer IcacTrainer;

typedef struct IcacEpisodeMetrics {
  uint64_t episode;
  double extrinsic_return;
  double intrinsic_return;
  enum IcacOutcome outcome;
  uint64_t steps;
  uint64_t nodes;
  uint64_t imagined;
  uint64_t rollouts;
  double mean_depth;
  double wall_clock_ms;
} IcacEpisodeMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or an empty
 * string. Valid until the next failing call on the same thread.
 */
const char *icac_last_error_message(void);

/**
 * Length of one observation frame.
 */
uintptr_t icac_obs_len(void);

uintptr_t icac_action_dim(void);

struct IcacEnv *icac_env_new(uint64_t seed);

/**
 * # Safety
 * `env` must come from [`icac_env_new`] and not be used afterwards.
 */
void icac_env_free(struct IcacEnv *env);

/**
 * Starts an episode and writes the first frame into `obs_out`.
 *
 * # Safety
 * `obs_out` must point to `obs_len` writable doubles.
 */
enum IcacStatus icac_env_reset(struct IcacEnv *env, double *obs_out, uintptr_t obs_len);

/**
 * Applies one action. Any of the output pointers may be null to skip it.
 *
 * # Safety
 * `action` must point to `action_len` doubles and `obs_out`, if not null,
 * to `obs_len` writable doubles.
 */
enum IcacStatus icac_env_step(struct IcacEnv *env,
                              const double *action,
                              uintptr_t action_len,
                              double *obs_out,
                              uintptr_t obs_len,
                              double *reward_out,
                              bool *done_out,
                              enum IcacOutcome *outcome_out);

struct IcacConfig *icac_config_default(void);

/**
 * Reads a key-value config file into a new handle stored in `out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum IcacStatus icac_config_load(const char *path, struct IcacConfig **out);

/**
 * Sets one field using config-file syntax for the value, e.g. key
 * `"episodes"` with value `"40"`, or key `"imagination"` with value
 * `"static"`. The config is left unchanged if the result is invalid.
 *
 * # Safety
 * `key` and `value` must be NUL-terminated strings.
 */
enum IcacStatus icac_config_set(struct IcacConfig *config, const char *key, const char *value);

/**
 * # Safety
 * `config` must come from this library and not be used afterwards.
 */
void icac_config_free(struct IcacConfig *config);

/**
 * Builds a trainer from a copy of `config`.
 *
 * # Safety
 * `config` must be a live handle and `out` writable.
 */
enum IcacStatus icac_trainer_new(const struct IcacConfig *config, struct IcacTrainer **out);

/**
 * Runs one training episode; `metrics_out` may be null.
 *
 * # Safety
 * `trainer` must be a live handle.
 */
enum IcacStatus icac_trainer_run_episode(struct IcacTrainer *trainer,
                                         struct IcacEpisodeMetrics *metrics_out);

/**
 * Writes the current topological map in the text snapshot format.
 *
 * # Safety
 * `trainer` must be a live handle and `path` a NUL-terminated string.
 */
enum IcacStatus icac_trainer_write_snapshot(const struct IcacTrainer *trainer, const char *path);

/**
 * # Safety
 * `trainer` must come from [`icac_trainer_new`] and not be used afterwards.
 */
void icac_trainer_free(struct IcacTrainer *trainer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICAC_H */
