#ifndef SOCIALMI_H
#define SOCIALMI_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Length of one one-hot observation.
 */
#define SM_OBS_LEN 567

#define SM_NUM_ACTIONS 8

typedef enum SmStatus {
  SM_STATUS_OK = 0,
  SM_STATUS_NULL_POINTER = 1,
  SM_STATUS_INVALID_ARGUMENT = 2,
  SM_STATUS_INVALID_MAP = 3,
  SM_STATUS_UNKNOWN_AGENT = 4,
  SM_STATUS_BUFFER_TOO_SMALL = 5,
  SM_STATUS_PANIC = 6,
  SM_STATUS_INTERNAL = 7,
} SmStatus;

/**
 * Opaque environment handle.
 */
typedef struct SmEnv SmEnv;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sm_last_error(char *buf, size_t len);

/**
 * Creates an environment with `agents` agents. `map_text` is an ASCII map
 * (`@` wall, `.` empty, `a` apple site, `P` spawn point); null selects the
 * bundled 25 x 9 map.
 *
 * # Safety
 * `map_text` must be null or a NUL-terminated string; `out` must be valid
 * for a write.
 */
enum SmStatus sm_env_create(const char *map_text, size_t agents, uint64_t seed, struct SmEnv **out);

/**
 * # Safety
 * `env` must be null or a handle from [`sm_env_create`] not yet freed.
 */
void sm_env_free(struct SmEnv *env);

/**
 * Starts over on the same map with a new seed.
 *
 * # Safety
 * `env` must be a live handle.
 */
enum SmStatus sm_env_reset(struct SmEnv *env, uint64_t seed);

/**
 * Advances one step. `actions` holds one action index (0..8) per agent;
 * `rewards` receives one reward per agent and may be null. `terminated`
 * may be null and is set when the last apple was collected and a fresh
 * episode began.
 *
 * # Safety
 * `actions` must point to `n` bytes, `rewards` to `n` doubles if non-null.
 */
enum SmStatus sm_env_step(struct SmEnv *env,
                          const uint8_t *actions,
                          size_t n,
                          double *rewards,
                          bool *terminated);

/**
 * Writes agent `agent`'s one-hot observation (`SM_OBS_LEN` doubles) into
 * `out`. A timed-out agent receives the all-empty frame and `timed_out`
 * is set.
 *
 * # Safety
 * `out` must point to `len` writable doubles; `timed_out` may be null.
 */
enum SmStatus sm_env_observation(const struct SmEnv *env,
                                 size_t agent,
                                 double *out,
                                 size_t len,
                                 bool *timed_out);

/**
 * # Safety
 * `env` must be a live handle and `out` valid for a write.
 */
enum SmStatus sm_env_apple_count(const struct SmEnv *env, size_t *out);

/**
 * # Safety
 * `env` must be a live handle and `out` valid for a write.
 */
enum SmStatus sm_env_num_agents(const struct SmEnv *env, size_t *out);

/**
 * Steps since the current episode began.
 *
 * # Safety
 * `env` must be a live handle and `out` valid for a write.
 */
enum SmStatus sm_env_time(const struct SmEnv *env, uint64_t *out);

/**
 * Whether the agent is on the field, i.e. not serving a timeout.
 *
 * # Safety
 * `env` must be a live handle and `out` valid for a write.
 */
enum SmStatus sm_env_agent_active(const struct SmEnv *env, size_t agent, bool *out);

/**
 * Regrowth probability of an empty apple site with `nearby` apples within
 * distance 2.
 */
double sm_respawn_probability(size_t nearby);

/**
 * # Safety
 * `payoffs` must point to `n` doubles; `out` valid for a write.
 */
enum SmStatus sm_utilities(const double *payoffs, size_t n, double *out);

/**
 * # Safety
 * `payoffs` must point to `n` doubles; `out` valid for a write.
 */
enum SmStatus sm_equity(const double *payoffs, size_t n, double *out);

/**
 * # Safety
 * `out` must be valid for a write.
 */
enum SmStatus sm_peace(size_t timeout_slots, size_t agents, size_t steps, double *out);

/**
 * # Safety
 * `apple_counts` must point to `n` values; `out` valid for a write.
 */
enum SmStatus sm_sustainability(const size_t *apple_counts, size_t n, double *out);

/**
 * Cooperation index from the shifted MI, the average policy entropy and
 * the utilities. `defined` is cleared, and `out` left untouched, when the
 * entropy is too small for the index to exist.
 *
 * # Safety
 * `out` and `defined` must be valid for writes.
 */
enum SmStatus sm_cooperation_index(double i_shifted,
                                   double h_bar,
                                   double u,
                                   double *out,
                                   bool *defined);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOCIALMI_H */
