#ifndef NAVSIM_H
#define NAVSIM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum NavsimStatus {
  NAVSIM_STATUS_OK = 0,
  NAVSIM_STATUS_NULL_POINTER = 1,
  NAVSIM_STATUS_INVALID_ARGUMENT = 2,
  NAVSIM_STATUS_NOT_FOUND = 3,
  NAVSIM_STATUS_IO = 4,
  NAVSIM_STATUS_FINISHED = 5,
  NAVSIM_STATUS_BUFFER_TOO_SMALL = 6,
  NAVSIM_STATUS_INTERNAL = 7,
} NavsimStatus;

typedef enum NavsimOutcome {
  NAVSIM_OUTCOME_RUNNING = 0,
  NAVSIM_OUTCOME_SUCCESS = 1,
  NAVSIM_OUTCOME_WRONG_STOP = 2,
  NAVSIM_OUTCOME_BUDGET = 3,
} NavsimOutcome;

/**
 * A loaded dataset directory.
 */
typedef struct NavsimDataset NavsimDataset;

/**
 * One episode together with the agent driving it.
 */
typedef struct NavsimEpisode NavsimEpisode;

/**
 * Snapshot of a running episode.
 */
typedef struct NavsimEpisodeState {
  uint64_t node;
  double heading_deg;
  double eta;
  uint32_t steps;
  double traveled_m;
  double budget_m;
  double distance_to_goal_m;
  enum NavsimOutcome outcome;
} NavsimEpisodeState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into the library from the same thread.
 */
const char *navsim_last_error(void);

/**
 * Great-circle distance in meters.
 *
 * # Safety
 * `out_m` must be valid for writes.
 */
enum NavsimStatus navsim_geodesic_distance(double lat1,
                                           double lon1,
                                           double lat2,
                                           double lon2,
                                           double *out_m);

/**
 * Initial bearing from the first point to the second, degrees in `[0, 360)`.
 *
 * # Safety
 * `out_deg` must be valid for writes.
 */
enum NavsimStatus navsim_initial_bearing(double lat1,
                                         double lon1,
                                         double lat2,
                                         double lon2,
                                         double *out_deg);

/**
 * SPL in percent over `n` episodes given as parallel arrays.
 *
 * # Safety
 * The three arrays must each hold `n` readable elements.
 */
enum NavsimStatus navsim_spl(const bool *success,
                             const double *shortest_m,
                             const double *traveled_m,
                             size_t n,
                             double *out_spl);

/**
 * Loads a dataset directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_dataset` valid for writes.
 */
enum NavsimStatus navsim_dataset_load(const char *path, struct NavsimDataset **out_dataset);

/**
 * Number of routes in the dataset.
 *
 * # Safety
 * `dataset` must come from `navsim_dataset_load`.
 */
enum NavsimStatus navsim_dataset_route_count(const struct NavsimDataset *dataset,
                                             size_t *out_count);

/**
 * Copies the id of route `index` (sorted order) into `buf` with a trailing
 * NUL. `out_len` receives the id length without the NUL, also when the
 * buffer is too small.
 *
 * # Safety
 * `buf` must be writable for `buf_len` bytes.
 */
enum NavsimStatus navsim_dataset_route_id(const struct NavsimDataset *dataset,
                                          size_t index,
                                          char *buf,
                                          size_t buf_len,
                                          size_t *out_len);

/**
 * Releases a dataset. Episodes created from it stay usable.
 *
 * # Safety
 * `dataset` must come from `navsim_dataset_load` and not be used again.
 */
void navsim_dataset_free(struct NavsimDataset *dataset);

/**
 * Starts an episode on `route_id` driven by a registered policy and
 * matcher ("oracle" or "random", and "oracle" or "cosine").
 *
 * # Safety
 * String arguments must be NUL-terminated; `out_episode` valid for writes.
 */
enum NavsimStatus navsim_episode_new(const struct NavsimDataset *dataset,
                                     const char *route_id,
                                     const char *policy,
                                     const char *matcher,
                                     uint64_t seed,
                                     struct NavsimEpisode **out_episode);

/**
 * Advances the episode by one step; `NAVSIM_STATUS_FINISHED` once it has ended.
 *
 * # Safety
 * `episode` must come from `navsim_episode_new`.
 */
enum NavsimStatus navsim_episode_step(struct NavsimEpisode *episode);

/**
 * Steps until the episode ends.
 *
 * # Safety
 * `episode` must come from `navsim_episode_new`.
 */
enum NavsimStatus navsim_episode_run(struct NavsimEpisode *episode);

/**
 * # Safety
 * `episode` must come from `navsim_episode_new`; `out_state` valid for writes.
 */
enum NavsimStatus navsim_episode_state(const struct NavsimEpisode *episode,
                                       struct NavsimEpisodeState *out_state);

/**
 * Copies the JSON-lines trajectory log into `buf`, NUL-terminated.
 * Call with a NULL buffer to learn the length first.
 *
 * # Safety
 * `buf` must be writable for `buf_len` bytes.
 */
enum NavsimStatus navsim_episode_log(const struct NavsimEpisode *episode,
                                     char *buf,
                                     size_t buf_len,
                                     size_t *out_len);

/**
 * # Safety
 * `episode` must come from `navsim_episode_new` and not be used again.
 */
void navsim_episode_free(struct NavsimEpisode *episode);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NAVSIM_H */
