#ifndef RELAYNET_H
#define RELAYNET_H

/* Generated with cbindgen:0.27.0 */

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum RelaynetStatus {
  RELAYNET_STATUS_OK = 0,
  RELAYNET_STATUS_NULL_POINTER = 1,
  RELAYNET_STATUS_INVALID_ARGUMENT = 2,
  RELAYNET_STATUS_CONFIG = 3,
  RELAYNET_STATUS_CONTRACT = 4,
  RELAYNET_STATUS_IO = 5,
  RELAYNET_STATUS_CHECKPOINT = 6,
  RELAYNET_STATUS_BUDGET_EXCEEDED = 7,
  RELAYNET_STATUS_NON_FINITE = 8,
  RELAYNET_STATUS_PANIC = 9,
} RelaynetStatus;

/*
 A trained policy and the scratch random state used for sampling.
 */
typedef struct RelaynetPolicy RelaynetPolicy;

/*
 A DroneConnect world.
 */
typedef struct RelaynetWorld RelaynetWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *relaynet_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *relaynet_version(void);

/*
 Creates a world from a TOML world config (NULL or "" for defaults),
 reset with the config's seed.

 # Safety
 `config_toml` is NULL or a NUL-terminated string; `out` is writable.
 */
enum RelaynetStatus relaynet_world_new(const char *config_toml, struct RelaynetWorld **out);

/*
 # Safety
 `world` is NULL or a handle from `relaynet_world_new` not yet freed.
 */
void relaynet_world_free(struct RelaynetWorld *world);

/*
 # Safety
 `world` is a live handle.
 */
enum RelaynetStatus relaynet_world_reset(struct RelaynetWorld *world, uint64_t seed);

/*
 # Safety
 `world` is a live handle; `num_uavs` and `num_nodes` are writable.
 */
enum RelaynetStatus relaynet_world_size(const struct RelaynetWorld *world,
                                        uintptr_t *num_uavs,
                                        uintptr_t *num_nodes);

/*
 Advances one step. `actions` holds `2 * num_uavs` force fractions in
 `[-1, 1]`, interleaved x then y per UAV.

 # Safety
 `world` is a live handle; `actions` points to `len` doubles; `reward`
 and `done` are writable.
 */
enum RelaynetStatus relaynet_world_step(struct RelaynetWorld *world,
                                        const double *actions,
                                        uintptr_t len,
                                        double *reward,
                                        bool *done);

/*
 Writes `2 * num_uavs` coordinates, x then y per UAV.

 # Safety
 `world` is a live handle; `out` points to `len` writable doubles.
 */
enum RelaynetStatus relaynet_world_uav_positions(const struct RelaynetWorld *world,
                                                 double *out,
                                                 uintptr_t len);

/*
 Writes `2 * num_nodes` coordinates, x then y per node.

 # Safety
 `world` is a live handle; `out` points to `len` writable doubles.
 */
enum RelaynetStatus relaynet_world_node_positions(const struct RelaynetWorld *world,
                                                  double *out,
                                                  uintptr_t len);

/*
 Covered fraction of nodes in the current state.

 # Safety
 `world` is a live handle; `ratio` is writable.
 */
enum RelaynetStatus relaynet_world_coverage(const struct RelaynetWorld *world, double *ratio);

/*
 Best covered-node ratio over placements on a `grid_res × grid_res`
 grid for the current node positions. Exact within `budget` node
 expansions, greedy beyond; `exact` reports which.

 # Safety
 `world` is a live handle; `ratio` and `exact` are writable.
 */
enum RelaynetStatus relaynet_world_coverage_bound(const struct RelaynetWorld *world,
                                                  uintptr_t grid_res,
                                                  uint64_t budget,
                                                  double *ratio,
                                                  bool *exact);

/*
 Loads a DroneConnect policy checkpoint. The manifest (TOML, or JSON
 when the path ends in `.json`) fixes the architecture.

 # Safety
 Both paths are NUL-terminated strings; `out` is writable.
 */
enum RelaynetStatus relaynet_policy_load(const char *manifest_path,
                                         const char *checkpoint_path,
                                         uint64_t seed,
                                         struct RelaynetPolicy **out);

/*
 # Safety
 `policy` is NULL or a handle from `relaynet_policy_load` not yet freed.
 */
void relaynet_policy_free(struct RelaynetPolicy *policy);

/*
 Actions of every UAV for the world's current observations, written as
 `2 * num_uavs` values ready for `relaynet_world_step`. Only local
 observations and messages are used.

 # Safety
 `policy` and `world` are live handles; `out` points to `len` writable
 doubles.
 */
enum RelaynetStatus relaynet_policy_act(struct RelaynetPolicy *policy,
                                        const struct RelaynetWorld *world,
                                        bool deterministic,
                                        double *out,
                                        uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELAYNET_H */
