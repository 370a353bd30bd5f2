#ifndef MIXSYN_H
#define MIXSYN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MixsynStatus {
  MIXSYN_STATUS_OK = 0,
  MIXSYN_STATUS_NULL_POINTER = 1,
  /**
   * Malformed input: dimensions, non-finite values, bad JSON.
   */
  MIXSYN_STATUS_INVALID_INPUT = 2,
  /**
   * The computation itself failed (not Hurwitz, no convergence, ...).
   */
  MIXSYN_STATUS_NUMERICAL = 3,
  /**
   * Caller-provided output buffer has the wrong length.
   */
  MIXSYN_STATUS_BUFFER_SIZE = 4,
  MIXSYN_STATUS_PANIC = 5,
} MixsynStatus;

/**
 * State-feedback gain `K` in `u = -K x`.
 */
typedef struct MixsynGain MixsynGain;

/**
 * Linear plant with weights folded into `C` and `D`.
 */
typedef struct MixsynPlant MixsynPlant;

/**
 * Result of a model-based or data-driven game solve.
 */
typedef struct MixsynSolution MixsynSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next mixsyn call on the same thread.
 */
const char *mixsyn_last_error(void);

/**
 * Builds a plant from `A` (n x n), `B1` (n x m), `B2` (n x q) and the
 * weights `Q` (n x n), `R` (m x m).
 *
 * # Safety
 * Every matrix pointer must reference the stated number of doubles.
 */
enum MixsynStatus mixsyn_plant_new(size_t n,
                                   size_t m,
                                   size_t q,
                                   const double *a,
                                   const double *b1,
                                   const double *b2,
                                   const double *weight_q,
                                   const double *weight_r,
                                   struct MixsynPlant **out);

/**
 * Parses a plant from the JSON format written by the `mixsyn` tool.
 *
 * # Safety
 * `json` must be a NUL-terminated string.
 */
enum MixsynStatus mixsyn_plant_from_json(const char *json, struct MixsynPlant **out);

/**
 * # Safety
 * `plant` must be NULL or a handle from this library, not yet freed.
 */
void mixsyn_plant_free(struct MixsynPlant *plant);

/**
 * Writes the state, control and disturbance dimensions.
 *
 * # Safety
 * Output pointers must be valid or NULL (NULL outputs are skipped).
 */
enum MixsynStatus mixsyn_plant_dims(const struct MixsynPlant *plant,
                                    size_t *n,
                                    size_t *m,
                                    size_t *q);

/**
 * # Safety
 * `data` must reference `m * n` doubles.
 */
enum MixsynStatus mixsyn_gain_new(size_t m, size_t n, const double *data, struct MixsynGain **out);

/**
 * # Safety
 * `gain` must be NULL or a live handle.
 */
void mixsyn_gain_free(struct MixsynGain *gain);

/**
 * # Safety
 * `out` must hold `len` doubles; `len` must equal rows * cols of the gain.
 */
enum MixsynStatus mixsyn_gain_values(const struct MixsynGain *gain, double *out, size_t len);

/**
 * H-infinity norm from disturbance to output under `u = -K x`.
 *
 * # Safety
 * Handles must be live; `norm` must be writable.
 */
enum MixsynStatus mixsyn_hinf_norm(const struct MixsynPlant *plant,
                                   const struct MixsynGain *gain,
                                   double *norm);

/**
 * Sweeps the given closed-loop pole locations and returns the first gain
 * with norm below `gamma`. `norm` may be NULL.
 *
 * # Safety
 * `poles` must reference `n_poles` doubles.
 */
enum MixsynStatus mixsyn_find_admissible_gain(const struct MixsynPlant *plant,
                                              double gamma,
                                              const double *poles,
                                              size_t n_poles,
                                              struct MixsynGain **out,
                                              double *norm);

/**
 * Model-based double-loop game iteration from an admissible `k1`.
 *
 * # Safety
 * Handles must be live.
 */
enum MixsynStatus mixsyn_solve_game(const struct MixsynPlant *plant,
                                    double gamma,
                                    const struct MixsynGain *k1,
                                    struct MixsynSolution **out);

/**
 * Data-driven solve: simulates the plant under `k1` with exploration and
 * noise, then learns the gains from the trajectory without using `A` or `B1`.
 *
 * # Safety
 * Handles must be live.
 */
enum MixsynStatus mixsyn_learn(const struct MixsynPlant *plant,
                               double gamma,
                               const struct MixsynGain *k1,
                               uint64_t seed,
                               struct MixsynSolution **out);

/**
 * # Safety
 * `solution` must be NULL or a live handle.
 */
void mixsyn_solution_free(struct MixsynSolution *solution);

/**
 * Copies `P` (n x n, row-major).
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum MixsynStatus mixsyn_solution_p(const struct MixsynSolution *solution, double *out, size_t len);

/**
 * Copies `K` (m x n, row-major).
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum MixsynStatus mixsyn_solution_k(const struct MixsynSolution *solution, double *out, size_t len);

/**
 * Copies `L` (q x n, row-major).
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum MixsynStatus mixsyn_solution_l(const struct MixsynSolution *solution, double *out, size_t len);

/**
 * Riccati residual of the solution and whether the iteration converged.
 * Either output may be NULL.
 *
 * # Safety
 * `solution` must be a live handle.
 */
enum MixsynStatus mixsyn_solution_info(const struct MixsynSolution *solution,
                                       double *residual,
                                       bool *converged);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIXSYN_H */
