#ifndef FERROSADDLE_H
#define FERROSADDLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Which field of a state to copy.
typedef enum FsdField {
  // Potential of the reported pair, one value per node.
  FSD_FIELD_POTENTIAL = 0,
  // Indicator of the reported pair, one value per cell.
  FSD_FIELD_INDICATOR = 1,
  // Density iterate that produced the potential, one value per cell.
  FSD_FIELD_DENSITY = 2,
} FsdField;

// Result of every call.
typedef enum FsdStatus {
  FSD_STATUS_OK = 0,
  FSD_STATUS_NULL_POINTER = 1,
  FSD_STATUS_INVALID_ARGUMENT = 2,
  // The saddle iteration stopped without meeting its gap tolerance. The
  // state is still returned.
  FSD_STATUS_NOT_CONVERGED = 3,
  FSD_STATUS_CONFIG = 4,
  FSD_STATUS_BUFFER_TOO_SMALL = 5,
  FSD_STATUS_PANIC = 6,
} FsdStatus;

// Grid, law, constants and solver options.
typedef struct FsdProblem FsdProblem;

// Result of [`fsd_solve`].
typedef struct FsdState FsdState;

// Scalar summary of a state.
typedef struct FsdBounds {
  double lower;
  double upper;
  double certified_upper;
  double gap;
  double relative_gap;
  uintptr_t sweeps;
  bool converged;
} FsdBounds;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, empty after a success.
// The pointer stays valid until the next `fsd_*` call on the same thread.
const char *fsd_last_error(void);

// Library version as a static NUL-terminated string.
const char *fsd_version(void);

// Two-dimensional problem on `(0, length) × (−1, 1)` with a linear law
// `μ = mu` and default solver options. `p0` is the law's pressure constant.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum FsdStatus fsd_problem_new_linear_2d(double length,
                                         uintptr_t n_x,
                                         uintptr_t n_z,
                                         double mu,
                                         double b,
                                         double tau,
                                         double mu_drive,
                                         struct FsdProblem **out);

// Problem from configuration text (`key = value` lines).
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer to
// writable storage for one handle.
enum FsdStatus fsd_problem_from_config(const char *text, struct FsdProblem **out);

// # Safety
// `problem` must be null or a handle from this library not yet freed.
void fsd_problem_free(struct FsdProblem *problem);

// Number of potential nodes, density cells and interface columns.
//
// # Safety
// `problem` must be a live handle; the output pointers may be null.
enum FsdStatus fsd_problem_sizes(const struct FsdProblem *problem,
                                 uintptr_t *n_nodes,
                                 uintptr_t *n_cells,
                                 uintptr_t *n_columns);

// Sets the gap tolerance and sweep limit of the saddle iteration.
//
// # Safety
// `problem` must be a live handle.
enum FsdStatus fsd_problem_set_saddle(struct FsdProblem *problem,
                                      double tol_gap,
                                      uintptr_t max_sweeps);

// `J(u, ρ)` for node values `u` and cell densities `rho`.
//
// # Safety
// `u` and `rho` must point to `n_u` and `n_rho` readable doubles and `out`
// to one writable double.
enum FsdStatus fsd_eval_j(const struct FsdProblem *problem,
                          const double *u,
                          uintptr_t n_u,
                          const double *rho,
                          uintptr_t n_rho,
                          double *out);

// Runs the saddle iteration. On `Ok` and on `NotConverged` a state handle
// is stored in `out`.
//
// # Safety
// `problem` must be a live handle and `out` a valid pointer to writable
// storage for one handle.
enum FsdStatus fsd_solve(const struct FsdProblem *problem, struct FsdState **out);

// # Safety
// `state` must be null or a handle from this library not yet freed.
void fsd_state_free(struct FsdState *state);

// # Safety
// `state` must be a live handle and `out` a valid writable pointer.
enum FsdStatus fsd_state_bounds(const struct FsdState *state, struct FsdBounds *out);

// Copies a field of `state` into `buf` (row-major grid order).
//
// # Safety
// `state` must be a live handle and `buf` must point to `len` writable
// doubles.
enum FsdStatus fsd_state_copy_field(const struct FsdState *state,
                                    enum FsdField field,
                                    double *buf,
                                    uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FERROSADDLE_H */
