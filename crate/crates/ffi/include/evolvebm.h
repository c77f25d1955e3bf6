#ifndef EVOLVEBM_H
#define EVOLVEBM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result codes.
typedef enum EbmStatus {
  EBM_STATUS_OK = 0,
  EBM_STATUS_NULL_POINTER = 1,
  EBM_STATUS_INVALID_INPUT = 2,
  EBM_STATUS_OUT_OF_CHART = 3,
  EBM_STATUS_NUMERICAL = 4,
  EBM_STATUS_PANIC = 5,
} EbmStatus;

// Opaque metric family.
typedef struct EbmFamily EbmFamily;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ebm_version(void);

// Message for the last failing call on this thread (empty after success).
// Valid until the next call into the library from the same thread.
const char *ebm_last_error(void);

// Builds a family from `{"family": id, "params": {...}, "dim": d}`.
//
// # Safety
// `spec_json` must be a NUL-terminated string and `out` writable.
enum EbmStatus ebm_family_new(const char *spec_json, struct EbmFamily **out);

// Releases a family. Null is ignored.
//
// # Safety
// `fam` must come from [`ebm_family_new`] and not be used afterwards.
void ebm_family_free(struct EbmFamily *fam);

// Chart dimension, or 0 for a null handle.
//
// # Safety
// `fam` must be null or a live handle.
uintptr_t ebm_family_dim(const struct EbmFamily *fam);

// `g(t, x)` into `out` (`d × d`).
//
// # Safety
// `x` holds `d` values and `out` has room for `d²`.
enum EbmStatus ebm_metric_eval(const struct EbmFamily *fam, double t, const double *x, double *out);

// `∂ₜg(t, x)` into `out` (`d × d`).
//
// # Safety
// As for [`ebm_metric_eval`].
enum EbmStatus ebm_metric_dt(const struct EbmFamily *fam, double t, const double *x, double *out);

// `Γᵏᵢⱼ(t, x)` into `out[k·d² + i·d + j]`.
//
// # Safety
// `x` holds `d` values and `out` has room for `d³`.
enum EbmStatus ebm_christoffel(const struct EbmFamily *fam, double t, const double *x, double *out);

// Length of the straight chart segment from `x` to `y` in `g(t)`.
//
// # Safety
// `x` and `y` hold `d` values; `out` is writable.
enum EbmStatus ebm_chart_distance(const struct EbmFamily *fam,
                                  double t,
                                  const double *x,
                                  const double *y,
                                  double *out);

// Discrete action of a path. `*finite` is set to 0 and `*out` to +∞ when
// the action is infinite.
//
// # Safety
// `points` holds `n_points · d` values; `out` and `finite` are writable.
enum EbmStatus ebm_action_manifold(const struct EbmFamily *fam,
                                   const double *points,
                                   uintptr_t n_points,
                                   double *out,
                                   int *finite);

// Action minimizer from `x0` to `x1` on `n` cells; writes `(n + 1) · d`
// points. An unconverged run still writes its path and returns
// `Numerical`.
//
// # Safety
// `x0`, `x1` hold `d` values; `out_points` has room for `(n + 1) · d`;
// `out_action` and `converged` are writable.
enum EbmStatus ebm_minimize_action(const struct EbmFamily *fam,
                                   const double *x0,
                                   const double *x1,
                                   uintptr_t n,
                                   double *out_points,
                                   double *out_action,
                                   int *converged);

// Horizontal lift from the frame `e0` (`d × d`; null for the canonical
// frame). Writes `n_points` frames, `d²` values each.
//
// # Safety
// `points` holds `n_points · d` values, `e0` is null or holds `d²`, and
// `out_frames` has room for `n_points · d²`.
enum EbmStatus ebm_horizontal_lift(const struct EbmFamily *fam,
                                   const double *points,
                                   uintptr_t n_points,
                                   const double *e0,
                                   double *out_frames);

// Anti-development from the canonical frame; writes `n_points · d`
// control values.
//
// # Safety
// `points` holds `n_points · d` values and `out_control` has room for as
// many.
enum EbmStatus ebm_antidevelop(const struct EbmFamily *fam,
                               const double *points,
                               uintptr_t n_points,
                               double *out_control);

// Monte Carlo probability that the process stays within `delta` of the
// path on every grid time, with its standard error.
//
// # Safety
// `points` holds `n_points · d` values; `p_hat` and `se` are writable.
enum EbmStatus ebm_tube_probability(const struct EbmFamily *fam,
                                    const double *points,
                                    uintptr_t n_points,
                                    double delta,
                                    double epsilon,
                                    uintptr_t n_samples,
                                    uint64_t seed,
                                    double *p_hat,
                                    double *se);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVOLVEBM_H */
