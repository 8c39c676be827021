#ifndef SEMIHEAT_H
#define SEMIHEAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SemiheatStatus {
  SEMIHEAT_STATUS_OK = 0,
  SEMIHEAT_STATUS_NULL_POINTER = 1,
  SEMIHEAT_STATUS_INVALID_UTF8 = 2,
  SEMIHEAT_STATUS_DOMAIN = 3,
  SEMIHEAT_STATUS_SPEC = 4,
  SEMIHEAT_STATUS_DIVERGENT = 5,
  SEMIHEAT_STATUS_OVERFLOW = 6,
  SEMIHEAT_STATUS_BRACKET = 7,
  SEMIHEAT_STATUS_NON_CONVERGENCE = 8,
  SEMIHEAT_STATUS_STABILITY = 9,
  SEMIHEAT_STATUS_STEP_UNDERFLOW = 10,
  SEMIHEAT_STATUS_OUT_OF_RANGE = 11,
  SEMIHEAT_STATUS_INSUFFICIENT_OVERLAP = 12,
  SEMIHEAT_STATUS_INDISTINGUISHABLE = 13,
  SEMIHEAT_STATUS_RESOLUTION_EXHAUSTED = 14,
  SEMIHEAT_STATUS_FIT_DEGENERATE = 15,
  SEMIHEAT_STATUS_DISCRETIZATION = 16,
  SEMIHEAT_STATUS_IO = 17,
  SEMIHEAT_STATUS_BUFFER_TOO_SMALL = 18,
  SEMIHEAT_STATUS_PANIC = 19,
} SemiheatStatus;

// Blow-up verdict codes returned by [`semiheat_run_classify`].
typedef enum SemiheatVerdict {
  SEMIHEAT_VERDICT_GLOBAL_BOUNDED = 0,
  SEMIHEAT_VERDICT_TYPE_I = 1,
  SEMIHEAT_VERDICT_TYPE_II_SUSPECT = 2,
  SEMIHEAT_VERDICT_INCONCLUSIVE = 3,
} SemiheatVerdict;

// Opaque nonlinearity handle.
typedef struct SemiheatNonlinearity SemiheatNonlinearity;

// Opaque radial profile handle.
typedef struct SemiheatProfile SemiheatProfile;

// Opaque PDE run handle.
typedef struct SemiheatRun SemiheatRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Static, NUL-terminated name of a status code.
const char *semiheat_status_name(enum SemiheatStatus status);

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t semiheat_last_error(char *buf, size_t len);

// `p_S, p_JL, q_S, q_JL` for dimension `n` written to `out[0..4]`
// (infinity encodes an infinite exponent).
//
// # Safety
// `out` must point to 4 writable doubles.
enum SemiheatStatus semiheat_critical_exponents(uint32_t n, double *out);

// Parses a nonlinearity spec such as `"power:p=3"` or `"exp"`.
//
// # Safety
// `spec` must be a NUL-terminated string and `out` a valid pointer.
enum SemiheatStatus semiheat_nonlinearity_new(const char *spec,
                                              struct SemiheatNonlinearity **out_nl);

// # Safety
// `nl` must be null or a handle from [`semiheat_nonlinearity_new`].
void semiheat_nonlinearity_free(struct SemiheatNonlinearity *nl);

// # Safety
// `nl` must be a valid handle and `value` a valid pointer.
enum SemiheatStatus semiheat_f(const struct SemiheatNonlinearity *nl, double u, double *value);

// `F(u) = ∫_u^∞ dη / f(η)`.
//
// # Safety
// `nl` must be a valid handle and `value` a valid pointer.
enum SemiheatStatus semiheat_transform(const struct SemiheatNonlinearity *nl,
                                       double u,
                                       double tol,
                                       double *value);

// `F⁻¹(v)`.
//
// # Safety
// `nl` must be a valid handle and `value` a valid pointer.
enum SemiheatStatus semiheat_transform_inverse(const struct SemiheatNonlinearity *nl,
                                               double v,
                                               double tol,
                                               double *value);

// Numerical estimate of `lim f'(u) F(u)` on a grid up to `u_max`.
//
// # Safety
// `nl` must be a valid handle and `q` a valid pointer.
enum SemiheatStatus semiheat_estimate_q(const struct SemiheatNonlinearity *nl,
                                        double u_max,
                                        double tol,
                                        double *q);

// Regular steady state with center value `alpha` on `[0, r_max]`. The
// profile may end before `r_max` if it leaves the admissible range.
//
// # Safety
// `nl` must be a valid handle and `out_profile` a valid pointer.
enum SemiheatStatus semiheat_shoot_regular(const struct SemiheatNonlinearity *nl,
                                           uint32_t n,
                                           double alpha,
                                           double r_max,
                                           struct SemiheatProfile **out_profile);

// # Safety
// `p` must be null or a profile handle.
void semiheat_profile_free(struct SemiheatProfile *p);

// Number of samples in the profile.
//
// # Safety
// `p` must be a valid handle and `len` a valid pointer.
enum SemiheatStatus semiheat_profile_len(const struct SemiheatProfile *p, size_t *len);

// Copies radii and values into caller buffers of capacity `cap`.
//
// # Safety
// `r` and `values` must each point to `cap` writable doubles.
enum SemiheatStatus semiheat_profile_copy(const struct SemiheatProfile *p,
                                          double *r,
                                          double *values,
                                          size_t cap);

// # Safety
// `p` must be a valid handle and `value` a valid pointer.
enum SemiheatStatus semiheat_profile_eval(const struct SemiheatProfile *p, double r, double *value);

// Number of sign changes of `a - b` on `(lo, hi]`.
//
// # Safety
// `a`, `b` must be valid handles and `count` a valid pointer.
enum SemiheatStatus semiheat_count_intersections(const struct SemiheatProfile *a,
                                                 const struct SemiheatProfile *b,
                                                 double lo,
                                                 double hi,
                                                 size_t *count);

// Runs the PDE described by an INI or JSON configuration text.
//
// # Safety
// `config` must be a NUL-terminated string and `out_run` a valid pointer.
enum SemiheatStatus semiheat_simulate(const char *config, struct SemiheatRun **out_run);

// # Safety
// `run` must be null or a run handle.
void semiheat_run_free(struct SemiheatRun *run);

// Snapshot count, final time and final maximum of a run.
//
// # Safety
// `run` must be a valid handle; output pointers must be valid.
enum SemiheatStatus semiheat_run_summary(const struct SemiheatRun *run,
                                         size_t *snapshots,
                                         double *final_time,
                                         double *final_max);

// Estimated blow-up time from the final `F(M)`-decade.
//
// # Safety
// `run` must be a valid handle and `t_est` a valid pointer.
enum SemiheatStatus semiheat_run_blowup_time(const struct SemiheatRun *run, double *t_est);

// Verdict with default classification thresholds.
//
// # Safety
// `run` must be a valid handle and `verdict` a valid pointer.
enum SemiheatStatus semiheat_run_classify(const struct SemiheatRun *run,
                                          enum SemiheatVerdict *verdict);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMIHEAT_H */
