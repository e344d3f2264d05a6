#ifndef MINSUM_H
#define MINSUM_H

/* Generated by the minsum-ffi build script; edit src/lib.rs instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call. Matches the CLI's exit-code contract.
 */
typedef enum MinsumStatus {
  /**
   * The call succeeded.
   */
  MinsumStatus_Ok = 0,
  /**
   * The input was rejected: malformed JSON, an invalid program, a
   * dimension mismatch, or a null required pointer.
   */
  MinsumStatus_InvalidInput = 1,
  /**
   * The certifier examined the program and refused to certify it.
   */
  MinsumStatus_CertificationRefused = 2,
  /**
   * A numeric failure: degenerate curvature or a solve that stalled.
   */
  MinsumStatus_NumericError = 3,
} MinsumStatus;

/**
 * An immutable convex program. Create with [`minsum_program_from_json`],
 * release with [`minsum_program_free`]. Handles are not synchronized;
 * share one across threads only behind the caller's own lock.
 */
typedef struct MinsumProgram MinsumProgram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on the calling thread, or an empty
 * string when no call has failed yet. The pointer stays valid until the
 * next failing call on the same thread.
 */
const char *minsum_last_error(void);

/**
 * Parse a problem file (JSON) into a program handle.
 *
 * Returns null when the text does not parse or the program is invalid;
 * the reason is available through [`minsum_last_error`].
 *
 * # Safety
 *
 * `json` must be a valid NUL-terminated C string.
 */
struct MinsumProgram *minsum_program_from_json(const char *json);

/**
 * Release a program handle. A null handle is a no-op.
 *
 * # Safety
 *
 * `program` must be null or a pointer previously returned by
 * [`minsum_program_from_json`] that has not been freed.
 */
void minsum_program_free(struct MinsumProgram *program);

/**
 * Number of variables in the program; 0 for a null handle.
 *
 * # Safety
 *
 * `program` must be null or a live handle.
 */
size_t minsum_program_num_vars(const struct MinsumProgram *program);

/**
 * Release a string returned by this library. A null pointer is a no-op.
 *
 * # Safety
 *
 * `s` must be null or a string previously returned through an out
 * parameter of this library that has not been freed.
 */
void minsum_string_free(char *s);

/**
 * Certify scaled diagonal dominance and hand back the certificate as a
 * JSON string in `*out_json` (release it with [`minsum_string_free`]).
 *
 * All-quadratic programs are certified exactly; any other program is
 * sampled over its declared box with `samples` points and must carry a
 * `B`. On refusal the status is `CertificationRefused`, `*out_json` is
 * set to null, and the reason is available through
 * [`minsum_last_error`].
 *
 * # Safety
 *
 * `program` must be a live handle and `out_json` a valid pointer.
 */
enum MinsumStatus minsum_certify(const struct MinsumProgram *program,
                                 size_t samples,
                                 char **out_json);

/**
 * Run the message-passing engine synchronously (the hyperedge engine when
 * the program has hyperedge factors, the quadratic engine otherwise) and
 * write the final estimate into `out_x`.
 *
 * The run stops after `horizon` iterations or once the largest message
 * change falls to `tol`. Optional out parameters may be null: iterations
 * performed, whether the run converged (1/0), and whether estimates ran
 * away (1/0). A diverged run still returns `Ok`; divergence is reported,
 * not raised.
 *
 * # Safety
 *
 * `program` must be a live handle and `out_x` must point to storage for
 * [`minsum_program_num_vars`] doubles.
 */
enum MinsumStatus minsum_solve(const struct MinsumProgram *program,
                               size_t horizon,
                               double tol,
                               double *out_x,
                               size_t *out_iterations,
                               int32_t *out_converged,
                               int32_t *out_diverged);

/**
 * Minimize the program objective by damped Newton from the origin and
 * write the minimizer into `out_x`. A solve that stalls before reaching
 * `tol` returns `NumericError`.
 *
 * # Safety
 *
 * `program` must be a live handle and `out_x` must point to storage for
 * [`minsum_program_num_vars`] doubles; `out_iterations` may be null.
 */
enum MinsumStatus minsum_newton(const struct MinsumProgram *program,
                                double tol,
                                double *out_x,
                                size_t *out_iterations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MINSUM_H */
