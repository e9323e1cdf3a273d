#ifndef MMFIT_H
#define MMFIT_H

/* Generated by cbindgen from the mmfit-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status of a C API call.
typedef enum MmfitStatus {
  MMFIT_STATUS_OK = 0,
  MMFIT_STATUS_NULL_POINTER = 1,
  MMFIT_STATUS_INVALID_UTF8 = 2,
  // Input text could not be parsed.
  MMFIT_STATUS_PARSE = 3,
  // Inputs parsed but violate a model or dimension requirement.
  MMFIT_STATUS_VALIDATION = 4,
  // The requested statistic lies outside the feasible set.
  MMFIT_STATUS_FEASIBILITY = 5,
  // An iterative solver failed to converge.
  MMFIT_STATUS_CONVERGENCE = 6,
  // A size guard rejected the problem.
  MMFIT_STATUS_SIZE_GUARD = 7,
  MMFIT_STATUS_INTERNAL = 8,
} MmfitStatus;

// Opaque handle to a validated design matrix.
typedef struct MmfitDesign MmfitDesign;

// Opaque handle to a fitted curved model.
typedef struct MmfitFit MmfitFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Returns the last error message on this thread as a newly allocated
// string, or NULL if none; free with [`mmfit_string_free`].
char *mmfit_last_error_message(void);

// Frees a string returned by this library. NULL is accepted.
//
// # Safety
// `s` must have been returned by a function of this library and not freed
// before.
void mmfit_string_free(char *s);

// Parses and validates a design matrix from CSV text (rows of 0/1 entries).
//
// # Safety
// `text` must be a valid NUL-terminated string and `out` a valid pointer.
enum MmfitStatus mmfit_design_parse_csv(const char *text, struct MmfitDesign **out);

// Builds and validates a design matrix from a row-major buffer.
//
// # Safety
// `data` must point to `rows * cols` doubles; `out` must be valid.
enum MmfitStatus mmfit_design_new(uintptr_t rows,
                                  uintptr_t cols,
                                  const double *data,
                                  struct MmfitDesign **out);

// Number of cells (rows); 0 on NULL.
//
// # Safety
// The handle must be NULL or a live pointer from this library.
uintptr_t mmfit_design_rows(const struct MmfitDesign *design);

// Number of parameters (columns); 0 on NULL.
//
// # Safety
// The handle must be NULL or a live pointer from this library.
uintptr_t mmfit_design_cols(const struct MmfitDesign *design);

// Frees a design handle. NULL is accepted.
//
// # Safety
// `design` must come from this library and not be freed twice.
void mmfit_design_free(struct MmfitDesign *design);

// Fits the curved model to counts. `use_bisection` selects the primal
// bisection fitter; 0 selects the outer Newton iteration.
//
// # Safety
// `counts` must point to `len` unsigned 64-bit integers; `design` and
// `out` must be valid.
enum MmfitStatus mmfit_fit_curved(const struct MmfitDesign *design,
                                  const uint64_t *counts,
                                  uintptr_t len,
                                  int32_t use_bisection,
                                  struct MmfitFit **out);

// Frees a fit handle. NULL is accepted.
//
// # Safety
// `fit` must come from this library and not be freed twice.
void mmfit_fit_free(struct MmfitFit *fit);

// Adjustment factor of the fit; NaN on NULL.
//
// # Safety
// The handle must be NULL or a live pointer from this library.
double mmfit_fit_gamma(const struct MmfitFit *fit);

// Lagrange multiplier of the normalization constraint; NaN on NULL.
//
// # Safety
// The handle must be NULL or a live pointer from this library.
double mmfit_fit_alpha(const struct MmfitFit *fit);

// Log-likelihood at the fit; NaN on NULL.
//
// # Safety
// The handle must be NULL or a live pointer from this library.
double mmfit_fit_loglik(const struct MmfitFit *fit);

// Number of cells in the fitted probability vector; 0 on NULL.
//
// # Safety
// The handle must be NULL or a live pointer from this library.
uintptr_t mmfit_fit_cells(const struct MmfitFit *fit);

// Number of log-linear parameters; 0 on NULL.
//
// # Safety
// The handle must be NULL or a live pointer from this library.
uintptr_t mmfit_fit_params(const struct MmfitFit *fit);

// `n` of the fitted data; 0 on NULL.
//
// # Safety
// The handle must be NULL or a live pointer from this library.
uint64_t mmfit_fit_n(const struct MmfitFit *fit);

// Copies the fitted probability vector into `buf` (`len` must equal the
// cell count).
//
// # Safety
// `buf` must point to `len` writable doubles.
enum MmfitStatus mmfit_fit_pi(const struct MmfitFit *fit, double *buf, uintptr_t len);

// Copies the fitted log-linear parameters into `buf` (`len` must equal the
// parameter count).
//
// # Safety
// `buf` must point to `len` writable doubles.
enum MmfitStatus mmfit_fit_theta(const struct MmfitFit *fit, double *buf, uintptr_t len);

// Computes the feasible range of the adjustment factor for the fitted
// statistic, writing the endpoints to `out_lower` and `out_upper`.
//
// # Safety
// All pointers must be valid.
enum MmfitStatus mmfit_fit_feasible_range(const struct MmfitFit *fit,
                                          double *out_lower,
                                          double *out_upper);

// Runs the full test battery at the given confidence level and returns the
// report as a JSON string (free with [`mmfit_string_free`]).
//
// # Safety
// `counts` must point to `len` unsigned 64-bit integers; `design` and
// `out_json` must be valid.
enum MmfitStatus mmfit_test_report_json(const struct MmfitDesign *design,
                                        const uint64_t *counts,
                                        uintptr_t len,
                                        double level,
                                        char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMFIT_H */
