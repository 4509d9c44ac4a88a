#ifndef FIMLAB_H
#define FIMLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum FimStatus {
  FIM_STATUS_OK = 0,
  FIM_STATUS_NULL_POINTER = 1,
  FIM_STATUS_INVALID_INPUT = 2,
  FIM_STATUS_DIMENSION_MISMATCH = 3,
  FIM_STATUS_NOT_POSITIVE_DEFINITE = 4,
  FIM_STATUS_NON_FINITE = 5,
  FIM_STATUS_SOLVER_FAILED = 6,
  FIM_STATUS_UNSUPPORTED = 7,
  FIM_STATUS_CONFIG_ERROR = 8,
  FIM_STATUS_STUDY_FAILED = 9,
  FIM_STATUS_IO = 10,
  FIM_STATUS_PANIC = 11,
} FimStatus;

// Output format for [`fimlab_result_render`].
typedef enum FimFormat {
  FIM_FORMAT_CSV = 0,
  FIM_FORMAT_MARKDOWN = 1,
  FIM_FORMAT_JSON = 2,
} FimFormat;

// Opaque model handle.
typedef struct FimModel FimModel;

// Opaque experiment result handle.
typedef struct FimResult FimResult;

// Inputs of the one-iteration SPSA comparison for `p` parameters.
typedef struct FimOneStep {
  // Gradient at `θ0`, `p` doubles.
  const double *grad;
  const double *theta0;
  const double *theta_star;
  uintptr_t p;
  double sigma2;
  double a0_s;
  double a0_b;
  double c0_s;
  double c0_b;
} FimOneStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. Owned by the library;
// valid until the next failing call on the same thread.
const char *fimlab_last_error(void);

// Two-component mixture with known scales, `θ = [λ, μ1, μ2]`.
//
// # Safety
// `out` must be valid for one pointer write.
enum FimStatus fimlab_model_mixture_known(double sigma1, double sigma2, struct FimModel **out);

// Two-component mixture with free scales, `θ = [λ, μ1, σ1, μ2, σ2]`.
//
// # Safety
// `out` must be valid for one pointer write.
enum FimStatus fimlab_model_mixture_free(struct FimModel **out);

// Signal-plus-noise model with diagonal signal covariance and noise
// `√i·UᵀU`; `utu` is a row-major `q·q` positive semidefinite matrix.
//
// # Safety
// `utu` must point to `q·q` doubles and `out` must be valid for one pointer write.
enum FimStatus fimlab_model_spn(const double *utu, uintptr_t q, struct FimModel **out);

// The built-in three-state linear state-space model, `θ = Q` diagonal.
//
// # Safety
// `out` must be valid for one pointer write.
enum FimStatus fimlab_model_statespace_default(struct FimModel **out);

// Poisson with mean `θ`.
//
// # Safety
// `out` must be valid for one pointer write.
enum FimStatus fimlab_model_poisson(struct FimModel **out);

// Releases a model. NULL is ignored.
//
// # Safety
// `model` must come from a `fimlab_model_*` constructor and not be used afterwards.
void fimlab_model_free(struct FimModel *model);

// Parameter dimension `p`, or 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
uintptr_t fimlab_model_dim(const struct FimModel *model);

// Observation dimension `q`, or 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
uintptr_t fimlab_model_obs_dim(const struct FimModel *model);

// Draws `n` observations at `θ` into `out` (`n·q` doubles).
//
// # Safety
// `theta` must hold `p` doubles and `out` must have room for `n·q`.
enum FimStatus fimlab_sample(const struct FimModel *model,
                             const double *theta,
                             uintptr_t n,
                             uint64_t seed,
                             double *out);

// Negative log-likelihood of `n` observations.
//
// # Safety
// `theta` must hold `p` doubles, `data` `n·q` doubles, `out` one double.
enum FimStatus fimlab_neg_log_lik(const struct FimModel *model,
                                  const double *theta,
                                  const double *data,
                                  uintptr_t n,
                                  double *out);

// Observed information per observation `H̄_n(θ)` into `out` (`p·p`).
//
// # Safety
// `theta` must hold `p` doubles, `data` `n·q` doubles, `out` `p·p` doubles.
enum FimStatus fimlab_observed_fim(const struct FimModel *model,
                                   const double *theta,
                                   const double *data,
                                   uintptr_t n,
                                   double *out);

// Closed-form or quadrature `F_n(θ)` into `out` (`p·p`). Returns
// `FIM_STATUS_UNSUPPORTED` for models that only have a Monte Carlo path.
//
// # Safety
// `theta` must hold `p` doubles and `out` `p·p` doubles.
enum FimStatus fimlab_expected_fim(const struct FimModel *model,
                                   const double *theta,
                                   uintptr_t n,
                                   double *out);

// Maximum likelihood estimate into `out_theta` (`p`). `seed` drives the
// stochastic solver where the model uses one.
//
// # Safety
// `data` must hold `n·q` doubles and `out_theta` `p` doubles.
enum FimStatus fimlab_fit_mle(const struct FimModel *model,
                              const double *data,
                              uintptr_t n,
                              uint64_t seed,
                              double *out_theta);

// `‖est − ref‖ / ‖ref‖` in the spectral norm for `p·p` row-major matrices.
//
// # Safety
// `est` and `reference` must hold `p·p` doubles, `out` one double.
enum FimStatus fimlab_relative_error(const double *est,
                                     const double *reference,
                                     uintptr_t p,
                                     double *out);

// Left side of the one-iteration superiority condition; negative means the
// segmented uniform perturbation gives the smaller MSE.
//
// # Safety
// The pointers in `inputs` must each hold `p` doubles.
enum FimStatus fimlab_spsa_one_step_lhs(const struct FimOneStep *inputs, double *out);

// Runs an experiment from a JSON config (the CLI format) on `threads` workers.
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` valid for one pointer write.
enum FimStatus fimlab_experiment_run(const char *config_json,
                                     uintptr_t threads,
                                     struct FimResult **out);

// Renders a result as a newly allocated string; release it with [`fimlab_string_free`].
//
// # Safety
// `result` must be a live handle and `out` valid for one pointer write.
enum FimStatus fimlab_result_render(const struct FimResult *result,
                                    enum FimFormat format,
                                    char **out);

// Number of data rows in a result, or 0 for NULL.
//
// # Safety
// `result` must be NULL or a live handle.
uintptr_t fimlab_result_rows(const struct FimResult *result);

// Releases a result. NULL is ignored.
//
// # Safety
// `result` must come from [`fimlab_experiment_run`] and not be used afterwards.
void fimlab_result_free(struct FimResult *result);

// Releases a string returned by the library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void fimlab_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FIMLAB_H */
