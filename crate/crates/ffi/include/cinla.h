/* C ABI for the cinla latent-Gaussian-model inference engine. */

#ifndef CINLA_H
#define CINLA_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum CinlaStatus {
  CINLA_STATUS_OK = 0,
  CINLA_STATUS_NULL_POINTER = 1,
  CINLA_STATUS_INVALID_UTF8 = 2,
  CINLA_STATUS_INVALID_ARGUMENT = 3,
  CINLA_STATUS_FIT_FAILED = 4,
  CINLA_STATUS_NOT_FOUND = 5,
} CinlaStatus;

/**
 * Correction variants selectable over the ABI.
 */
typedef enum CinlaCorrection {
  CINLA_CORRECTION_NONE = 0,
  CINLA_CORRECTION_MEAN_ONLY = 1,
  CINLA_CORRECTION_MEAN_AND_SKEW = 2,
} CinlaCorrection;

/**
 * Opaque fit handle holding the explored hyperparameter posterior.
 */
typedef struct CinlaFit CinlaFit;

/**
 * Opaque model handle.
 */
typedef struct CinlaModel CinlaModel;

/**
 * Opaque handle over MCMC output.
 */
typedef struct CinlaSamples CinlaSamples;

/**
 * Posterior summary of one parameter, mirrored across the ABI.
 */
typedef struct CinlaSummary {
  double mean;
  double sd;
  double q025;
  double q50;
  double q975;
} CinlaSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for the calling thread; valid until the next failing
 * call on the same thread. Never `NULL`.
 */
const char *cinla_last_error(void);

/**
 * Library version as a static C string.
 */
const char *cinla_version(void);

/**
 * Parses a model configuration (JSON, same schema as the CLI) into a model
 * handle.
 *
 * # Safety
 * `json` must be a NUL-terminated C string and `out` a valid pointer.
 */
enum CinlaStatus cinla_model_from_json(const char *json, struct CinlaModel **out);

/**
 * Number of latent variables.
 *
 * # Safety
 * `model` must be a live handle from [`cinla_model_from_json`].
 */
enum CinlaStatus cinla_model_n_latent(const struct CinlaModel *model, size_t *out);

/**
 * Number of hyperparameters.
 *
 * # Safety
 * `model` must be a live handle from [`cinla_model_from_json`].
 */
enum CinlaStatus cinla_model_n_hyper(const struct CinlaModel *model, size_t *out);

/**
 * # Safety
 * `model` must come from [`cinla_model_from_json`] and not be freed twice.
 */
void cinla_model_free(struct CinlaModel *model);

/**
 * Runs the Laplace pipeline with the requested correction.
 *
 * # Safety
 * `model` must be live, `y` must point to `n_y` doubles, `out` must be valid.
 */
enum CinlaStatus cinla_fit(const struct CinlaModel *model,
                           const double *y,
                           size_t n_y,
                           enum CinlaCorrection correction,
                           double xi,
                           struct CinlaFit **out);

/**
 * Posterior summary of a named parameter (`beta_0`, `theta_0`, `sigma2_0`,
 * `sigma_0`, ...).
 *
 * # Safety
 * `fit` must be live, `name` NUL-terminated, `out` valid.
 */
enum CinlaStatus cinla_fit_summary(const struct CinlaFit *fit,
                                   const char *name,
                                   struct CinlaSummary *out);

/**
 * Copies the marginal density of hyperparameter `axis` into caller-owned
 * buffers of capacity `cap`; `written` receives the point count. Call with
 * `cap = 0` to query the required size.
 *
 * # Safety
 * `fit` must be live; `xs`/`ys` must hold `cap` doubles when `cap > 0`.
 */
enum CinlaStatus cinla_fit_hyper_marginal(const struct CinlaFit *fit,
                                          size_t axis,
                                          double *xs,
                                          double *ys,
                                          size_t cap,
                                          size_t *written);

/**
 * # Safety
 * `fit` must come from [`cinla_fit`] and not be freed twice.
 */
void cinla_fit_free(struct CinlaFit *fit);

/**
 * Runs the MCMC oracle.
 *
 * # Safety
 * `model` must be live, `y` must point to `n_y` doubles, `out` valid.
 */
enum CinlaStatus cinla_mcmc(const struct CinlaModel *model,
                            const double *y,
                            size_t n_y,
                            size_t n_iter,
                            size_t burn_in,
                            size_t thin,
                            size_t n_chains,
                            uint64_t seed,
                            struct CinlaSamples **out);

/**
 * Posterior summary of a named parameter from the MCMC run.
 *
 * # Safety
 * `samples` must be live, `name` NUL-terminated, `out` valid.
 */
enum CinlaStatus cinla_samples_summary(const struct CinlaSamples *samples,
                                       const char *name,
                                       struct CinlaSummary *out);

/**
 * Number of stored draws for a named parameter (pooled across chains).
 *
 * # Safety
 * `samples` must be live, `name` NUL-terminated, `out` valid.
 */
enum CinlaStatus cinla_samples_len(const struct CinlaSamples *samples,
                                   const char *name,
                                   size_t *out);

/**
 * # Safety
 * `samples` must come from [`cinla_mcmc`] and not be freed twice.
 */
void cinla_samples_free(struct CinlaSamples *samples);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CINLA_H */
