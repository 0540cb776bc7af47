#ifndef LSBO_H
#define LSBO_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LsboStatus {
  LSBO_STATUS_OK = 0,
  LSBO_STATUS_NULL_POINTER = 1,
  LSBO_STATUS_INVALID_ARGUMENT = 2,
  LSBO_STATUS_IO = 3,
  LSBO_STATUS_FORMAT = 4,
  LSBO_STATUS_NUMERICAL = 5,
  LSBO_STATUS_PANIC = 6,
} LsboStatus;

// A fitted GP surrogate.
typedef struct LsboGp LsboGp;

// A trained VAE.
typedef struct LsboModel LsboModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t lsbo_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *lsbo_version(void);

// Load a model checkpoint written by the `lsbo` CLI.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum LsboStatus lsbo_model_load(const char *path, struct LsboModel **out);

// # Safety
// `model` must come from [`lsbo_model_load`] and not be used afterwards.
void lsbo_model_free(struct LsboModel *model);

// Latent dimension, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t lsbo_model_latent_dim(const struct LsboModel *model);

// Input dimension, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t lsbo_model_input_dim(const struct LsboModel *model);

// Encoder mean of one input.
//
// # Safety
// Pointers must be valid for the given lengths.
enum LsboStatus lsbo_model_encode(const struct LsboModel *model,
                                  const double *x,
                                  size_t x_len,
                                  double *z_out,
                                  size_t z_len);

// Decoder mean of one latent.
//
// # Safety
// Pointers must be valid for the given lengths.
enum LsboStatus lsbo_model_decode(const struct LsboModel *model,
                                  const double *z,
                                  size_t z_len,
                                  double *x_out,
                                  size_t x_len);

// Latent consistency loss `‖z − enc(dec(z))‖²`.
//
// # Safety
// Pointers must be valid for the given lengths.
enum LsboStatus lsbo_model_lcl(const struct LsboModel *model,
                               const double *z,
                               size_t z_len,
                               double *out);

// Cycle `z` with burn-in `burn_in` over `cycles` iterations and write the
// consistent point. `converged` may be null.
//
// # Safety
// Pointers must be valid for the given lengths.
enum LsboStatus lsbo_model_consistent_point(const struct LsboModel *model,
                                            const double *z,
                                            size_t z_len,
                                            size_t burn_in,
                                            size_t cycles,
                                            double tolerance,
                                            double *z_out,
                                            bool *converged);

// GP with fixed hyperparameters on `n` row-major latents of width `dim`.
//
// # Safety
// `z` must hold `n * dim` values, `y` `n` values; `out` must be valid.
enum LsboStatus lsbo_gp_with_hyper(const double *z,
                                   const double *y,
                                   size_t n,
                                   size_t dim,
                                   double signal_var,
                                   double lengthscale,
                                   double noise_var,
                                   struct LsboGp **out);

// GP with hyperparameters fitted by marginal likelihood.
//
// # Safety
// `z` must hold `n * dim` values, `y` `n` values; `out` must be valid.
enum LsboStatus lsbo_gp_fit(const double *z,
                            const double *y,
                            size_t n,
                            size_t dim,
                            uint64_t seed,
                            struct LsboGp **out);

// # Safety
// `gp` must come from a `lsbo_gp_*` constructor and not be used afterwards.
void lsbo_gp_free(struct LsboGp *gp);

// Posterior mean and variance (noise included) at one latent.
//
// # Safety
// Pointers must be valid for the given lengths.
enum LsboStatus lsbo_gp_predict(const struct LsboGp *gp,
                                const double *z,
                                size_t z_len,
                                double *mean,
                                double *variance);

// Hyperparameters as `[signal_var, lengthscale, noise_var]`.
//
// # Safety
// `out` must point to 3 writable doubles.
enum LsboStatus lsbo_gp_hyper(const struct LsboGp *gp, double *out);

// Log marginal likelihood of the (standardized) training targets.
//
// # Safety
// Pointers must be valid.
enum LsboStatus lsbo_gp_log_marginal_likelihood(const struct LsboGp *gp, double *out);

double lsbo_ucb(double mean, double variance, double kappa);

double lsbo_ei(double mean, double variance, double y_best, double xi);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LSBO_H */
