#ifndef SPIKEGRAD_H
#define SPIKEGRAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SG_OK 0

#define SG_ERR_NULL 1

#define SG_ERR_INVALID 2

#define SG_ERR_IO 3

#define SG_ERR_NUMERIC 4

#define SG_ERR_BUFFER 5

#define SG_ERR_PANIC 6

#define SG_ACT_RELU 0

#define SG_ACT_SIGMOID 1

#define SG_ACT_TANH 2

#define SG_ACT_ELU 3

#define SG_ACT_SWISH 4

#define SG_ACT_SOFTPLUS 5

#define SG_SCALING_NTK 0

#define SG_SCALING_MF 1

#define SG_LOSS_MSE 0

#define SG_LOSS_BCE 1

#define SG_LOSS_HINGE 2

typedef struct SgDecomposition SgDecomposition;

typedef struct SgNetwork SgNetwork;

/**
 * A spiked data draw together with its population covariance.
 */
typedef struct SgSample SgSample;

/**
 * Operator norms of the gradient and its pieces.
 */
typedef struct SgComponentNorms {
  double g;
  double s1;
  double s12;
  double s2;
  double e;
  /**
   * `‖G − (S1 + S12 + S2 + E)‖_F / ‖G‖_F`.
   */
  double reconstruction_error;
} SgComponentNorms;

typedef struct SgSpikeEstimate {
  double nu_hat;
  /**
   * NaN when the bulk fit is undetermined.
   */
  double alpha_hat;
  double top_eigenvalue;
} SgSpikeEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t sg_last_error_message(char *buf, size_t len);

/**
 * Draws `X = X_B + ζ z qᵀ` with `ζ = n^ν` and bulk eigenvalues `k^{-α}`.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
int32_t sg_sample_new(size_t n,
                      size_t d,
                      double nu,
                      double alpha,
                      uint64_t seed,
                      struct SgSample **out);

/**
 * # Safety
 * `s` must be null or a handle from `sg_sample_new` not yet freed.
 */
void sg_sample_free(struct SgSample *s);

/**
 * Copies `X` (row-major, `n × d`) into `out`. `written` receives `n·d`.
 *
 * # Safety
 * `s` must be a live handle; `out` valid for `capacity` doubles or null.
 */
int32_t sg_sample_data(const struct SgSample *s, double *out, size_t capacity, size_t *written);

/**
 * # Safety
 * `s` must be a live handle; `n` and `d` valid for writes.
 */
int32_t sg_sample_dims(const struct SgSample *s, size_t *n, size_t *d);

/**
 * Network with unit-norm rows drawn uniformly from the sphere and `a ∈ {±1}^m`.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
int32_t sg_network_new(size_t m,
                       size_t d,
                       int32_t activation_code,
                       int32_t scaling_code,
                       uint64_t seed,
                       struct SgNetwork **out);

/**
 * # Safety
 * `net` must be null or a handle from `sg_network_new` not yet freed.
 */
void sg_network_free(struct SgNetwork *net);

/**
 * Gradient decomposition for targets `y` (length `n`). `mu_samples` Monte
 * Carlo draws estimate `μ_j = E σ′(w_jᵀx)` under the sample's covariance.
 *
 * # Safety
 * Handles must be live; `y` valid for `y_len` doubles; `out` for one pointer write.
 */
int32_t sg_decompose(const struct SgNetwork *net,
                     const struct SgSample *sample,
                     const double *y,
                     size_t y_len,
                     int32_t loss_code,
                     size_t mu_samples,
                     uint64_t seed,
                     struct SgDecomposition **out);

/**
 * # Safety
 * `dec` must be null or a handle from `sg_decompose` not yet freed.
 */
void sg_decomposition_free(struct SgDecomposition *dec);

/**
 * # Safety
 * `dec` must be a live handle and `out` valid for one write.
 */
int32_t sg_component_norms(const struct SgDecomposition *dec, struct SgComponentNorms *out);

/**
 * Singular values of the decomposition's `G`, descending.
 *
 * # Safety
 * `dec` must be a live handle; `out` valid for `capacity` doubles or null.
 */
int32_t sg_gradient_singular_values(const struct SgDecomposition *dec,
                                    double *out,
                                    size_t capacity,
                                    size_t *written);

/**
 * Singular values of a row-major `rows × cols` matrix, descending.
 *
 * # Safety
 * `data` valid for `rows·cols` doubles; `out` valid for `capacity` doubles or null.
 */
int32_t sg_singular_values(const double *data,
                           size_t rows,
                           size_t cols,
                           double *out,
                           size_t capacity,
                           size_t *written);

/**
 * Spike-exponent estimate for a row-major `n × d` matrix, centred by column first.
 *
 * # Safety
 * `data` valid for `n·d` doubles; `out` valid for one write.
 */
int32_t sg_estimate_spike_exponent(const double *data,
                                   size_t n,
                                   size_t d,
                                   struct SgSpikeEstimate *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SPIKEGRAD_H */
