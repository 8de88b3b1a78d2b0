#ifndef CONCEPT_COHERENCE_H
#define CONCEPT_COHERENCE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CcStatus {
  CC_STATUS_OK = 0,
  CC_STATUS_NULL_POINTER = 1,
  CC_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Input is well-formed but numerically degenerate (zero rows, zero variance, divergence).
   */
  CC_STATUS_DEGENERATE = 3,
  CC_STATUS_INSUFFICIENT_DATA = 4,
  CC_STATUS_INTERNAL = 5,
  CC_STATUS_PANIC = 6,
} CcStatus;

typedef enum CcLinkage {
  CC_LINKAGE_AVERAGE = 0,
  CC_LINKAGE_SINGLE = 1,
  CC_LINKAGE_COMPLETE = 2,
} CcLinkage;

/**
 * n × dims point configuration.
 */
typedef struct CcConfiguration CcConfiguration;

/**
 * Symmetric dissimilarity matrix with a zero diagonal.
 */
typedef struct CcDissimilarity CcDissimilarity;

/**
 * Optimizer settings for [`cc_fit_triplets`]. [`cc_fit_params_default`] fills in the defaults.
 */
typedef struct CcFitParams {
  double mu;
  double learning_rate;
  size_t epochs;
  double holdout_fraction;
} CcFitParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The caller owns
 * the string and releases it with [`cc_string_free`].
 */
char *cc_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void cc_string_free(char *s);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cc_version(void);

struct CcFitParams cc_fit_params_default(void);

/**
 * Builds an `n × n` dissimilarity matrix from row-major `values`.
 *
 * # Safety
 * `values` must point to `n * n` doubles; `out` must be writable.
 */
enum CcStatus cc_dissimilarity_new(const double *values, size_t n, struct CcDissimilarity **out);

/**
 * Cosine dissimilarity between the rows of a row-major binary feature matrix.
 *
 * # Safety
 * `values` must point to `n_concepts * n_features` bytes; `out` must be writable.
 */
enum CcStatus cc_cosine_dissimilarity(const uint8_t *values,
                                      size_t n_concepts,
                                      size_t n_features,
                                      struct CcDissimilarity **out);

/**
 * # Safety
 * `d` must be null or a handle from this library that has not been freed.
 */
void cc_dissimilarity_free(struct CcDissimilarity *d);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `d` must be null or a live handle.
 */
size_t cc_dissimilarity_len(const struct CcDissimilarity *d);

/**
 * Copies the matrix row-major into `buf`, which holds `buf_len` doubles.
 *
 * # Safety
 * `d` must be a live handle; `buf` must be writable for `buf_len` doubles.
 */
enum CcStatus cc_dissimilarity_copy(const struct CcDissimilarity *d, double *buf, size_t buf_len);

/**
 * Builds an `n × dims` configuration from row-major `coords`.
 *
 * # Safety
 * `coords` must point to `n * dims` doubles; `out` must be writable.
 */
enum CcStatus cc_configuration_new(const double *coords,
                                   size_t n,
                                   size_t dims,
                                   struct CcConfiguration **out);

/**
 * # Safety
 * `c` must be null or a handle from this library that has not been freed.
 */
void cc_configuration_free(struct CcConfiguration *c);

/**
 * # Safety
 * `c` must be null or a live handle.
 */
size_t cc_configuration_len(const struct CcConfiguration *c);

/**
 * # Safety
 * `c` must be null or a live handle.
 */
size_t cc_configuration_dims(const struct CcConfiguration *c);

/**
 * Copies the coordinates row-major into `buf`, which holds `buf_len` doubles.
 *
 * # Safety
 * `c` must be a live handle; `buf` must be writable for `buf_len` doubles.
 */
enum CcStatus cc_configuration_copy(const struct CcConfiguration *c, double *buf, size_t buf_len);

/**
 * Classical MDS of `d` into `k` dimensions. Axes with negative eigenvalues come back as zeros.
 *
 * # Safety
 * `d` must be a live handle; `out` must be writable.
 */
enum CcStatus cc_classical_mds(const struct CcDissimilarity *d,
                               size_t k,
                               struct CcConfiguration **out);

/**
 * Pairwise Euclidean distances between the rows of `c`.
 *
 * # Safety
 * `c` must be a live handle; `out` must be writable.
 */
enum CcStatus cc_distance_matrix(const struct CcConfiguration *c, struct CcDissimilarity **out);

/**
 * Squared Procrustes correlation between two configurations with the same row count.
 *
 * # Safety
 * `x` and `y` must be live handles; `out` must be writable.
 */
enum CcStatus cc_procrustes_r2(const struct CcConfiguration *x,
                               const struct CcConfiguration *y,
                               double *out);

/**
 * Permutation p-value for [`cc_procrustes_r2`] over `n_perm` row shuffles of `y`.
 *
 * # Safety
 * `x` and `y` must be live handles; `out` must be writable.
 */
enum CcStatus cc_permutation_test(const struct CcConfiguration *x,
                                  const struct CcConfiguration *y,
                                  size_t n_perm,
                                  uint64_t seed,
                                  double *out);

/**
 * Fits a `dims`-dimensional embedding of `n_concepts` items to `n_triplets`
 * judgments. `triplets` holds `(anchor, option_a, option_b)` index triples
 * back to back; `choices[t]` is 0 when option a was picked and 1 for option b.
 * `params` may be null for the defaults. `holdout_accuracy` may be null.
 *
 * # Safety
 * `triplets` must point to `3 * n_triplets` values, `choices` to `n_triplets`
 * bytes; `out` must be writable.
 */
enum CcStatus cc_fit_triplets(size_t n_concepts,
                              const uint32_t *triplets,
                              const uint8_t *choices,
                              size_t n_triplets,
                              size_t dims,
                              const struct CcFitParams *params,
                              uint64_t seed,
                              struct CcConfiguration **out,
                              double *holdout_accuracy);

/**
 * Agglomerative clustering of `d`, exported as a Newick string with leaves
 * named `c0, c1, ...`. Release the string with [`cc_string_free`].
 *
 * # Safety
 * `d` must be a live handle; `out` must be writable.
 */
enum CcStatus cc_dendrogram_newick(const struct CcDissimilarity *d,
                                   enum CcLinkage linkage,
                                   char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONCEPT_COHERENCE_H */
