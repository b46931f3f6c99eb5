#ifndef GLMSPARSE_H
#define GLMSPARSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum GlmStatus {
  GLM_STATUS_OK = 0,
  GLM_STATUS_NULL_POINTER = 1,
  GLM_STATUS_INVALID_PARAMETER = 2,
  GLM_STATUS_DEGENERATE_RANGE = 3,
  GLM_STATUS_IO = 4,
  GLM_STATUS_PARSE = 5,
  GLM_STATUS_DIMENSION_MISMATCH = 6,
  GLM_STATUS_NUMERICAL = 7,
  GLM_STATUS_BUFFER_TOO_SMALL = 8,
  GLM_STATUS_PANIC = 9,
  GLM_STATUS_INTERNAL = 10,
} GlmStatus;

/**
 * Opaque loss family bound to a row count.
 */
typedef struct GlmFamily GlmFamily;

/**
 * Opaque design matrix.
 */
typedef struct GlmMatrix GlmMatrix;

/**
 * Opaque sparsifier.
 */
typedef struct GlmSparsifier GlmSparsifier;

/**
 * Leading-order cost model.
 */
typedef struct GlmBudget {
  double quantum_leading;
  double dense_linear_algebra;
  double sparse_gram;
  double quantum_total;
  double classical;
  double scale_factor;
} GlmBudget;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into the library on the same thread.
 */
const char *glm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *glm_version(void);

/**
 * Releases a string returned by the library.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void glm_string_free(char *s);

/**
 * Loads a matrix file. `format`: 0 infers from the extension, 1 Matrix
 * Market, 2 CSV.
 *
 * # Safety
 * `path` must be a valid C string and `out` a writable pointer.
 */
enum GlmStatus glm_matrix_load(const char *path, uint32_t format, struct GlmMatrix **out);

/**
 * Builds a matrix from a row-major dense buffer of `rows * cols` values.
 *
 * # Safety
 * `data` must point to `rows * cols` readable doubles.
 */
enum GlmStatus glm_matrix_from_dense(const double *data,
                                     size_t rows,
                                     size_t cols,
                                     struct GlmMatrix **out);

/**
 * Writes the matrix dimensions.
 *
 * # Safety
 * `matrix` must be a live handle; `rows` and `cols` writable.
 */
enum GlmStatus glm_matrix_shape(const struct GlmMatrix *matrix, size_t *rows, size_t *cols);

/**
 * # Safety
 * `matrix` must be null or a live handle from this library.
 */
void glm_matrix_free(struct GlmMatrix *matrix);

/**
 * Creates a uniform family over `m` rows. `kind` is one of `quadratic`,
 * `absolute`, `ell_p`, `gamma_p`, `huber`; `p` is ignored (pass NaN) for
 * kinds without an exponent.
 *
 * # Safety
 * `kind` must be a valid C string and `out` writable.
 */
enum GlmStatus glm_family_create(const char *kind, double p, size_t m, struct GlmFamily **out);

/**
 * Creates a family from its JSON description (with optional per-index
 * overrides).
 *
 * # Safety
 * `json` must be a valid C string and `out` writable.
 */
enum GlmStatus glm_family_from_json(const char *json, size_t m, struct GlmFamily **out);

/**
 * # Safety
 * `family` must be null or a live handle from this library.
 */
void glm_family_free(struct GlmFamily *family);

/**
 * Builds a sparsifier valid on `[s_min, s_max]` with accuracy `eps`.
 *
 * # Safety
 * `matrix` and `family` must be live handles; `out` writable.
 */
enum GlmStatus glm_sparsify(const struct GlmMatrix *matrix,
                            const struct GlmFamily *family,
                            double eps,
                            double s_min,
                            double s_max,
                            uint64_t seed,
                            struct GlmSparsifier **out);

/**
 * Number of distinct rows kept; 0 for a null handle.
 *
 * # Safety
 * `sp` must be null or a live handle.
 */
size_t glm_sparsifier_len(const struct GlmSparsifier *sp);

/**
 * Number of samples drawn; 0 for a null handle.
 *
 * # Safety
 * `sp` must be null or a live handle.
 */
size_t glm_sparsifier_samples(const struct GlmSparsifier *sp);

/**
 * Copies row indices and weights into caller buffers of length `capacity`.
 * Fails with `BufferTooSmall` when `capacity < glm_sparsifier_len(sp)`.
 *
 * # Safety
 * `indices` and `weights` must point to `capacity` writable elements.
 */
enum GlmStatus glm_sparsifier_copy(const struct GlmSparsifier *sp,
                                   size_t *indices,
                                   double *weights,
                                   size_t capacity);

/**
 * Serializes the sparsifier to JSON; release the result with
 * [`glm_string_free`].
 *
 * # Safety
 * `sp` must be a live handle and `out` writable.
 */
enum GlmStatus glm_sparsifier_to_json(const struct GlmSparsifier *sp, char **out);

/**
 * Parses a sparsifier from JSON.
 *
 * # Safety
 * `json` must be a valid C string and `out` writable.
 */
enum GlmStatus glm_sparsifier_from_json(const char *json, struct GlmSparsifier **out);

/**
 * Compares the sparsified and full objectives on `points` random in-range
 * points. Either output pointer may be null.
 *
 * # Safety
 * All handles must be live.
 */
enum GlmStatus glm_sparsifier_validate(const struct GlmMatrix *matrix,
                                       const struct GlmFamily *family,
                                       const struct GlmSparsifier *sp,
                                       size_t points,
                                       uint64_t seed,
                                       double *max_relative_error,
                                       double *violation_fraction);

/**
 * # Safety
 * `sp` must be null or a live handle from this library.
 */
void glm_sparsifier_free(struct GlmSparsifier *sp);

/**
 * Evaluates the cost model for an `m x n` matrix with at most `r` nonzeros
 * per row.
 *
 * # Safety
 * `out` must be writable.
 */
enum GlmStatus glm_budget(double m,
                          double n,
                          double r,
                          double eps,
                          double scale_ratio,
                          struct GlmBudget *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLMSPARSE_H */
