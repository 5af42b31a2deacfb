#ifndef RBML_H
#define RBML_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RbmlStatus {
  RbmlStatus_Ok = 0,
  RbmlStatus_NullPointer = 1,
  RbmlStatus_InvalidArgument = 2,
  RbmlStatus_Config = 3,
  RbmlStatus_Numerical = 4,
  RbmlStatus_BufferTooSmall = 5,
  RbmlStatus_Io = 6,
  RbmlStatus_Panic = 7,
} RbmlStatus;

/**
 * Full-order model built from a run configuration.
 */
typedef struct RbmlFom RbmlFom;

/**
 * Adaptive FOM / reduced-basis / ML model.
 */
typedef struct RbmlModel RbmlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty after a success). Valid until the
 * next call into the library from this thread.
 */
const char *rbml_last_error(void);

/**
 * Builds the full-order model described by a JSON run configuration.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RbmlStatus rbml_fom_new(const char *config_json, struct RbmlFom **out);

/**
 * # Safety
 * `fom` must come from [`rbml_fom_new`] and not be used afterwards. Null is ignored.
 */
void rbml_fom_free(struct RbmlFom *fom);

/**
 * # Safety
 * `fom` must be a live handle or null (returns 0).
 */
uintptr_t rbml_fom_param_dim(const struct RbmlFom *fom);

/**
 * Number of time nodes, i.e. the length of every output signal.
 *
 * # Safety
 * `fom` must be a live handle or null (returns 0).
 */
uintptr_t rbml_fom_num_time_nodes(const struct RbmlFom *fom);

/**
 * Number of finite element unknowns.
 *
 * # Safety
 * `fom` must be a live handle or null (returns 0).
 */
uintptr_t rbml_fom_dim(const struct RbmlFom *fom);

/**
 * Full-order output signal at `mu` written to `out[0..num_time_nodes]`.
 *
 * # Safety
 * `mu` must point to `mu_len` doubles and `out` to `out_len` writable doubles.
 */
enum RbmlStatus rbml_fom_eval_output(const struct RbmlFom *fom,
                                     const double *mu,
                                     uintptr_t mu_len,
                                     double *out,
                                     uintptr_t out_len);

/**
 * Creates an adaptive model on a shared full-order model. The tolerance, ML backend,
 * retraining policy and HaPOD settings are read from the JSON run configuration (its
 * `problem` entry is ignored). `epsilon` overrides the configured tolerance when it is
 * nonnegative.
 *
 * # Safety
 * `fom` must be a live handle, `config_json` NUL-terminated and `out` valid.
 */
enum RbmlStatus rbml_model_new(const struct RbmlFom *fom,
                               const char *config_json,
                               double epsilon,
                               struct RbmlModel **out);

/**
 * # Safety
 * `model` must come from [`rbml_model_new`] and not be used afterwards. Null is ignored.
 */
void rbml_model_free(struct RbmlModel *model);

/**
 * Certified output at `mu`. `tier` (optional) receives 0 for ML, 1 for reduced basis and 2
 * for the enrichment step.
 *
 * # Safety
 * `model` must be a live handle not used concurrently; buffers as in
 * [`rbml_fom_eval_output`]; `tier` may be null.
 */
enum RbmlStatus rbml_model_eval_output(struct RbmlModel *model,
                                       const double *mu,
                                       uintptr_t mu_len,
                                       double *out,
                                       uintptr_t out_len,
                                       int32_t *tier);

/**
 * # Safety
 * `model` must be a live handle or null (returns NaN).
 */
double rbml_model_epsilon(const struct RbmlModel *model);

/**
 * Current reduced basis dimension.
 *
 * # Safety
 * `model` must be a live handle or null (returns 0).
 */
uintptr_t rbml_model_basis_dim(const struct RbmlModel *model);

/**
 * Number of queries answered so far.
 *
 * # Safety
 * `model` must be a live handle or null (returns 0).
 */
uintptr_t rbml_model_num_evals(const struct RbmlModel *model);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* RBML_H */
