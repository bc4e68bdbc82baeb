#ifndef CTMC_EVIDENCE_H
#define CTMC_EVIDENCE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Optimization direction for [`CeConfig::direction`].
 */
typedef enum CeDirection {
  CE_DIRECTION_MAX = 0,
  CE_DIRECTION_MIN = 1,
} CeDirection;

/**
 * Refinement mode for [`CeConfig::mode`].
 */
typedef enum CeMode {
  CE_MODE_GUIDED = 0,
  CE_MODE_FULL = 1,
} CeMode;

/**
 * Result of every fallible call.
 */
typedef enum CeStatus {
  CE_STATUS_OK = 0,
  CE_STATUS_NULL_POINTER = 1,
  CE_STATUS_INVALID_UTF8 = 2,
  CE_STATUS_PARSE = 3,
  CE_STATUS_SEMANTIC = 4,
  CE_STATUS_NUMERIC = 5,
  CE_STATUS_IO = 6,
  CE_STATUS_PANIC = 7,
} CeStatus;

/**
 * Parsed evidence; precise evidence is the special case of point time sets.
 */
typedef struct CeEvidence CeEvidence;

/**
 * Parsed CTMC.
 */
typedef struct CeModel CeModel;

/**
 * State weights bound to the model they were built for.
 */
typedef struct CeWeights CeWeights;

/**
 * Analysis settings. Obtain defaults from [`ce_config_default`].
 */
typedef struct CeConfig {
  double time_limit;
  /**
   * 0 means no cap.
   */
  size_t max_iters;
  /**
   * Negative means no target.
   */
  double width_target;
  double transient_eps;
  double vi_tol;
  enum CeMode mode;
  enum CeDirection direction;
} CeConfig;

/**
 * Final bounds of an analysis run.
 */
typedef struct CeBounds {
  double lower;
  double upper;
  size_t iterations;
  double total_s;
} CeBounds;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 *
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *ce_last_error(void);

/**
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CeStatus ce_model_parse(const char *text_, struct CeModel **out_model);

/**
 * # Safety
 * `model` must come from [`ce_model_parse`] and not be used afterwards. Null is ignored.
 */
void ce_model_free(struct CeModel *model);

/**
 * Number of states, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ce_model_num_states(const struct CeModel *model);

/**
 * Parses an evidence file body and checks it against `model`'s labels.
 *
 * # Safety
 * `model` must be a live handle, `text` NUL-terminated and `out` valid.
 */
enum CeStatus ce_evidence_parse(const struct CeModel *model,
                                const char *text_,
                                struct CeEvidence **out_evidence);

/**
 * # Safety
 * `evidence` must come from [`ce_evidence_parse`] and not be used afterwards. Null is ignored.
 */
void ce_evidence_free(struct CeEvidence *evidence);

/**
 * Weights w(s) = probability of reaching `formula` within `horizon`.
 *
 * # Safety
 * `model` must be a live handle, `formula` NUL-terminated and `out` valid.
 */
enum CeStatus ce_weights_from_property(const struct CeModel *model,
                                       const char *formula,
                                       double horizon,
                                       double transient_eps,
                                       struct CeWeights **out_weights);

/**
 * Explicit weights, one per model state in declaration order.
 *
 * # Safety
 * `values` must point to `len` doubles; `model` must be live and `out` valid.
 */
enum CeStatus ce_weights_from_array(const struct CeModel *model,
                                    const double *values,
                                    size_t len,
                                    struct CeWeights **out_weights);

/**
 * # Safety
 * `weights` must come from a `ce_weights_*` constructor and not be used afterwards. Null is ignored.
 */
void ce_weights_free(struct CeWeights *weights);

struct CeConfig ce_config_default(void);

/**
 * Refines bounds until a stop condition of `config` holds. A null `config` uses defaults.
 *
 * # Safety
 * All handles must be live and built for the same model; `out` must be valid.
 */
enum CeStatus ce_analyze(const struct CeModel *model,
                         const struct CeEvidence *evidence,
                         const struct CeWeights *weights,
                         const struct CeConfig *config,
                         struct CeBounds *out_bounds);

/**
 * Exact conditional weight of precisely timed evidence. Zero-likelihood evidence yields 0.
 *
 * # Safety
 * All handles must be live and built for the same model; `out` must be valid.
 */
enum CeStatus ce_precise(const struct CeModel *model,
                         const struct CeEvidence *evidence,
                         const struct CeWeights *weights,
                         double transient_eps,
                         double *out_value);

/**
 * Probability that the model produces precisely timed evidence.
 *
 * # Safety
 * Handles must be live and built for the same model; `out` must be valid.
 */
enum CeStatus ce_likelihood(const struct CeModel *model,
                            const struct CeEvidence *evidence,
                            double transient_eps,
                            double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTMC_EVIDENCE_H */
