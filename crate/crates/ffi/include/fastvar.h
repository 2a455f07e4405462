#ifndef FASTVAR_H
#define FASTVAR_H

/* Generated from the fastvar-ffi crate; regenerate with cargo build, do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. `FV_STATUS_OK` is zero.
 */
typedef enum FvStatus {
  FV_STATUS_OK = 0,
  FV_STATUS_SHAPE = 1,
  FV_STATUS_INVALID_ARGUMENT = 2,
  FV_STATUS_STATE = 3,
  FV_STATUS_PARSE = 4,
  FV_STATUS_CONFIG = 5,
  FV_STATUS_IO = 6,
  FV_STATUS_NULL_POINTER = 7,
  FV_STATUS_INTERNAL = 8,
} FvStatus;

/**
 * Spatial resampling convention used between scale steps.
 */
typedef enum FvResizeMode {
  FV_RESIZE_MODE_NEAREST = 0,
  FV_RESIZE_MODE_BILINEAR = 1,
} FvResizeMode;

/**
 * Opaque token map.
 */
typedef struct FvMap FvMap;

/**
 * Opaque per-run metrics.
 */
typedef struct FvMetrics FvMetrics;

/**
 * Opaque weight bundle.
 */
typedef struct FvModel FvModel;

/**
 * Opaque scale schedule.
 */
typedef struct FvSchedule FvSchedule;

/**
 * One decode step's accounting row, mirrored from the metrics report.
 */
typedef struct FvStepMetrics {
  size_t step;
  size_t h;
  size_t w;
  size_t forwarded_tokens;
  size_t kv_total;
  uint64_t est_flops;
  uint64_t wall_ns;
  bool skipped;
} FvStepMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static, nul-terminated string.
 */
const char *fv_version(void);

/**
 * Message for the most recent failing call on this thread, empty if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *fv_last_error(void);

/**
 * Builds a model from its hyperparameters and the weight seed.
 *
 * # Safety
 * `out` must be a valid pointer to a `FvModel*` slot.
 */
enum FvStatus fv_model_new(size_t depth,
                           size_t d,
                           size_t heads,
                           size_t d_ff,
                           size_t vocab,
                           uint64_t weight_seed,
                           float temperature,
                           struct FvModel **out);

/**
 * Releases a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a pointer returned by `fv_model_new` that has
 * not been freed already.
 */
void fv_model_free(struct FvModel *model);

/**
 * Builds a square-scale schedule. `sides` lists the per-step side lengths;
 * the final `n_texture` steps form the pruning stage. `ratios` may be null
 * with `ratio_count` 0 to leave every ratio at zero; otherwise it must
 * hold `n_texture` non-decreasing values in [0, 1]. `cache_step` 0 picks
 * the default (the last step before the texture stage).
 *
 * # Safety
 * `sides` must point to `side_count` values, `ratios` to `ratio_count`
 * values (or be null with count 0), and `out` to a `FvSchedule*` slot.
 */
enum FvStatus fv_schedule_new(const uint32_t *sides,
                              size_t side_count,
                              size_t n_texture,
                              const float *ratios,
                              size_t ratio_count,
                              size_t cache_step,
                              enum FvResizeMode mode,
                              struct FvSchedule **out);

/**
 * Releases a schedule handle. Null is a no-op.
 *
 * # Safety
 * `sched` must be null or an unfreed pointer from `fv_schedule_new`.
 */
void fv_schedule_free(struct FvSchedule *sched);

/**
 * Runs the full decode loop and returns the final map, plus per-step
 * metrics when `out_metrics` is non-null. `pruning` false ignores the
 * schedule's ratios.
 *
 * # Safety
 * `model` and `sched` must be valid unfreed handles, `out_map` a valid
 * `FvMap*` slot, and `out_metrics` null or a valid `FvMetrics*` slot.
 */
enum FvStatus fv_generate(const struct FvModel *model,
                          const struct FvSchedule *sched,
                          uint64_t condition_seed,
                          uint64_t sample_seed,
                          bool pruning,
                          struct FvMap **out_map,
                          struct FvMetrics **out_metrics);

/**
 * Reads a map's dimensions. Each out pointer may be null to skip it.
 *
 * # Safety
 * `map` must be a valid unfreed handle; non-null out pointers must be
 * valid `size_t` slots.
 */
enum FvStatus fv_map_dims(const struct FvMap *map, size_t *h, size_t *w, size_t *d);

/**
 * Copies the map's values (row-major tokens, channels innermost) into
 * `buf`, which must hold exactly h*w*d floats.
 *
 * # Safety
 * `map` must be a valid unfreed handle and `buf` writable for `len`
 * floats.
 */
enum FvStatus fv_map_copy_data(const struct FvMap *map, float *buf, size_t len);

/**
 * Releases a map handle. Null is a no-op.
 *
 * # Safety
 * `map` must be null or an unfreed pointer from this library.
 */
void fv_map_free(struct FvMap *map);

/**
 * Number of per-step rows in a metrics handle; 0 for null.
 *
 * # Safety
 * `metrics` must be null or a valid unfreed handle.
 */
size_t fv_metrics_step_count(const struct FvMetrics *metrics);

/**
 * Copies row `index` (0-based) into `out`.
 *
 * # Safety
 * `metrics` must be a valid unfreed handle and `out` a valid
 * `FvStepMetrics` slot.
 */
enum FvStatus fv_metrics_step(const struct FvMetrics *metrics,
                              size_t index,
                              struct FvStepMetrics *out);

/**
 * Writes run totals. Each out pointer may be null to skip that total.
 * `kv_total` is the cache population after the final step, not a sum.
 *
 * # Safety
 * `metrics` must be a valid unfreed handle; non-null out pointers must be
 * valid `uint64_t` slots.
 */
enum FvStatus fv_metrics_totals(const struct FvMetrics *metrics,
                                uint64_t *forwarded_tokens,
                                uint64_t *kv_total,
                                uint64_t *est_flops,
                                uint64_t *wall_ns);

/**
 * Releases a metrics handle. Null is a no-op.
 *
 * # Safety
 * `metrics` must be null or an unfreed pointer from this library.
 */
void fv_metrics_free(struct FvMetrics *metrics);

/**
 * Total estimated FLOPs for a run under the analytic cost model, without
 * executing the model. `pruning` false prices the unpruned baseline.
 *
 * # Safety
 * `model` and `sched` must be valid unfreed handles and `out_flops` a
 * valid `uint64_t` slot.
 */
enum FvStatus fv_flop_estimate(const struct FvModel *model,
                               const struct FvSchedule *sched,
                               bool pruning,
                               uint64_t *out_flops);

/**
 * Radially averaged power spectrum. Always writes the bin count to
 * `needed`; when `bins` is non-null it must hold at least that many
 * doubles and receives the per-radius power values. Call once with a null
 * `bins` to size the buffer, then again to fill it.
 *
 * # Safety
 * `map` must be a valid unfreed handle, `needed` a valid `size_t` slot,
 * and `bins` null or writable for `capacity` doubles.
 */
enum FvStatus fv_spectrum(const struct FvMap *map, double *bins, size_t capacity, size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FASTVAR_H */
