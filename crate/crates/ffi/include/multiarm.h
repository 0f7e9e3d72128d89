#ifndef MULTIARM_H
#define MULTIARM_H

/* Generated by cbindgen from the multiarm-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MaStatus {
  MA_STATUS_OK = 0,
  MA_STATUS_NULL_POINTER = 1,
  MA_STATUS_INVALID_UTF8 = 2,
  MA_STATUS_VALIDATION = 3,
  MA_STATUS_NUMERIC = 4,
  MA_STATUS_BUFFER_TOO_SMALL = 5,
  MA_STATUS_PANIC = 6,
} MaStatus;

/**
 * A resolved design with its operating characteristics.
 */
typedef struct MaDesign MaDesign;

/**
 * A parsed, validated scenario.
 */
typedef struct MaScenario MaScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ma_version(void);

/**
 * Message for the most recent failure on this thread, or an empty
 * string. Valid until the next call into the library on this thread.
 */
const char *ma_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void ma_string_free(char *s);

/**
 * Parses and validates a JSON scenario document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum MaStatus ma_scenario_from_json(const char *json, struct MaScenario **out);

/**
 * The default scenario.
 *
 * # Safety
 * `out` must be writable.
 */
enum MaStatus ma_scenario_defaults(struct MaScenario **out);

/**
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
enum MaStatus ma_scenario_to_json(const struct MaScenario *scenario, char **out);

/**
 * # Safety
 * `scenario` must be null or a handle not yet freed.
 */
void ma_scenario_free(struct MaScenario *scenario);

/**
 * Finds the sample size and evaluates the design.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
enum MaStatus ma_design_resolve(const struct MaScenario *scenario, struct MaDesign **out);

/**
 * Reads a design document as written by `ma_design_to_json`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum MaStatus ma_design_from_json(const char *json, struct MaDesign **out);

/**
 * # Safety
 * `design` must be a live handle; `out` must be writable.
 */
enum MaStatus ma_design_to_json(const struct MaDesign *design, char **out);

/**
 * # Safety
 * `design` must be null or a handle not yet freed.
 */
void ma_design_free(struct MaDesign *design);

/**
 * Number of experimental arms K.
 *
 * # Safety
 * `design` must be a live handle; `k` must be writable.
 */
enum MaStatus ma_design_arms(const struct MaDesign *design, size_t *k);

/**
 * Writes n₀..n_K into `sizes`, which must hold K + 1 values.
 *
 * # Safety
 * `design` must be a live handle; `sizes` must point to `len` doubles.
 */
enum MaStatus ma_design_sizes(const struct MaDesign *design, double *sizes, size_t len);

/**
 * Power of the chosen type achieved by the design.
 *
 * # Safety
 * `design` must be a live handle; `power` must be writable.
 */
enum MaStatus ma_design_achieved_power(const struct MaDesign *design, double *power);

/**
 * One operating characteristic. `truth` is `HG`, `HA` or `LFC<k>`;
 * `quantity` is a curve-file quantity name (`p_con`, `fwer_I1`, ...);
 * `arm` (1-based) selects the marginal power and is ignored otherwise.
 * Undefined values (pFDR with no rejections) are returned as NaN.
 *
 * # Safety
 * `design` must be a live handle; strings NUL-terminated; `value` writable.
 */
enum MaStatus ma_design_opchar(const struct MaDesign *design,
                               const char *truth,
                               const char *quantity,
                               size_t arm,
                               double *value);

/**
 * Simulates the design; writes the comparison with the analytic values as
 * JSON.
 *
 * # Safety
 * `design` must be a live handle; `out` must be writable.
 */
enum MaStatus ma_design_simulate(const struct MaDesign *design,
                                 uint64_t replicates,
                                 uint64_t seed,
                                 char **out);

/**
 * Curve data as CSV (`theta,quantity,arm,value,series`).
 *
 * # Safety
 * `design` must be a live handle; `out` must be writable.
 */
enum MaStatus ma_design_curves_csv(const struct MaDesign *design, size_t quality, char **out);

/**
 * Report in `format` (`md` or `html`).
 *
 * # Safety
 * `design` must be a live handle; `format` NUL-terminated; `out` writable.
 */
enum MaStatus ma_design_report(const struct MaDesign *design, const char *format, char **out);

/**
 * Per-hypothesis significance levels γ₁..γ_K for correction `mcc` (a
 * scenario-file identifier such as `holm_bonferroni`). `corr` is the
 * row-major K×K test-statistic correlation, required by the Dunnett
 * corrections and ignored (may be null) otherwise.
 *
 * # Safety
 * `mcc` NUL-terminated; `corr` null or K×K doubles; `gammas` K doubles.
 */
enum MaStatus ma_thresholds(const char *mcc,
                            double alpha,
                            size_t k,
                            const double *corr,
                            double *gammas);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MULTIARM_H */
