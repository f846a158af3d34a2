#ifndef HETSIM_H
#define HETSIM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define HETSIM_FORMAT_TABLE 0

#define HETSIM_FORMAT_LINES 1

typedef enum HetsimStatus {
  HETSIM_STATUS_OK = 0,
  HETSIM_STATUS_NULL_ARGUMENT = 1,
  HETSIM_STATUS_INVALID_UTF8 = 2,
  HETSIM_STATUS_PARSE = 3,
  HETSIM_STATUS_VALIDATION = 4,
  HETSIM_STATUS_TIMEOUT = 5,
  HETSIM_STATUS_IO = 6,
  HETSIM_STATUS_BUFFER_TOO_SMALL = 7,
  HETSIM_STATUS_BENCH_FAILED = 8,
  HETSIM_STATUS_SIMULATION = 9,
  HETSIM_STATUS_PANIC = 10,
} HetsimStatus;

/**
 * The result of running a scenario.
 */
typedef struct HetsimOutcome HetsimOutcome;

/**
 * A parsed, validated scenario.
 */
typedef struct HetsimScenario HetsimScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hetsim_version(void);

/**
 * Message for the last failing call on this thread, or "" after a success.
 * Valid until the next call on the same thread.
 */
const char *hetsim_last_error(void);

/**
 * Parse scenario text. Relative `file` paths resolve against `base_dir`,
 * which may be null.
 *
 * # Safety
 * `text` and `base_dir` must be null or NUL-terminated; `out` must be null
 * or writable.
 */
enum HetsimStatus hetsim_scenario_parse(const char *text,
                                        const char *base_dir,
                                        struct HetsimScenario **out);

/**
 * Load and validate a scenario file.
 *
 * # Safety
 * `path` must be null or NUL-terminated; `out` must be null or writable.
 */
enum HetsimStatus hetsim_scenario_load(const char *path, struct HetsimScenario **out);

/**
 * # Safety
 * `sc` must be null or a handle from this library not yet freed.
 */
void hetsim_scenario_free(struct HetsimScenario *sc);

/**
 * Run a scenario to completion or its cycle budget. A run that hits the
 * budget still produces an outcome and returns `Timeout`.
 *
 * # Safety
 * `sc` must be a live scenario handle or null; `out` must be null or writable.
 */
enum HetsimStatus hetsim_scenario_run(const struct HetsimScenario *sc, struct HetsimOutcome **out);

/**
 * # Safety
 * `o` must be null or a handle from this library not yet freed.
 */
void hetsim_outcome_free(struct HetsimOutcome *o);

/**
 * Total simulated cycles, 0 for a null handle.
 *
 * # Safety
 * `o` must be a live outcome handle or null.
 */
uint64_t hetsim_outcome_cycles(const struct HetsimOutcome *o);

/**
 * Copy the metrics report into `buf` as a NUL-terminated string.
 * `needed` receives the required size including the terminator, so a call
 * with `cap == 0` sizes the buffer.
 *
 * # Safety
 * `o` must be a live outcome handle or null; `buf` must hold `cap` bytes
 * (or be null when `cap == 0`); `needed` must be null or writable.
 */
enum HetsimStatus hetsim_outcome_report(const struct HetsimOutcome *o,
                                        uint32_t format,
                                        char *buf,
                                        size_t cap,
                                        size_t *needed);

/**
 * Borrow the final L1 (`which == 0`) or L2 (`which == 1`) image. The
 * pointer stays valid until the outcome is freed.
 *
 * # Safety
 * `o` must be a live outcome handle or null; `data` and `len` must be null
 * or writable.
 */
enum HetsimStatus hetsim_outcome_memory(const struct HetsimOutcome *o,
                                        uint32_t which,
                                        const uint8_t **data,
                                        size_t *len);

/**
 * Run one benchmark suite by name. `passed` and `total` receive check
 * counts; any failing check returns `BenchFailed`.
 *
 * # Safety
 * `suite` must be null or NUL-terminated; `passed` and `total` must be null
 * or writable.
 */
enum HetsimStatus hetsim_bench(const char *suite, uint64_t seed, uint32_t *passed, uint32_t *total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HETSIM_H */
