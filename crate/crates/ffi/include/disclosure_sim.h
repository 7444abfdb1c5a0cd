#ifndef DISCLOSURE_SIM_H
#define DISCLOSURE_SIM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsStatus {
  DS_STATUS_OK = 0,
  DS_STATUS_NULL_POINTER = 1,
  DS_STATUS_INVALID_UTF8 = 2,
  DS_STATUS_CONFIG = 3,
  DS_STATUS_VALIDATION = 4,
  DS_STATUS_MECHANISM = 5,
  DS_STATUS_IO = 6,
  DS_STATUS_OUT_OF_RANGE = 7,
  DS_STATUS_OTHER = 8,
  DS_STATUS_PANIC = 9,
} DsStatus;

typedef enum DsBackend {
  DS_BACKEND_ORACLE_TRUTHFUL = 0,
  DS_BACKEND_SCRIPTED_PAPER = 1,
  DS_BACKEND_RATIONAL_BAYES = 2,
} DsBackend;

typedef enum DsTieRule {
  DS_TIE_RULE_LOWEST_INDEX = 0,
  DS_TIE_RULE_SEEDED_RANDOM = 1,
} DsTieRule;

/**
 * Experiment configuration handle.
 */
typedef struct DsConfig DsConfig;

/**
 * Result table of a run.
 */
typedef struct DsSummary DsSummary;

/**
 * Numeric part of one summary row. Means and percentages are NaN when the
 * row has no successful rounds (`rounds_ok == 0`).
 */
typedef struct DsSummaryRow {
  uint64_t rounds_ok;
  uint64_t rounds_failed;
  double mean_revenue;
  double mean_welfare;
  double pct_truthful;
  double pct_over;
  double pct_under;
  uint64_t bid_count;
} DsSummaryRow;

typedef struct DsAuctionOutcome {
  size_t winner;
  double price;
  double winning_bid;
} DsAuctionOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Valid until the next
 * call into this library on the same thread; do not free.
 */
const char *ds_last_error(void);

/**
 * Library version as a static NUL-terminated string; do not free.
 */
const char *ds_version(void);

/**
 * Parses a TOML experiment configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum DsStatus ds_config_from_toml(const char *toml, struct DsConfig **out);

/**
 * The 21-cell default grid for one analytic backend.
 *
 * # Safety
 * `out` must be writable.
 */
enum DsStatus ds_config_default(uint64_t seed, enum DsBackend backend, struct DsConfig **out);

/**
 * # Safety
 * `config` must be a live handle; `dir` a NUL-terminated string.
 */
enum DsStatus ds_config_set_output_dir(struct DsConfig *config, const char *dir);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum DsStatus ds_config_set_rounds(struct DsConfig *config, uint64_t rounds);

/**
 * Number of cells in the expanded grid.
 *
 * # Safety
 * `config` must be a live handle; `out` writable.
 */
enum DsStatus ds_config_cell_count(const struct DsConfig *config, size_t *out);

/**
 * # Safety
 * `config` must be NULL or a handle not yet freed.
 */
void ds_config_free(struct DsConfig *config);

/**
 * Runs the grid, writing outputs to the configured directory, and returns
 * the per-cell summary.
 *
 * # Safety
 * `config` must be a live handle; `out` writable.
 */
enum DsStatus ds_run(const struct DsConfig *config, struct DsSummary **out);

/**
 * # Safety
 * `summary` must be a live handle.
 */
size_t ds_summary_len(const struct DsSummary *summary);

/**
 * # Safety
 * `summary` must be a live handle; `out` writable.
 */
enum DsStatus ds_summary_row(const struct DsSummary *summary,
                             size_t index,
                             struct DsSummaryRow *out);

/**
 * `config_id` of a row as a new string; free with [`ds_string_free`].
 *
 * # Safety
 * `summary` must be a live handle; `out` writable.
 */
enum DsStatus ds_summary_config_id(const struct DsSummary *summary, size_t index, char **out);

/**
 * The summary rendered as CSV (same format as summary.csv); free with
 * [`ds_string_free`].
 *
 * # Safety
 * `summary` must be a live handle; `out` writable.
 */
enum DsStatus ds_summary_csv(const struct DsSummary *summary, char **out);

/**
 * # Safety
 * `summary` must be NULL or a handle not yet freed.
 */
void ds_summary_free(struct DsSummary *summary);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void ds_string_free(char *s);

/**
 * Second-price auction over `bids[0..n]`; bidder ids are array indices.
 * `seed` only matters for `DS_TIE_RULE_SEEDED_RANDOM`.
 *
 * # Safety
 * `bids` must point to `n` doubles; `out` must be writable.
 */
enum DsStatus ds_second_price(const double *bids,
                              size_t n,
                              enum DsTieRule tie_rule,
                              uint64_t seed,
                              struct DsAuctionOutcome *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISCLOSURE_SIM_H */
