#ifndef ROBUSTFAIR_H
#define ROBUSTFAIR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RfStatus {
  RF_STATUS_OK = 0,
  RF_STATUS_NULL_POINTER = 1,
  RF_STATUS_VALIDATION = 2,
  RF_STATUS_DIMENSION = 3,
  RF_STATUS_IO = 4,
  RF_STATUS_PARSE = 5,
  RF_STATUS_SOLVER = 6,
  RF_STATUS_PANIC = 7,
} RfStatus;

typedef enum RfModelKind {
  RF_MODEL_KIND_OLS = 0,
  RF_MODEL_KIND_FAIR_UNROBUST = 1,
  RF_MODEL_KIND_ROBUST_POINT = 2,
  RF_MODEL_KIND_ROBUST_RANKONE = 3,
} RfModelKind;

// Opaque dataset handle.
typedef struct RfDataset RfDataset;

// Opaque fitted-model handle.
typedef struct RfModel RfModel;

// Spectral summary of a dataset.
typedef struct RfStats {
  double v_x1_max;
  double v_x2_max;
  double eta_min;
  double eta_d;
  double sigma_min;
} RfStats;

// Worst-case inserted point.
typedef struct RfPointAttack {
  double y0;
  // 1 or 2.
  uint8_t group;
  double value;
} RfPointAttack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or NULL. Valid until the next failing call.
const char *rf_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *rf_version(void);

// Builds a dataset from row-major `features` (`n × p`), `targets` and group codes (1 or 2).
// Rows are reordered group-1 first, keeping their relative order.
//
// # Safety
// `features` must hold `n·p` values, `targets` and `groups` `n` values, and `out` must be writable.
enum RfStatus rf_dataset_new(const double *features,
                             const double *targets,
                             const uint8_t *groups,
                             size_t n,
                             size_t p,
                             struct RfDataset **out);

// Loads a CSV with `target` and `group` columns; every other column is a feature.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum RfStatus rf_dataset_load_csv(const char *path, struct RfDataset **out);

// # Safety
// `ds` must come from this library and not be used afterwards; NULL is ignored.
void rf_dataset_free(struct RfDataset *ds);

// Writes the row count, group-1 size and feature count.
//
// # Safety
// `ds` must be a live handle and the outputs writable.
enum RfStatus rf_dataset_dims(const struct RfDataset *ds, size_t *n, size_t *m, size_t *p);

// # Safety
// `ds` must be a live handle and `out` writable.
enum RfStatus rf_dataset_stats(const struct RfDataset *ds, struct RfStats *out);

// Fits a model. `b_beta ≤ 0` selects the default coefficient radius of the rank-one defense.
//
// # Safety
// `ds` must be a live handle and `out` writable.
enum RfStatus rf_fit(const struct RfDataset *ds,
                     enum RfModelKind kind,
                     double lambda,
                     double eta,
                     double b_beta,
                     struct RfModel **out);

// # Safety
// `model` must come from this library and not be used afterwards; NULL is ignored.
void rf_model_free(struct RfModel *model);

// Copies the coefficients into `buf`, which must hold exactly `len = p` values.
//
// # Safety
// `model` must be a live handle and `buf` writable for `len` values.
enum RfStatus rf_model_beta(const struct RfModel *model, double *buf, size_t len);

// Worst-case loss for robust models, clean loss for baselines.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum RfStatus rf_model_value(const struct RfModel *model, double *out);

// Worst-case inserted point against `beta`; its features go to `x0` (length `p`).
//
// # Safety
// `ds` must be a live handle, `beta` and `x0` must hold `p` values, `out` writable.
enum RfStatus rf_point_attack(const struct RfDataset *ds,
                              const double *beta,
                              size_t p,
                              double lambda,
                              double eta,
                              double *x0,
                              struct RfPointAttack *out);

// Worst-case loss over rank-one perturbations of Frobenius norm at most `eta`.
//
// # Safety
// `ds` must be a live handle, `beta` must hold `p` values and `out` be writable.
enum RfStatus rf_rankone_worst_case(const struct RfDataset *ds,
                                    const double *beta,
                                    size_t p,
                                    double lambda,
                                    double eta,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBUSTFAIR_H */
