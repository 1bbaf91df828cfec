#ifndef FRBL_H
#define FRBL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FrblStatus {
  FRBL_STATUS_OK = 0,
  FRBL_STATUS_NULL_POINTER = 1,
  FRBL_STATUS_INVALID_UTF8 = 2,
  FRBL_STATUS_INVALID_DATUM = 3,
  FRBL_STATUS_PARSE = 4,
  FRBL_STATUS_INVALID_ARGUMENT = 5,
  FRBL_STATUS_NOT_POSITIVE_DEFINITE = 6,
  FRBL_STATUS_FINITENESS = 7,
  FRBL_STATUS_COUPLING_CONVERGENCE = 8,
  FRBL_STATUS_SOLVE_CONVERGENCE = 9,
  FRBL_STATUS_GEOMETRIC = 10,
  FRBL_STATUS_CATALOG = 11,
  FRBL_STATUS_IO = 12,
  FRBL_STATUS_PANIC = 13,
} FrblStatus;

typedef enum FrblVerdict {
  // Infinite value: no certificate applies.
  FRBL_VERDICT_NONE = 0,
  FRBL_VERDICT_CERTIFIED_OPTIMAL = 1,
  FRBL_VERDICT_FEASIBLE_ONLY = 2,
  FRBL_VERDICT_INFEASIBLE = 3,
} FrblVerdict;

// Opaque datum handle.
typedef struct FrblDatum FrblDatum;

// Opaque solve report handle.
typedef struct FrblSolveReport FrblSolveReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into the library from this thread.
const char *frbl_last_error(void);

// Library version as a static string.
const char *frbl_version(void);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void frbl_string_free(char *s);

// Parses a datum from its JSON text.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum FrblStatus frbl_datum_from_json(const char *json, struct FrblDatum **out);

// # Safety
// `datum` must be a live handle; `out` must be writable.
enum FrblStatus frbl_datum_to_json(const struct FrblDatum *datum, char **out);

// SHA-256 fingerprint of the canonical datum encoding, as hex.
//
// # Safety
// `datum` must be a live handle; `out` must be writable.
enum FrblStatus frbl_datum_fingerprint(const struct FrblDatum *datum, char **out);

// The dual datum (d, c, B*) as a new handle.
//
// # Safety
// `datum` must be a live handle; `out` must be writable.
enum FrblStatus frbl_datum_dual(const struct FrblDatum *datum, struct FrblDatum **out);

// # Safety
// `datum` must be null or a live handle; it is invalid afterwards.
void frbl_datum_free(struct FrblDatum *datum);

// Builds a catalog instance. `params` is null or whitespace-separated
// `key=value` pairs, e.g. `"p=2/3 q=2/3 r=1/2 n=1"`.
//
// # Safety
// `name` must be a nul-terminated string, `params` null or one; `out` must be writable.
enum FrblStatus frbl_catalog_export(const char *name, const char *params, struct FrblDatum **out);

// Computes D_g. `restarts == 0` keeps the default; `tol <= 0` keeps the default.
//
// # Safety
// `datum` must be a live handle; `out` must be writable.
enum FrblStatus frbl_solve(const struct FrblDatum *datum,
                           double tol,
                           uint32_t restarts,
                           uint64_t seed,
                           struct FrblSolveReport **out);

// D_g from a report; `+inf` when the constant is infinite, NaN for a null handle.
//
// # Safety
// `report` must be null or a live handle.
double frbl_report_value(const struct FrblSolveReport *report);

// # Safety
// `report` must be null or a live handle.
enum FrblVerdict frbl_report_verdict(const struct FrblSolveReport *report);

// Full report, including extremizers and certificate, as JSON.
//
// # Safety
// `report` must be a live handle; `out` must be writable.
enum FrblStatus frbl_report_to_json(const struct FrblSolveReport *report, char **out);

// # Safety
// `report` must be null or a live handle; it is invalid afterwards.
void frbl_report_free(struct FrblSolveReport *report);

// Finiteness verdict with witness and search log, as JSON.
//
// # Safety
// `datum` must be a live handle; `out` must be writable.
enum FrblStatus frbl_finiteness_json(const struct FrblDatum *datum,
                                     uint32_t max_enum_dim,
                                     uint32_t random_trials,
                                     uint64_t seed,
                                     char **out);

// Solves the datum and its dual. Writes both values and returns `Ok` even
// when the gap exceeds `tol`; `within_tol` reports the comparison.
//
// # Safety
// `datum` must be a live handle; the three output pointers must be writable.
enum FrblStatus frbl_verify_duality(const struct FrblDatum *datum,
                                    double tol,
                                    uint64_t seed,
                                    double *dg,
                                    double *dg_dual,
                                    bool *within_tol);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRBL_H */
