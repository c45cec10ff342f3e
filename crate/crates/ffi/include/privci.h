#ifndef PRIVCI_H
#define PRIVCI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum PrivciStatus {
  PRIVCI_STATUS_OK = 0,
  PRIVCI_STATUS_NULL_POINTER = 1,
  PRIVCI_STATUS_INVALID_ARGUMENT = 2,
  PRIVCI_STATUS_IO = 3,
  PRIVCI_STATUS_PARSE = 4,
  PRIVCI_STATUS_CONFIG = 5,
  PRIVCI_STATUS_STRUCTURE = 6,
  PRIVCI_STATUS_MODEL = 7,
  PRIVCI_STATUS_PANIC = 8,
} PrivciStatus;

// A discretized input table with its role configuration.
typedef struct PrivciDataset PrivciDataset;

// The outputs of one synthesis run.
typedef struct PrivciSynthesis PrivciSynthesis;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a
// successful call. Valid until the next call on the same thread.
const char *privci_last_error_message(void);

// Library version as a static nul-terminated string.
const char *privci_version(void);

// Reads a CSV file and its JSON configuration.
//
// # Safety
// `csv_path` and `config_path` must be nul-terminated strings; `out` must
// point to writable storage for one handle.
enum PrivciStatus privci_dataset_load(const char *csv_path,
                                      const char *config_path,
                                      struct PrivciDataset **out);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle from [`privci_dataset_load`].
size_t privci_dataset_rows(const struct PrivciDataset *dataset);

// Number of attributes, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle from [`privci_dataset_load`].
size_t privci_dataset_columns(const struct PrivciDataset *dataset);

// # Safety
// `dataset` must be null or a handle from [`privci_dataset_load`] not yet freed.
void privci_dataset_free(struct PrivciDataset *dataset);

// Runs `method` (`"mst"`, `"privci"` or `"prefair"`) at `(epsilon, delta)`.
// A negative `n_out` produces as many rows as the input.
//
// # Safety
// `dataset` must be a live handle, `method` a nul-terminated string and
// `out` writable storage for one handle.
enum PrivciStatus privci_synthesize(const struct PrivciDataset *dataset,
                                    const char *method,
                                    double epsilon,
                                    double delta,
                                    int64_t n_out,
                                    uint64_t seed,
                                    struct PrivciSynthesis **out);

// # Safety
// `synthesis` must be null or a handle from [`privci_synthesize`] not yet freed.
void privci_synthesis_free(struct PrivciSynthesis *synthesis);

// Synthetic rows as CSV text with a header.
//
// # Safety
// `synthesis` must be a live handle and `out` writable storage for one pointer.
enum PrivciStatus privci_synthesis_csv(const struct PrivciSynthesis *synthesis, char **out);

// Fitted model as JSON.
//
// # Safety
// `synthesis` must be a live handle and `out` writable storage for one pointer.
enum PrivciStatus privci_synthesis_model_json(const struct PrivciSynthesis *synthesis, char **out);

// Provenance record as JSON.
//
// # Safety
// `synthesis` must be a live handle and `out` writable storage for one pointer.
enum PrivciStatus privci_synthesis_provenance_json(const struct PrivciSynthesis *synthesis,
                                                   char **out);

// 1 if the constraint holds on the selected tree, 0 if it does not, -1 when
// the run had no constraint or the handle is null.
//
// # Safety
// `synthesis` must be null or a live handle.
int privci_synthesis_separated(const struct PrivciSynthesis *synthesis);

// Writes `synthetic.csv`, `model.json` and `provenance.json` into `dir`,
// creating it if needed.
//
// # Safety
// `synthesis` must be a live handle and `dir` a nul-terminated string.
enum PrivciStatus privci_synthesis_write(const struct PrivciSynthesis *synthesis, const char *dir);

// # Safety
// `s` must be null or a string returned by this library not yet freed.
void privci_string_free(char *s);

// zCDP parameter `ρ` for an `(ε, δ)` target.
//
// # Safety
// `out` must point to writable storage for one double.
enum PrivciStatus privci_zcdp_from_eps_delta(double epsilon, double delta, double *out);

// `ε` implied by `ρ`-zCDP at `delta`.
//
// # Safety
// `out` must point to writable storage for one double.
enum PrivciStatus privci_eps_from_zcdp(double rho, double delta, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRIVCI_H */
