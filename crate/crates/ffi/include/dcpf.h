#ifndef DCPF_H
#define DCPF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DCPF_SUBSET_TRAIN 0

#define DCPF_SUBSET_TEST 1

#define DCPF_METHOD_LBFGS 0

#define DCPF_METHOD_BFGS 1

/**
 * Result code of every fallible call.
 */
typedef enum DcpfStatus {
  DCPF_STATUS_OK = 0,
  DCPF_STATUS_NULL_POINTER = 1,
  DCPF_STATUS_INVALID_ARGUMENT = 2,
  DCPF_STATUS_PARSE = 3,
  DCPF_STATUS_VALIDATION = 4,
  DCPF_STATUS_DISCONNECTED = 5,
  DCPF_STATUS_ISLANDING = 6,
  DCPF_STATUS_UNKNOWN_BRANCH = 7,
  DCPF_STATUS_SINGULAR = 8,
  DCPF_STATUS_NOT_CONVERGED = 9,
  DCPF_STATUS_DIMENSION = 10,
  DCPF_STATUS_CHECKSUM_MISMATCH = 11,
  DCPF_STATUS_REJECTION_RATE = 12,
  DCPF_STATUS_IO = 13,
  DCPF_STATUS_FORMAT = 14,
  DCPF_STATUS_PANIC = 99,
} DcpfStatus;

/**
 * A scenario dataset.
 */
typedef struct DcpfDataset DcpfDataset;

/**
 * A loaded case with its admittances and DC model.
 */
typedef struct DcpfNetwork DcpfNetwork;

/**
 * A set of DC parameters `(b, gamma, rho)` for one topology.
 */
typedef struct DcpfParams DcpfParams;

/**
 * Training or test loss of one parameter set.
 */
typedef struct DcpfLoss {
  double sq_two_norm;
  double inf_norm;
  double mean_sq_two_norm;
  size_t n_scenarios;
} DcpfLoss;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dcpf_version(void);

/**
 * Message of the last failed call on this thread, or NULL if none.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *dcpf_last_error(void);

/**
 * Loads a case file (MATPOWER `.m` or JSON), or a bundled case by name
 * (`case14`, `case30`, `case57`, `case118`).
 *
 * # Safety
 * `spec` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DcpfStatus dcpf_network_load(const char *spec, struct DcpfNetwork **out);

/**
 * Parses a case from MATPOWER or JSON text held in memory.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DcpfStatus dcpf_network_parse(const char *text, struct DcpfNetwork **out);

/**
 * The network with one branch taken out of service.
 *
 * Fails with `DCPF_STATUS_ISLANDING` if the outage splits the network.
 *
 * # Safety
 * `net` must be a live handle and `out` a valid pointer.
 */
enum DcpfStatus dcpf_network_remove_branch(const struct DcpfNetwork *net,
                                           size_t branch_id,
                                           struct DcpfNetwork **out);

/**
 * # Safety
 * `net` must be NULL or a handle not yet freed.
 */
void dcpf_network_free(struct DcpfNetwork *net);

/**
 * Number of buses, reference included. Zero for a NULL handle.
 *
 * # Safety
 * `net` must be NULL or a live handle.
 */
size_t dcpf_network_n_buses(const struct DcpfNetwork *net);

/**
 * Length of an injection vector: buses other than the reference.
 *
 * # Safety
 * `net` must be NULL or a live handle.
 */
size_t dcpf_network_n_injections(const struct DcpfNetwork *net);

/**
 * Length of a flow vector: in-service branches.
 *
 * # Safety
 * `net` must be NULL or a live handle.
 */
size_t dcpf_network_n_branches(const struct DcpfNetwork *net);

/**
 * Copies the in-service branch ids, in flow-vector order.
 *
 * # Safety
 * `net` must be a live handle and `ids` must point to `len` writable elements.
 */
enum DcpfStatus dcpf_network_branch_ids(const struct DcpfNetwork *net, size_t *ids, size_t len);

/**
 * Cold-start parameters from the series admittances, with zero biases.
 * A nonzero `r_zero` selects `b = 1/x`.
 *
 * # Safety
 * `net` must be a live handle and `out` a valid pointer.
 */
enum DcpfStatus dcpf_params_cold(const struct DcpfNetwork *net,
                                 bool r_zero,
                                 struct DcpfParams **out);

/**
 * Hot-start parameters linearized at the solved nominal AC operating point.
 *
 * # Safety
 * `net` must be a live handle and `out` a valid pointer.
 */
enum DcpfStatus dcpf_params_hot(const struct DcpfNetwork *net, struct DcpfParams **out);

/**
 * Reads a parameter file written for this network.
 *
 * # Safety
 * `net` must be a live handle, `path` a NUL-terminated string and `out` a valid pointer.
 */
enum DcpfStatus dcpf_params_load(const struct DcpfNetwork *net,
                                 const char *path,
                                 struct DcpfParams **out);

/**
 * Writes a parameter file tagged with the network checksum.
 *
 * # Safety
 * Both handles must be live and `path` a NUL-terminated string.
 */
enum DcpfStatus dcpf_params_save(const struct DcpfParams *params,
                                 const struct DcpfNetwork *net,
                                 const char *path);

/**
 * Restricts parameters to an outaged topology: `b` and `rho` of removed
 * branches are dropped, `gamma` is kept.
 *
 * # Safety
 * Both handles must be live and `out` a valid pointer.
 */
enum DcpfStatus dcpf_params_project(const struct DcpfParams *params,
                                    const struct DcpfNetwork *net,
                                    struct DcpfParams **out);

/**
 * Length of the stacked parameter vector. Zero for a NULL handle.
 *
 * # Safety
 * `params` must be NULL or a live handle.
 */
size_t dcpf_params_dim(const struct DcpfParams *params);

/**
 * Copies the stacked vector `[b; gamma; rho]`.
 *
 * # Safety
 * `params` must be a live handle and `x` must point to `len` writable doubles.
 */
enum DcpfStatus dcpf_params_get(const struct DcpfParams *params, double *x, size_t len);

/**
 * Overwrites the parameters from a stacked vector `[b; gamma; rho]`.
 *
 * # Safety
 * `params` must be a live handle and `x` must point to `len` readable doubles.
 */
enum DcpfStatus dcpf_params_set(struct DcpfParams *params, const double *x, size_t len);

/**
 * # Safety
 * `params` must be NULL or a handle not yet freed.
 */
void dcpf_params_free(struct DcpfParams *params);

/**
 * DC branch flows for one injection vector, by solving for bus angles.
 *
 * # Safety
 * Handles must be live; `p` and `flows` must hold `n_p` and `n_flows` doubles.
 */
enum DcpfStatus dcpf_dc_flows(const struct DcpfNetwork *net,
                              const struct DcpfParams *params,
                              const double *p,
                              size_t n_p,
                              double *flows,
                              size_t n_flows);

/**
 * DC branch flows for one injection vector, through the PTDF matrix.
 * Agrees with [`dcpf_dc_flows`] up to rounding.
 *
 * # Safety
 * Handles must be live; `p` and `flows` must hold `n_p` and `n_flows` doubles.
 */
enum DcpfStatus dcpf_ptdf_flows(const struct DcpfNetwork *net,
                                const struct DcpfParams *params,
                                const double *p,
                                size_t n_p,
                                double *flows,
                                size_t n_flows);

/**
 * The PTDF matrix `diag(b) A B'^-1`, row-major with one row per in-service
 * branch and one column per non-reference bus.
 *
 * # Safety
 * Handles must be live and `ptdf` must point to `len` writable doubles.
 */
enum DcpfStatus dcpf_ptdf(const struct DcpfNetwork *net,
                          const struct DcpfParams *params,
                          double *ptdf,
                          size_t len);

/**
 * Samples `n` scenarios around the nominal injections, solves each with the
 * AC power flow and splits them into train and test sets.
 *
 * # Safety
 * `net` must be a live handle and `out` a valid pointer.
 */
enum DcpfStatus dcpf_dataset_generate(const struct DcpfNetwork *net,
                                      size_t n,
                                      double sigma,
                                      uint64_t seed,
                                      double split,
                                      struct DcpfDataset **out);

/**
 * Reads a dataset file and checks that it belongs to `net`.
 *
 * # Safety
 * `net` must be a live handle, `path` a NUL-terminated string and `out` a valid pointer.
 */
enum DcpfStatus dcpf_dataset_load(const struct DcpfNetwork *net,
                                  const char *path,
                                  struct DcpfDataset **out);

/**
 * # Safety
 * `data` must be a live handle and `path` a NUL-terminated string.
 */
enum DcpfStatus dcpf_dataset_save(const struct DcpfDataset *data, const char *path);

/**
 * Number of scenarios in one subset. Zero for a NULL handle or unknown code.
 *
 * # Safety
 * `data` must be NULL or a live handle.
 */
size_t dcpf_dataset_len(const struct DcpfDataset *data, int32_t subset_code);

/**
 * # Safety
 * `data` must be NULL or a handle not yet freed.
 */
void dcpf_dataset_free(struct DcpfDataset *data);

/**
 * Loss of `params` over one subset of `data`.
 *
 * # Safety
 * Handles must be live and `out` a valid pointer.
 */
enum DcpfStatus dcpf_loss(const struct DcpfNetwork *net,
                          const struct DcpfDataset *data,
                          const struct DcpfParams *params,
                          int32_t subset_code,
                          struct DcpfLoss *out);

/**
 * Gradient of the squared two-norm loss, stacked like the parameter vector.
 *
 * # Safety
 * Handles must be live and `grad` must point to `len` writable doubles.
 */
enum DcpfStatus dcpf_gradient(const struct DcpfNetwork *net,
                              const struct DcpfDataset *data,
                              const struct DcpfParams *params,
                              int32_t subset_code,
                              double *grad,
                              size_t len);

/**
 * Fits parameters on the training subset starting from `init`.
 * `max_iterations` of zero keeps the library default.
 *
 * # Safety
 * Handles must be live and `out` a valid pointer.
 */
enum DcpfStatus dcpf_train(const struct DcpfNetwork *net,
                           const struct DcpfDataset *data,
                           const struct DcpfParams *init,
                           int32_t method,
                           size_t max_iterations,
                           struct DcpfParams **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCPF_H */
