#ifndef FEDLAP_H
#define FEDLAP_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FedlapStatus {
  FEDLAP_STATUS_OK = 0,
  FEDLAP_STATUS_NULL_POINTER = 1,
  FEDLAP_STATUS_INVALID_ARGUMENT = 2,
  FEDLAP_STATUS_IO = 3,
  FEDLAP_STATUS_FORMAT = 4,
  FEDLAP_STATUS_NUMERIC = 5,
  FEDLAP_STATUS_CONFIG = 6,
  FEDLAP_STATUS_BUFFER_TOO_SMALL = 7,
  FEDLAP_STATUS_PANIC = 8,
} FedlapStatus;

/**
 * Privacy accountant for private training rounds.
 */
typedef struct FedlapAccountant FedlapAccountant;

/**
 * Labelled examples.
 */
typedef struct FedlapDataset FedlapDataset;

/**
 * Model architecture plus parameters.
 */
typedef struct FedlapModel FedlapModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *fedlap_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fedlap_version(void);

/**
 * RDP of the sampled Gaussian mechanism at integer order `alpha`.
 *
 * # Safety
 * `out_rdp` must be a valid pointer to a double.
 */
enum FedlapStatus fedlap_rdp_sgm(double q, double sigma, uint32_t alpha, double *out_rdp);

/**
 * Best `(epsilon, order)` over `len` RDP values.
 *
 * # Safety
 * `orders` and `rho` must point to `len` elements; the outputs must be valid.
 */
enum FedlapStatus fedlap_rdp_to_dp(const uint32_t *orders,
                                   const double *rho,
                                   size_t len,
                                   double delta,
                                   double *out_epsilon,
                                   uint32_t *out_alpha);

/**
 * Accountant charging `steps_per_round` accesses per round, the first at
 * sampling rate `q1` and the rest at `q2`.
 *
 * # Safety
 * `out_handle` must be a valid pointer.
 */
enum FedlapStatus fedlap_accountant_new(double sigma,
                                        double q1,
                                        double q2,
                                        size_t steps_per_round,
                                        struct FedlapAccountant **out_handle);

/**
 * Adds `rounds` rounds.
 *
 * # Safety
 * `acc` must come from [`fedlap_accountant_new`].
 */
enum FedlapStatus fedlap_accountant_accumulate(struct FedlapAccountant *acc, size_t rounds);

/**
 * # Safety
 * `acc` must come from [`fedlap_accountant_new`]; the outputs must be valid.
 */
enum FedlapStatus fedlap_accountant_epsilon(const struct FedlapAccountant *acc,
                                            double delta,
                                            double *out_epsilon,
                                            uint32_t *out_alpha);

/**
 * # Safety
 * `acc` must come from [`fedlap_accountant_new`] and `out_rounds` be valid.
 */
enum FedlapStatus fedlap_accountant_rounds(const struct FedlapAccountant *acc, size_t *out_rounds);

/**
 * # Safety
 * `acc` must come from [`fedlap_accountant_new`] or be NULL.
 */
void fedlap_accountant_free(struct FedlapAccountant *acc);

/**
 * Freshly initialized MLP classifier.
 *
 * # Safety
 * `out_handle` must be a valid pointer.
 */
enum FedlapStatus fedlap_model_init_mlp(size_t inputs,
                                        size_t hidden,
                                        size_t classes,
                                        uint64_t seed,
                                        struct FedlapModel **out_handle);

/**
 * Freshly initialized ConvNet for `side` x `side` single-channel images.
 *
 * # Safety
 * `out_handle` must be a valid pointer.
 */
enum FedlapStatus fedlap_model_init_convnet(size_t side,
                                            size_t channels,
                                            size_t classes,
                                            uint64_t seed,
                                            struct FedlapModel **out_handle);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_handle` valid.
 */
enum FedlapStatus fedlap_model_load(const char *path, struct FedlapModel **out_handle);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum FedlapStatus fedlap_model_save(const struct FedlapModel *model, const char *path);

/**
 * # Safety
 * `model` must be a live handle and `out_count` valid.
 */
enum FedlapStatus fedlap_model_num_params(const struct FedlapModel *model, size_t *out_count);

/**
 * Copies the flattened parameters into `buf`, which must hold at least
 * `fedlap_model_num_params` doubles.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum FedlapStatus fedlap_model_copy_params(const struct FedlapModel *model,
                                           double *buf,
                                           size_t len);

/**
 * Mean cross-entropy and accuracy of `model` on `data`.
 *
 * # Safety
 * Both handles must be live and the outputs valid.
 */
enum FedlapStatus fedlap_model_evaluate(const struct FedlapModel *model,
                                        const struct FedlapDataset *data,
                                        double *out_loss,
                                        double *out_accuracy);

/**
 * # Safety
 * `model` must come from this library or be NULL.
 */
void fedlap_model_free(struct FedlapModel *model);

/**
 * Loads an IDX image/label pair, adds a channel axis and downsamples by
 * `downsample` (1 keeps full resolution).
 *
 * # Safety
 * The paths must be NUL-terminated strings and `out_handle` valid.
 */
enum FedlapStatus fedlap_dataset_load_idx(const char *images,
                                          const char *labels,
                                          size_t classes,
                                          size_t downsample,
                                          struct FedlapDataset **out_handle);

/**
 * # Safety
 * `data` must be a live handle and `out_len` valid.
 */
enum FedlapStatus fedlap_dataset_len(const struct FedlapDataset *data, size_t *out_len);

/**
 * # Safety
 * `data` must come from this library or be NULL.
 */
void fedlap_dataset_free(struct FedlapDataset *data);

/**
 * Runs the experiment in the TOML file at `config`, writing metrics CSV to
 * `metrics_out` (NULL keeps the config's own output path).
 *
 * # Safety
 * `config` must be a NUL-terminated string; `metrics_out` one or NULL.
 */
enum FedlapStatus fedlap_run_config(const char *config,
                                    const char *metrics_out,
                                    double *out_final_accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDLAP_H */
