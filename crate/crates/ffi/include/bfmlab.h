#ifndef BFMLAB_H
#define BFMLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum BfmStatus {
  BFM_STATUS_OK = 0,
  BFM_STATUS_NULL_POINTER = 1,
  BFM_STATUS_INVALID_ARGUMENT = 2,
  BFM_STATUS_IO = 3,
  BFM_STATUS_NUMERIC = 4,
  BFM_STATUS_PANIC = 5,
} BfmStatus;

typedef enum BfmSplit {
  BFM_SPLIT_TRAIN = 0,
  BFM_SPLIT_VAL = 1,
  BFM_SPLIT_TEST = 2,
} BfmSplit;

/*
 Opaque dataset handle.
 */
typedef struct BfmDataset BfmDataset;

/*
 Opaque model handle; weights are held in 64-bit precision.
 */
typedef struct BfmModel BfmModel;

typedef struct BfmDatasetInfo {
  uintptr_t n_items;
  uintptr_t n_samples;
  uintptr_t group_size;
  uintptr_t f_pad;
  uintptr_t n_ant;
  double scale;
} BfmDatasetInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on this thread.
 */
const char *bfm_last_error(void);

/*
 Library version, static string.
 */
const char *bfm_version(void);

/*
 Simulate `n_samples` realizations of the named profile (or profile file)
 and cut them into `group_size`-subcarrier samples.

 # Safety
 `profile` must be a NUL-terminated string; `out` must be writable.
 */
enum BfmStatus bfm_dataset_generate(const char *profile,
                                    uintptr_t n_samples,
                                    uint64_t seed,
                                    uintptr_t group_size,
                                    struct BfmDataset **out);

/*
 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum BfmStatus bfm_dataset_load(const char *path, struct BfmDataset **out);

/*
 # Safety
 `dataset` must come from this library; `path` must be NUL-terminated.
 */
enum BfmStatus bfm_dataset_save(const struct BfmDataset *dataset, const char *path);

/*
 # Safety
 `dataset` must come from this library; `out` must be writable.
 */
enum BfmStatus bfm_dataset_info(const struct BfmDataset *dataset, struct BfmDatasetInfo *out);

/*
 Release a dataset. Null is ignored.

 # Safety
 `dataset` must come from this library and not be used afterwards.
 */
void bfm_dataset_free(struct BfmDataset *dataset);

/*
 # Safety
 `path` must be NUL-terminated; `out` must be writable.
 */
enum BfmStatus bfm_model_load(const char *path, struct BfmModel **out);

/*
 Release a model. Null is ignored.

 # Safety
 `model` must come from this library and not be used afterwards.
 */
void bfm_model_free(struct BfmModel *model);

/*
 Mean Frobenius error of `model` over a dataset split.

 # Safety
 Handles must come from this library; `out_mean` must be writable.
 */
enum BfmStatus bfm_model_evaluate(const struct BfmModel *model,
                                  const struct BfmDataset *dataset,
                                  enum BfmSplit split,
                                  double *out_mean);

/*
 De-normalized amplitude predictions for one dataset item, `f_pad * n_ant`
 values written to `out` (padding bins included).

 # Safety
 Handles must come from this library; `out` must hold `len` doubles.
 */
enum BfmStatus bfm_model_predict(const struct BfmModel *model,
                                 const struct BfmDataset *dataset,
                                 uintptr_t item,
                                 double *out,
                                 uintptr_t len);

/*
 Phase-normalized right-singular matrices of `n_sub` square channel
 matrices. `h` holds `n_sub * n * n` interleaved `(re, im)` pairs, row
 major per subcarrier; `v_out` receives the same layout.

 # Safety
 `h` and `v_out` must each hold `2 * n_sub * n * n` doubles.
 */
enum BfmStatus bfm_compute_bfm(const double *h, uintptr_t n, uintptr_t n_sub, double *v_out);

/*
 Subcarrier-averaged Frobenius error of `(len / n_ant, n_ant)` amplitude
 arrays.

 # Safety
 `predicted` and `truth` must hold `len` doubles; `out` must be writable.
 */
enum BfmStatus bfm_frobenius_error(const double *predicted,
                                   const double *truth,
                                   uintptr_t len,
                                   uintptr_t n_ant,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BFMLAB_H */
