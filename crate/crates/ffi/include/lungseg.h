#ifndef LUNGSEG_H
#define LUNGSEG_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Sentinel written by `ls_dataset_label` for samples without a label.
 */
#define LS_NO_LABEL -1

/**
 * Result code of every call.
 */
typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_INVALID_ARGUMENT = 2,
  LS_STATUS_SHAPE = 3,
  LS_STATUS_DATA = 4,
  LS_STATUS_IO = 5,
  LS_STATUS_INTERNAL = 6,
  LS_STATUS_PANIC = 7,
} LsStatus;

/**
 * Segmentation loss selector.
 */
typedef enum LsLossKind {
  LS_LOSS_KIND_XE = 0,
  LS_LOSS_KIND_DICE = 1,
  LS_LOSS_KIND_TV = 2,
  LS_LOSS_KIND_XETV = 3,
  LS_LOSS_KIND_KLTV = 4,
} LsLossKind;

/**
 * Opaque in-memory dataset.
 */
typedef struct LsDataset LsDataset;

/**
 * Opaque segmentation network.
 */
typedef struct LsSegmentor LsSegmentor;

/**
 * Loss weights and constants; see `ls_loss_config_default`.
 */
typedef struct LsLossConfig {
  double a;
  double b;
  double c;
  double alpha;
  double beta;
  double epsilon;
  double kappa;
  /**
   * Coarsest (m/8) to finest (m).
   */
  double side_weights[4];
} LsLossConfig;

/**
 * Overlap metrics of one mask pair.
 */
typedef struct LsOverlap {
  double ds;
  double ji;
  double f1;
  double sn;
  double sp;
  double pr;
  double rc;
} LsOverlap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a
 * successful call. Valid until the next call on the same thread.
 */
const char *ls_last_error(void);

/**
 * Static description of a status code.
 */
const char *ls_status_name(enum LsStatus status);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ls_version(void);

/**
 * Generates the seeded synthetic chest X-ray set of `count` `size x size`
 * images (size 32, 64 or 128).
 *
 * # Safety
 * `handle` must be writable. Release with `ls_dataset_free`.
 */
enum LsStatus ls_synth_dataset(size_t count, uint64_t seed, size_t size, struct LsDataset **handle);

/**
 * Sample count and image side length.
 *
 * # Safety
 * `ds` must be a live handle; `len` and `size` must be writable.
 */
enum LsStatus ls_dataset_shape(const struct LsDataset *ds, size_t *len, size_t *size);

/**
 * Copies image `index` (`size * size` values) into `pixels`.
 *
 * # Safety
 * `ds` must be a live handle and `pixels` writable for `size * size` values.
 */
enum LsStatus ls_dataset_image(const struct LsDataset *ds, size_t index, float *pixels);

/**
 * Copies mask `index` into `mask`. Fails with `LS_STATUS_DATA` when the
 * sample has no mask.
 *
 * # Safety
 * `ds` must be a live handle and `mask` writable for `size * size` bytes.
 */
enum LsStatus ls_dataset_mask(const struct LsDataset *ds, size_t index, uint8_t *mask);

/**
 * Class label of sample `index`, or `LS_NO_LABEL`.
 *
 * # Safety
 * `ds` must be a live handle and `label` writable.
 */
enum LsStatus ls_dataset_label(const struct LsDataset *ds, size_t index, int32_t *label);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void ls_dataset_free(struct LsDataset *ds);

/**
 * Writes the default configuration to `cfg`.
 *
 * # Safety
 * `cfg` must be null or valid for writes.
 */
enum LsStatus ls_loss_config_default(struct LsLossConfig *cfg);

/**
 * Loss between a target map `y` and a prediction `yhat` of `n` pixels.
 * When `grad` is non-null it receives the `n` partial derivatives with
 * respect to `yhat`. A null `cfg` selects the defaults.
 *
 * # Safety
 * `y` and `yhat` must point to `n` readable values, `grad` (if non-null)
 * to `n` writable values, `cfg` (if non-null) to a config, `value` must be
 * writable.
 */
enum LsStatus ls_loss(enum LsLossKind kind,
                      const double *y,
                      const double *yhat,
                      size_t n,
                      const struct LsLossConfig *cfg,
                      double *value,
                      double *grad);

/**
 * Segmentor adversarial term over `n` probabilities of the predicted class.
 *
 * # Safety
 * `p_fake` must point to `n` readable values and `value` must be writable.
 */
enum LsStatus ls_segmentor_adv_loss(const double *p_fake, size_t n, double *value);

/**
 * Unsupervised discriminator term from the predicted-class probabilities
 * on `n` real pairs and `n` predicted pairs.
 *
 * # Safety
 * Both inputs must point to `n` readable values and `value` must be writable.
 */
enum LsStatus ls_discriminator_unsup_loss(const double *p_fake_on_real,
                                          const double *p_fake_on_pred,
                                          size_t n,
                                          double *value);

/**
 * Overlap metrics between binary masks (`0` background, `1` foreground).
 *
 * # Safety
 * `truth` and `pred` must point to `rows * cols` readable bytes; `result`
 * must be writable.
 */
enum LsStatus ls_overlap_metrics(const uint8_t *truth,
                                 const uint8_t *pred,
                                 size_t rows,
                                 size_t cols,
                                 struct LsOverlap *result);

/**
 * Average Hausdorff distance in pixels between two binary masks.
 *
 * # Safety
 * As for `ls_overlap_metrics`.
 */
enum LsStatus ls_avg_hausdorff(const uint8_t *truth,
                               const uint8_t *pred,
                               size_t rows,
                               size_t cols,
                               double *result);

/**
 * Mean SSIM between two grayscale images in `[0, 1]`.
 *
 * # Safety
 * `x` and `y` must point to `rows * cols` readable values; `result` must
 * be writable.
 */
enum LsStatus ls_ssim(const double *x, const double *y, size_t rows, size_t cols, double *result);

/**
 * Creates a freshly initialized network of the named variant
 * (e.g. `"PPAU-Net"`) with input side `input_size` (a multiple of 16).
 *
 * # Safety
 * `variant` must be a NUL-terminated string; `handle` must be writable.
 * The handle is released with `ls_segmentor_free`.
 */
enum LsStatus ls_segmentor_new(const char *variant,
                               size_t input_size,
                               size_t base_channels,
                               uint64_t seed,
                               struct LsSegmentor **handle);

/**
 * Loads a network saved by `ls_segmentor_save` or the `lungseg` binary.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `handle` must be writable.
 */
enum LsStatus ls_segmentor_load(const char *path, struct LsSegmentor **handle);

/**
 * # Safety
 * `seg` must be a live handle and `path` a NUL-terminated string.
 */
enum LsStatus ls_segmentor_save(const struct LsSegmentor *seg, const char *path);

/**
 * Input side length expected by `ls_segmentor_predict`.
 *
 * # Safety
 * `seg` must be a live handle; `size` must be writable.
 */
enum LsStatus ls_segmentor_input_size(const struct LsSegmentor *seg, size_t *size);

/**
 * Number of trainable scalars.
 *
 * # Safety
 * `seg` must be a live handle; `count` must be writable.
 */
enum LsStatus ls_segmentor_num_params(const struct LsSegmentor *seg, size_t *count);

/**
 * Lung probability maps for `count` images of `m x m` pixels in `[0, 1]`,
 * stored back to back. `m` must equal the network's input size.
 *
 * # Safety
 * `images` must point to `count * m * m` readable values and `probs` to as
 * many writable values.
 */
enum LsStatus ls_segmentor_predict(const struct LsSegmentor *seg,
                                   const float *images,
                                   size_t count,
                                   size_t m,
                                   float *probs);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `seg` must be null or a handle not yet freed.
 */
void ls_segmentor_free(struct LsSegmentor *seg);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LUNGSEG_H */
