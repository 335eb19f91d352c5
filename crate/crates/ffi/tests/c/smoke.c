#include <math.h>
#include <stdio.h>
#include <string.h>

#include "lungseg.h"

#define CHECK(call)                                                          \
  do {                                                                       \
    LsStatus s_ = (call);                                                    \
    if (s_ != LS_STATUS_OK) {                                                \
      fprintf(stderr, "%s: %s (%s)\n", #call, ls_status_name(s_),            \
              ls_last_error());                                              \
      return 1;                                                              \
    }                                                                        \
  } while (0)

int main(void) {
  double y[4] = {1, 1, 0, 0};
  double yhat[4] = {0.5, 0.5, 0.5, 0.5};
  double grad[4];
  double value;
  LsLossConfig cfg;
  CHECK(ls_loss_config_default(&cfg));
  cfg.alpha = 0.5;
  cfg.beta = 0.5;
  cfg.epsilon = 1e-12;
  CHECK(ls_loss(LS_LOSS_KIND_TV, y, yhat, 4, &cfg, &value, grad));
  if (fabs(value - 0.5) > 1e-9) return 2;

  uint8_t truth[4] = {1, 1, 0, 0};
  uint8_t pred[4] = {1, 0, 0, 0};
  LsOverlap overlap;
  CHECK(ls_overlap_metrics(truth, pred, 2, 2, &overlap));
  if (fabs(overlap.ds - 2.0 / 3.0) > 1e-12) return 3;

  if (ls_loss(LS_LOSS_KIND_TV, NULL, yhat, 4, &cfg, &value, NULL) != LS_STATUS_NULL_POINTER) return 4;
  if (ls_last_error() == NULL) return 5;

  LsDataset *ds = NULL;
  CHECK(ls_synth_dataset(2, 0, 32, &ds));
  size_t len, size;
  CHECK(ls_dataset_shape(ds, &len, &size));
  float image[32 * 32];
  float probs[32 * 32];
  CHECK(ls_dataset_image(ds, 0, image));

  LsSegmentor *seg = NULL;
  CHECK(ls_segmentor_new("PPAU-Net", 32, 2, 0, &seg));
  CHECK(ls_segmentor_predict(seg, image, 1, 32, probs));
  for (size_t i = 0; i < 32 * 32; i++)
    if (!(probs[i] >= 0.0f && probs[i] <= 1.0f)) return 6;
  ls_segmentor_free(seg);
  ls_dataset_free(ds);
  printf("ok %s\n", ls_version());
  return 0;
}
