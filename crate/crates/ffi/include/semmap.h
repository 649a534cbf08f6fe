#ifndef SEMMAP_H
#define SEMMAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define SEMMAP_OK 0

// The point does not project into the image.
#define SEMMAP_NOT_VISIBLE 1

// The metric has a zero denominator.
#define SEMMAP_UNDEFINED 2

#define SEMMAP_ERR_NULL -1

#define SEMMAP_ERR_IO -2

#define SEMMAP_ERR_PARSE -3

#define SEMMAP_ERR_DOMAIN -4

#define SEMMAP_ERR_CONFIG -5

#define SEMMAP_ERR_GENERATION -6

#define SEMMAP_ERR_METRICS -7

#define SEMMAP_ERR_INVALID_ARGUMENT -8

#define SEMMAP_ERR_OUT_OF_RANGE -9

#define SEMMAP_ERR_PANIC -10

#define SEMMAP_MODE_BASELINE 0

#define SEMMAP_MODE_TCL_MONO 1

#define SEMMAP_MODE_TCL_STEREO 2

// Ground-truth status of a point; values above zero are exclusion reasons.
#define SEMMAP_GT_LABELED 0

#define SEMMAP_GT_TOO_FAR 1

#define SEMMAP_GT_NO_MATCH 2

#define SEMMAP_GT_DEPTH_REJECT 3

#define SEMMAP_GT_VOID 4

#define SEMMAP_GT_INCONSISTENT_2D3D 5

typedef struct SemmapConfusion SemmapConfusion;

typedef struct SemmapDataset SemmapDataset;

typedef struct SemmapGroundTruth SemmapGroundTruth;

typedef struct SemmapLabels SemmapLabels;

typedef struct SemmapIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} SemmapIntrinsics;

typedef struct SemmapProjection {
  double u;
  double v;
  double inv_depth;
} SemmapProjection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last error on this thread, or null. Valid until the next
// failing call on the same thread.
const char *semmap_last_error(void);

void semmap_clear_error(void);

// Loads a sequence directory.
int32_t semmap_dataset_load(const char *dir, struct SemmapDataset **out);

// Generates one of the stock synthetic scenes (`plane`, `street`, `boxes`)
// with uniform label noise `noise`.
int32_t semmap_dataset_synth(const char *scene,
                             uint32_t keyframes,
                             uint32_t points_per_kf,
                             double noise,
                             uint64_t seed,
                             struct SemmapDataset **out);

int32_t semmap_dataset_save(const struct SemmapDataset *ds, const char *dir);

void semmap_dataset_free(struct SemmapDataset *ds);

// Number of keyframes; 0 for a null handle.
uintptr_t semmap_dataset_keyframe_count(const struct SemmapDataset *ds);

// Number of sparse points over all keyframes; 0 for a null handle.
uintptr_t semmap_dataset_point_count(const struct SemmapDataset *ds);

// Number of non-void classes; 0 for a null handle.
uintptr_t semmap_dataset_class_count(const struct SemmapDataset *ds);

int32_t semmap_dataset_intrinsics(const struct SemmapDataset *ds, struct SemmapIntrinsics *out);

// Labels every point. `mode` is one of the `SEMMAP_MODE_*` constants;
// `dist_min` and `window` are ignored for the baseline.
int32_t semmap_label(const struct SemmapDataset *ds,
                     uint32_t mode,
                     double dist_min,
                     uint32_t window,
                     struct SemmapLabels **out);

// Number of labeled slots, in keyframe then point order; 0 for null.
uintptr_t semmap_labels_len(const struct SemmapLabels *labels);

// Class of the point at flat `index`, or -1 when unlabeled.
int32_t semmap_labels_get(const struct SemmapLabels *labels, uintptr_t index, int32_t *out_class);

// Writes the semantic map as PLY. `filter` is null or a comma-separated list
// of class names.
int32_t semmap_labels_export_ply(const struct SemmapDataset *ds,
                                 const struct SemmapLabels *labels,
                                 const char *path,
                                 const char *filter);

void semmap_labels_free(struct SemmapLabels *labels);

// Fuses LiDAR and 2D ground truth with the default thresholds.
int32_t semmap_fuse_gt(const struct SemmapDataset *ds, struct SemmapGroundTruth **out);

uintptr_t semmap_gt_len(const struct SemmapGroundTruth *gt);

// Ground truth of the point at flat `index`: class (or -1) and a
// `SEMMAP_GT_*` status.
int32_t semmap_gt_get(const struct SemmapGroundTruth *gt,
                      uintptr_t index,
                      int32_t *out_class,
                      uint32_t *out_status);

void semmap_gt_free(struct SemmapGroundTruth *gt);

// Empty matrix over `class_count` evaluated classes.
int32_t semmap_confusion_new(uintptr_t class_count, struct SemmapConfusion **out);

// Empty matrix following the dataset palette's evaluation flags.
int32_t semmap_confusion_for_dataset(const struct SemmapDataset *ds, struct SemmapConfusion **out);

int32_t semmap_confusion_accumulate(struct SemmapConfusion *cm, uint8_t predicted, uint8_t gt);

// Adds every ground-truth labeled point of a sequence. With `strict`,
// unlabeled predictions count as false negatives.
int32_t semmap_confusion_add_sequence(struct SemmapConfusion *cm,
                                      const struct SemmapDataset *ds,
                                      const struct SemmapLabels *labels,
                                      const struct SemmapGroundTruth *gt,
                                      bool strict);

// Cell count at row `predicted`, column `gt`; 0 for null or out of range.
uint64_t semmap_confusion_count(const struct SemmapConfusion *cm, uint8_t predicted, uint8_t gt);

int32_t semmap_confusion_iou(const struct SemmapConfusion *cm, uint8_t class_, double *out);

int32_t semmap_confusion_class_accuracy(const struct SemmapConfusion *cm,
                                        uint8_t class_,
                                        double *out);

int32_t semmap_confusion_miou(const struct SemmapConfusion *cm, double *out);

int32_t semmap_confusion_mean_accuracy(const struct SemmapConfusion *cm, double *out);

int32_t semmap_confusion_overall_accuracy(const struct SemmapConfusion *cm, double *out);

void semmap_confusion_free(struct SemmapConfusion *cm);

// Projects a camera-frame point with the default visibility rule (depth
// above 0.1 m, one pixel margin). Returns `SEMMAP_NOT_VISIBLE` otherwise.
int32_t semmap_project(const struct SemmapIntrinsics *intr,
                       double x,
                       double y,
                       double z,
                       struct SemmapProjection *out);

// Camera-frame point of pixel `(u, v)` at inverse depth `inv_depth`, written
// to `out_xyz[0..3]`.
int32_t semmap_unproject(const struct SemmapIntrinsics *intr,
                         double u,
                         double v,
                         double inv_depth,
                         double *out_xyz);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMMAP_H */
