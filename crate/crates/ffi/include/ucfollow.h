#ifndef UCFOLLOW_H
#define UCFOLLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UcfStatus {
  UCF_STATUS_OK = 0,
  UCF_STATUS_NULL_POINTER = 1,
  UCF_STATUS_INVALID_ARGUMENT = 2,
  UCF_STATUS_CONTRACT = 3,
  UCF_STATUS_SHAPE = 4,
  UCF_STATUS_FORMAT = 5,
  UCF_STATUS_CONFIG = 6,
  UCF_STATUS_IO = 7,
  UCF_STATUS_PANIC = 8,
} UcfStatus;

typedef struct UcfController UcfController;

// A trained tracking network shared by any number of trackers.
typedef struct UcfModel UcfModel;

typedef struct UcfTracker UcfTracker;

// Normalized box, `0 <= x1 < x2 <= 1` and `0 <= y1 < y2 <= 1` for frames.
typedef struct UcfBox {
  double x1;
  double y1;
  double x2;
  double y2;
} UcfBox;

// Borrowed RGB-D frame: `rgb` holds `width*height*3` values in `[0,1]`,
// row-major and interleaved; `depth` holds `width*height` meters.
typedef struct UcfFrame {
  size_t width;
  size_t height;
  const double *rgb;
  const double *depth;
  double max_depth;
} UcfFrame;

typedef struct UcfControlConfig {
  double kp_lin;
  double ki_lin;
  double kp_ang;
  double ki_ang;
  double v_min;
  double v_max;
  double omega_max;
  double integral_limit;
  double follow_distance;
} UcfControlConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf`, truncated and
// NUL-terminated, and returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t ucf_last_error_message(char *buf, size_t len);

// Intersection over union of two boxes.
//
// # Safety
// `a`, `b` and `out` must be valid pointers.
enum UcfStatus ucf_iou(const struct UcfBox *a, const struct UcfBox *b, double *out);

// Loads a checkpoint written by `ucfollow train` for the default
// architecture.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum UcfStatus ucf_model_load(const char *path, struct UcfModel **out);

// Builds an untrained model with the default architecture and the given
// initialization seed.
//
// # Safety
// `out` must be a valid pointer.
enum UcfStatus ucf_model_new_untrained(uint64_t seed, struct UcfModel **out);

// # Safety
// `model` must be null or a handle from this library not yet freed.
void ucf_model_free(struct UcfModel *model);

// Color-template tracker searching `search_area_factor` times the box size.
//
// # Safety
// `out` must be a valid pointer.
enum UcfStatus ucf_tracker_new_baseline(double search_area_factor, struct UcfTracker **out);

// RGB-D transformer tracker over `model`; with `use_depth == false` the
// depth channel is zeroed before inference.
//
// # Safety
// `model` must be a live model handle and `out` a valid pointer. The
// tracker keeps its own reference, so the model may be freed first.
enum UcfStatus ucf_tracker_new_dtrd(const struct UcfModel *model,
                                    bool use_depth,
                                    struct UcfTracker **out);

// # Safety
// `tracker` must be null or a handle from this library not yet freed.
void ucf_tracker_free(struct UcfTracker *tracker);

// Starts tracking the object inside `bbox` on `frame`.
//
// # Safety
// All pointers must be valid; frame buffers as documented on [`UcfFrame`].
enum UcfStatus ucf_tracker_init(struct UcfTracker *tracker,
                                const struct UcfFrame *frame,
                                const struct UcfBox *bbox);

// Tracks into the next frame. `out_confidence` may be null.
//
// # Safety
// All non-optional pointers must be valid; frame buffers as documented on
// [`UcfFrame`].
enum UcfStatus ucf_tracker_step(struct UcfTracker *tracker,
                                const struct UcfFrame *frame,
                                struct UcfBox *out_box,
                                double *out_confidence);

// Median depth over the central part of `bbox`. Returns
// `UCF_STATUS_CONTRACT` when the box covers no pixel.
//
// # Safety
// All pointers must be valid; frame buffers as documented on [`UcfFrame`].
enum UcfStatus ucf_depth_at_box(const struct UcfFrame *frame,
                                const struct UcfBox *bbox,
                                double *out);

// Fills `out` with the default controller gains and limits.
//
// # Safety
// `out` must be a valid pointer.
enum UcfStatus ucf_control_config_default(struct UcfControlConfig *out);

// Range and bearing PI controllers. `config` may be null for defaults.
//
// # Safety
// `config` must be null or valid, `out` must be valid.
enum UcfStatus ucf_controller_new(const struct UcfControlConfig *config,
                                  struct UcfController **out);

// # Safety
// `controller` must be null or a handle from this library not yet freed.
void ucf_controller_free(struct UcfController *controller);

// One control step. A null `bbox` means the target is lost: the command is
// zero and the integrals hold.
//
// # Safety
// `controller`, `v` and `omega` must be valid; `bbox` may be null.
enum UcfStatus ucf_controller_follow(struct UcfController *controller,
                                     const struct UcfBox *bbox,
                                     double depth,
                                     double dt,
                                     double *v,
                                     double *omega);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UCFOLLOW_H */
