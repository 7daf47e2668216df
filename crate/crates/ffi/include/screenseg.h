#ifndef SCREENSEG_H
#define SCREENSEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  SS_STATUS_CONFIG = 3,
  SS_STATUS_IO = 4,
  SS_STATUS_CHECKPOINT = 5,
  SS_STATUS_SHAPE = 6,
  SS_STATUS_RUNTIME = 7,
  SS_STATUS_PANIC = 8,
} SsStatus;

// A trained frame classifier.
typedef struct SsClassifier SsClassifier;

// Fold segmenters averaged at inference.
typedef struct SsEnsemble SsEnsemble;

// A single trained segmenter.
typedef struct SsSegmenter SsSegmenter;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on the same thread.
const char *ss_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ss_version(void);

// Pixelwise majority of `raters` stacked masks (`raters * height * width`
// bytes) written to `out` (`height * width` bytes).
//
// # Safety
// Pointers must reference buffers of the stated sizes.
enum SsStatus ss_sample_vote(const uint8_t *masks,
                             size_t raters,
                             size_t height,
                             size_t width,
                             uint8_t *out);

// Pixelwise rater mean written to `out` (`height * width` floats).
//
// # Safety
// Pointers must reference buffers of the stated sizes.
enum SsStatus ss_sample_mean(const uint8_t *masks,
                             size_t raters,
                             size_t height,
                             size_t width,
                             float *out);

// Dice coefficient of two binary masks; two empty masks give 1.
//
// # Safety
// `pred` and `truth` must hold `height * width` bytes.
enum SsStatus ss_dice(const uint8_t *pred,
                      const uint8_t *truth,
                      size_t height,
                      size_t width,
                      double *out);

// Background and foreground weights of a binary target.
//
// # Safety
// `target` must hold `len` doubles.
enum SsStatus ss_class_weights(const double *target, size_t len, double *out_w0, double *out_w1);

// Welch's unequal-variance t-test, two-sided.
//
// # Safety
// `a` and `b` must hold `a_len` and `b_len` doubles.
enum SsStatus ss_welch_t_test(const double *a,
                              size_t a_len,
                              const double *b,
                              size_t b_len,
                              double *out_t,
                              double *out_p,
                              double *out_df);

// A frame passes screening when `logit > threshold`.
//
// # Safety
// `out_pass` must be writable.
enum SsStatus ss_screen(double logit, double threshold, bool *out_pass);

// Load a segmenter checkpoint directory.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
enum SsStatus ss_segmenter_load(const char *dir, struct SsSegmenter **out);

// Foreground probabilities for one frame, `height * width` floats.
//
// # Safety
// `handle` must come from [`ss_segmenter_load`]; buffers must match the size.
enum SsStatus ss_segmenter_predict(struct SsSegmenter *handle,
                                   const float *image,
                                   size_t height,
                                   size_t width,
                                   float *out_probs);

// # Safety
// `handle` must come from [`ss_segmenter_load`] and not be used afterwards.
void ss_segmenter_free(struct SsSegmenter *handle);

// Load a classifier checkpoint directory.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
enum SsStatus ss_classifier_load(const char *dir, struct SsClassifier **out);

// Positive-frame logit for one frame of any size.
//
// # Safety
// `handle` must come from [`ss_classifier_load`]; `image` must hold
// `height * width` floats.
enum SsStatus ss_classifier_logit(struct SsClassifier *handle,
                                  const float *image,
                                  size_t height,
                                  size_t width,
                                  double *out_logit);

// # Safety
// `handle` must come from [`ss_classifier_load`] and not be used afterwards.
void ss_classifier_free(struct SsClassifier *handle);

// Load `count` segmenter checkpoint directories as one ensemble.
//
// # Safety
// `dirs` must hold `count` NUL-terminated strings; `out` must be writable.
enum SsStatus ss_ensemble_load(const char *const *dirs, size_t count, struct SsEnsemble **out);

// Mean member probabilities and the binarised mask for one frame. Either
// output may be null.
//
// # Safety
// `handle` must come from [`ss_ensemble_load`]; non-null buffers must hold
// `height * width` elements.
enum SsStatus ss_ensemble_predict(struct SsEnsemble *handle,
                                  const float *image,
                                  size_t height,
                                  size_t width,
                                  float *out_probs,
                                  uint8_t *out_mask);

// # Safety
// `handle` must come from [`ss_ensemble_load`] and not be used afterwards.
void ss_ensemble_free(struct SsEnsemble *handle);

// Screen the frame with the classifier and segment it with the ensemble
// only when it passes. A screened-out frame gets an empty mask.
//
// # Safety
// Handles must come from the matching loaders; `image` and `out_mask`
// must hold `height * width` elements; `out_logit` may be null.
enum SsStatus ss_pipeline_predict(struct SsClassifier *classifier,
                                  struct SsEnsemble *ensemble,
                                  const float *image,
                                  size_t height,
                                  size_t width,
                                  double threshold,
                                  bool *out_pass,
                                  double *out_logit,
                                  uint8_t *out_mask);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCREENSEG_H */
