/* C interface for the pqrst ECG delineation toolkit. */

#pragma once

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call in this interface.
 */
typedef enum PqrstStatus {
  PQRST_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PQRST_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  PQRST_STATUS_INVALID_UTF8 = 2,
  /**
   * Filesystem access failed.
   */
  PQRST_STATUS_IO_ERROR = 3,
  /**
   * Input failed validation (malformed file, bad config, bad value).
   */
  PQRST_STATUS_VALIDATION_ERROR = 4,
  /**
   * The library panicked; state may be inconsistent.
   */
  PQRST_STATUS_PANIC = 5,
} PqrstStatus;

/**
 * Wave classes exposed through [`PqrstSegment`].
 */
typedef enum PqrstWaveClass {
  PQRST_WAVE_CLASS_P = 0,
  PQRST_WAVE_CLASS_QRS = 1,
  PQRST_WAVE_CLASS_T = 2,
} PqrstWaveClass;

/**
 * Opaque segment annotation set.
 */
typedef struct PqrstAnnotations PqrstAnnotations;

/**
 * Opaque trained model plus the pipeline configuration used to run it.
 */
typedef struct PqrstModel PqrstModel;

/**
 * Opaque multi-lead ECG record.
 */
typedef struct PqrstRecord PqrstRecord;

/**
 * One delineated segment, in sample indices of its record.
 */
typedef struct PqrstSegment {
  enum PqrstWaveClass class_;
  uint64_t onset;
  uint64_t offset;
  /**
   * Only meaningful when `has_confidence` is true.
   */
  double confidence;
  bool has_confidence;
} PqrstSegment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; do not free.
 */
const char *pqrst_version(void);

/**
 * Message describing this thread's most recent failure; borrowed,
 * valid until the next failing call on the same thread.
 */
const char *pqrst_last_error_message(void);

/**
 * Frees a string previously returned by this library.
 *
 * # Safety
 * `s` must be a pointer obtained from a `pqrst_*` function that
 * transfers string ownership, or null.
 */
void pqrst_string_free(char *s);

/**
 * Reads a record directory (`header.json` + `signal.bin`).
 *
 * # Safety
 * `path` must be a valid C string; `out` must be a valid pointer.
 */
enum PqrstStatus pqrst_record_read(const char *path, struct PqrstRecord **out);

/**
 * Writes a record as a record directory.
 *
 * # Safety
 * `record` must be a live handle from this library; `path` a valid C
 * string.
 */
enum PqrstStatus pqrst_record_write(const struct PqrstRecord *record, const char *path);

/**
 * Generates a synthetic record with known ground truth. Either output
 * pointer may be null when that side is not needed.
 *
 * # Safety
 * `id` must be a valid C string or null; non-null outputs must be
 * valid pointers.
 */
enum PqrstStatus pqrst_record_synth(double duration_s,
                                    uint32_t sampling_rate_hz,
                                    double heart_rate_bpm,
                                    uint32_t n_leads,
                                    double noise_mv,
                                    uint64_t seed,
                                    const char *id,
                                    struct PqrstRecord **out_record,
                                    struct PqrstAnnotations **out_truth);

/**
 * Number of leads; 0 for a null handle.
 *
 * # Safety
 * `record` must be a live handle or null.
 */
uint32_t pqrst_record_n_leads(const struct PqrstRecord *record);

/**
 * Samples per lead; 0 for a null handle.
 *
 * # Safety
 * `record` must be a live handle or null.
 */
uint64_t pqrst_record_n_samples(const struct PqrstRecord *record);

/**
 * Sampling rate in Hz; 0 for a null handle.
 *
 * # Safety
 * `record` must be a live handle or null.
 */
uint32_t pqrst_record_sampling_rate(const struct PqrstRecord *record);

/**
 * Copies one lead's samples (millivolts) into a caller buffer of
 * `buffer_len` floats.
 *
 * # Safety
 * `record` must be a live handle; `buffer` must point to at least
 * `buffer_len` floats.
 */
enum PqrstStatus pqrst_record_copy_lead(const struct PqrstRecord *record,
                                        uint32_t lead,
                                        float *buffer,
                                        uintptr_t buffer_len);

/**
 * Releases a record handle.
 *
 * # Safety
 * `record` must be a handle from this library or null; do not use it
 * afterwards.
 */
void pqrst_record_free(struct PqrstRecord *record);

/**
 * Loads a model checkpoint directory. `config_path` may be null for the
 * default pipeline configuration, or name a toolkit TOML file.
 *
 * # Safety
 * Paths must be valid C strings; `out` must be a valid pointer.
 */
enum PqrstStatus pqrst_model_load(const char *checkpoint_dir,
                                  const char *config_path,
                                  struct PqrstModel **out);

/**
 * Runs delineation on a record: preprocessing, the network, decoding,
 * and post-processing.
 *
 * # Safety
 * `model` and `record` must be live handles; `out` must be valid.
 */
enum PqrstStatus pqrst_model_predict(const struct PqrstModel *model,
                                     const struct PqrstRecord *record,
                                     struct PqrstAnnotations **out);

/**
 * Per-class delineation scores of a record: mean and population std of
 * |0.5 - confidence| over the grid intervals. Both output arrays hold
 * 3 values in P, QRS, T order.
 *
 * # Safety
 * `model` and `record` must be live handles; the outputs must each
 * point to 3 doubles.
 */
enum PqrstStatus pqrst_model_delineation_scores(const struct PqrstModel *model,
                                                const struct PqrstRecord *record,
                                                double *out_means,
                                                double *out_stds);

/**
 * Releases a model handle.
 *
 * # Safety
 * `model` must be a handle from this library or null.
 */
void pqrst_model_free(struct PqrstModel *model);

/**
 * Reads a `.delin.json` annotation file.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be valid.
 */
enum PqrstStatus pqrst_annotations_read(const char *path, struct PqrstAnnotations **out);

/**
 * Writes annotations as `.delin.json`.
 *
 * # Safety
 * `annotations` must be a live handle; `path` a valid C string.
 */
enum PqrstStatus pqrst_annotations_write(const struct PqrstAnnotations *annotations,
                                         const char *path);

/**
 * Number of segments; 0 for a null handle.
 *
 * # Safety
 * `annotations` must be a live handle or null.
 */
uintptr_t pqrst_annotations_len(const struct PqrstAnnotations *annotations);

/**
 * Copies segment `index` into `out`.
 *
 * # Safety
 * `annotations` must be a live handle; `out` must be valid.
 */
enum PqrstStatus pqrst_annotations_segment(const struct PqrstAnnotations *annotations,
                                           uintptr_t index,
                                           struct PqrstSegment *out);

/**
 * Serializes annotations to a JSON string owned by the caller (release
 * with [`pqrst_string_free`]).
 *
 * # Safety
 * `annotations` must be a live handle; `out` must be valid.
 */
enum PqrstStatus pqrst_annotations_to_json(const struct PqrstAnnotations *annotations, char **out);

/**
 * Releases an annotations handle.
 *
 * # Safety
 * `annotations` must be a handle from this library or null.
 */
void pqrst_annotations_free(struct PqrstAnnotations *annotations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
