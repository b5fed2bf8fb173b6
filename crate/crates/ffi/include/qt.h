#ifndef QT_FFI_H
#define QT_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QtStatus {
  QT_STATUS_OK = 0,
  QT_STATUS_NULL_POINTER = 1,
  QT_STATUS_INVALID_UTF8 = 2,
  QT_STATUS_INVALID_ARGUMENT = 3,
  QT_STATUS_BUFFER_TOO_SMALL = 4,
  QT_STATUS_IO = 5,
  QT_STATUS_CHECKPOINT = 6,
  QT_STATUS_TOKENIZER_MISMATCH = 7,
  QT_STATUS_PARSE = 8,
  QT_STATUS_EXTRACTION = 9,
  QT_STATUS_PANIC = 10,
} QtStatus;

/**
 * A loaded model.
 */
typedef struct QtModel QtModel;

/**
 * ROUGE F1 scores of one system text against one reference.
 */
typedef struct QtRouge {
  double rouge1;
  double rouge2;
  double rouge_l;
} QtRouge;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint file. On success `*out` owns a model to be released
 * with `qt_model_free`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum QtStatus qt_model_load(const char *path, struct QtModel **out);

/**
 * Loads a checkpoint from memory.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` must be valid.
 */
enum QtStatus qt_model_load_bytes(const uint8_t *bytes, size_t len, struct QtModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from a load call and not be freed twice.
 */
void qt_model_free(struct QtModel *model);

/**
 * Sentence heads, per-head dimension and codebook size. Any output
 * pointer may be null.
 *
 * # Safety
 * Non-null pointers must be valid for writes.
 */
enum QtStatus qt_model_dims(const struct QtModel *model,
                            size_t *heads,
                            size_t *head_dim,
                            size_t *codebook_size);

/**
 * Encodes one sentence into `heads * head_dim` floats, head-major.
 * `*written` always receives the required length, so a call with
 * `capacity` 0 sizes the buffer.
 *
 * # Safety
 * `out` must hold `capacity` floats; `written` may be null.
 */
enum QtStatus qt_model_encode(const struct QtModel *model,
                              const char *sentence,
                              float *out,
                              size_t capacity,
                              size_t *written);

/**
 * Nearest code of each head for one sentence.
 *
 * # Safety
 * `out` must hold `capacity` values; `written` may be null.
 */
enum QtStatus qt_model_assign(const struct QtModel *model,
                              const char *sentence,
                              uint32_t *out,
                              size_t capacity,
                              size_t *written);

/**
 * General summaries for every entity in `reviews_jsonl` (one review per
 * line, as in the training corpus). `config_json` holds extraction
 * settings and may be null for defaults. `*out` receives one summary JSON
 * object per line; free it with `qt_string_free`. Entities without
 * usable sentences are skipped.
 *
 * # Safety
 * Strings must be nul-terminated; `out` must be valid.
 */
enum QtStatus qt_model_summarize(const struct QtModel *model,
                                 const char *reviews_jsonl,
                                 const char *config_json,
                                 char **out);

/**
 * ROUGE-1, ROUGE-2 and ROUGE-L F1 of `system` against `reference`.
 *
 * # Safety
 * Strings must be nul-terminated; `out` must be valid.
 */
enum QtStatus qt_rouge(const char *system, const char *reference, struct QtRouge *out);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void qt_string_free(char *s);

/**
 * Message of the last failed call on this thread, or null after a
 * successful call. Valid until the next library call on the thread.
 */
const char *qt_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *qt_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QT_FFI_H */
