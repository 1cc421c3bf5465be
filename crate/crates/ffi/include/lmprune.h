#ifndef LMPRUNE_H
#define LMPRUNE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LmpStatus {
  LMP_STATUS_OK = 0,
  LMP_STATUS_NULL_POINTER = 1,
  LMP_STATUS_INVALID_UTF8 = 2,
  LMP_STATUS_IO = 3,
  LMP_STATUS_PARSE = 4,
  LMP_STATUS_CHECKPOINT = 5,
  LMP_STATUS_INVALID_ARGUMENT = 6,
  LMP_STATUS_BUFFER_TOO_SMALL = 7,
  LMP_STATUS_NO_LM = 8,
  LMP_STATUS_INTERNAL = 9,
} LmpStatus;

/**
 * Opaque tagger handle.
 */
typedef struct LmpTagger LmpTagger;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *lmp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lmp_version(void);

/**
 * Load a tagger checkpoint. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LmpStatus lmp_tagger_load(const char *path, struct LmpTagger **out);

/**
 * # Safety
 * `t` must come from `lmp_tagger_load` and not be used afterwards. NULL is
 * ignored.
 */
void lmp_tagger_free(struct LmpTagger *t);

/**
 * # Safety
 * `s` must come from this library, or be NULL.
 */
void lmp_string_free(char *s);

/**
 * Tag a whitespace-separated sentence. `*out` receives the labels joined
 * by single spaces; free it with `lmp_string_free`.
 *
 * # Safety
 * Pointers must be valid; `sentence` NUL-terminated.
 */
enum LmpStatus lmp_tagger_predict(const struct LmpTagger *t, const char *sentence, char **out);

/**
 * Number of labels the tagger predicts.
 *
 * # Safety
 * Pointers must be valid.
 */
enum LmpStatus lmp_tagger_num_labels(const struct LmpTagger *t, size_t *out);

/**
 * Surviving layers in the forward and backward LM stacks. Fails with
 * `NO_LM` for taggers without LM features.
 *
 * # Safety
 * Pointers must be valid.
 */
enum LmpStatus lmp_tagger_lm_layers(const struct LmpTagger *t, size_t *fwd, size_t *bwd);

/**
 * Estimated multiply-adds per word. `chars_per_word` scales the character
 * path; pass 0 for the default.
 *
 * # Safety
 * Pointers must be valid.
 */
enum LmpStatus lmp_tagger_flops(const struct LmpTagger *t, double chars_per_word, double *out);

/**
 * Contextual representations for a sentence, row-major `rows x cols`.
 * `*rows` and `*cols` are always set on success or `BUFFER_TOO_SMALL`; call
 * with `cap = 0` to size the buffer.
 *
 * # Safety
 * `buf` must hold `cap` doubles (or be NULL when `cap` is 0).
 */
enum LmpStatus lmp_tagger_embed(const struct LmpTagger *t,
                                const char *sentence,
                                double *buf,
                                size_t cap,
                                size_t *rows,
                                size_t *cols);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LMPRUNE_H */
