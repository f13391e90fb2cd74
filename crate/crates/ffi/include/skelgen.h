#ifndef SKELGEN_H
#define SKELGEN_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SkgStatus {
  SKG_STATUS_OK = 0,
  SKG_STATUS_NULL_ARGUMENT = 1,
  SKG_STATUS_INVALID_ARGUMENT = 2,
  SKG_STATUS_IO = 3,
  SKG_STATUS_MODEL = 4,
  SKG_STATUS_PANIC = 5,
} SkgStatus;

typedef enum SkgRepr {
  SKG_REPR_SURFACE = 0,
  SKG_REPR_NOMINALIZED = 1,
  SKG_REPR_ABSTRACT = 2,
} SkgRepr;

/**
 * Pronoun, category and stop-noun lexicons.
 */
typedef struct SkgLexicons SkgLexicons;

/**
 * A trained model with its vocabularies.
 */
typedef struct SkgModel SkgModel;

/**
 * Scores of one generated story against its reference.
 */
typedef struct SkgStoryScore {
  /**
   * Story-level METEOR-lite, 0 to 100.
   */
  double meteor_lite;
  double skeleton_distance;
  size_t distinct_entities;
  size_t reference_distinct_entities;
} SkgStoryScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library from the same thread.
 */
const char *skg_last_error(void);

/**
 * Library version as a static string.
 */
const char *skg_version(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void skg_string_free(char *s);

/**
 * Loads the lexicons compiled into the library.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum SkgStatus skg_lexicons_bundled(struct SkgLexicons **out);

/**
 * Loads `pronouns.txt`, `categories.tsv` and `stop_nouns.txt` from `dir`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SkgStatus skg_lexicons_from_dir(const char *dir, struct SkgLexicons **out);

/**
 * # Safety
 * `lex` must be NULL or a handle from this library that was not yet freed.
 */
void skg_lexicons_free(struct SkgLexicons *lex);

/**
 * Extracts the entity skeleton of a five-sentence story and writes it as
 * JSON (`{"repr": ..., "slots": [...]}`) to `out_json`.
 *
 * # Safety
 * `sentences` must point to `count` NUL-terminated strings; `lex` must be a
 * live handle and `out_json` a valid pointer.
 */
enum SkgStatus skg_extract_skeleton(const struct SkgLexicons *lex,
                                    const char *const *sentences,
                                    size_t count,
                                    enum SkgRepr repr,
                                    char **out_json);

/**
 * Writes the five presence bits of the story's central chain to `out`.
 *
 * # Safety
 * As [`skg_extract_skeleton`]; `out` must have room for five bytes.
 */
enum SkgStatus skg_presence(const struct SkgLexicons *lex,
                            const char *const *sentences,
                            size_t count,
                            uint8_t *out);

/**
 * METEOR-lite of one hypothesis sentence against one reference, in [0, 1].
 *
 * # Safety
 * `hypothesis` and `reference` must be NUL-terminated strings and `out` a
 * valid pointer.
 */
enum SkgStatus skg_meteor(const char *hypothesis, const char *reference, double *out);

/**
 * Scores a generated five-sentence story against its reference.
 *
 * # Safety
 * Both story arrays must hold five NUL-terminated strings; `lex` must be a
 * live handle and `out` a valid pointer.
 */
enum SkgStatus skg_score_story(const struct SkgLexicons *lex,
                               const char *const *reference,
                               const char *const *generated,
                               size_t count,
                               struct SkgStoryScore *out);

/**
 * Loads a checkpoint written by `skelgen train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SkgStatus skg_model_load(const char *path, struct SkgModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from this library that was not yet freed.
 */
void skg_model_free(struct SkgModel *model);

/**
 * Model configuration and vocabulary sizes as JSON.
 *
 * # Safety
 * `model` must be a live handle and `out_json` a valid pointer.
 */
enum SkgStatus skg_model_info(const struct SkgModel *model, char **out_json);

/**
 * Greedily generates a story for every line of `corpus_jsonl` (the corpus
 * format read by `skelgen generate`). Missing DII are copied from the SIS.
 * Writes one `{"id", "sentences"}` JSON line per story to `out_jsonl`.
 *
 * # Safety
 * `model` and `lex` must be live handles, `corpus_jsonl` a NUL-terminated
 * string and `out_jsonl` a valid pointer.
 */
enum SkgStatus skg_model_generate(const struct SkgModel *model,
                                  const struct SkgLexicons *lex,
                                  const char *corpus_jsonl,
                                  size_t max_len,
                                  char **out_jsonl);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKELGEN_H */
