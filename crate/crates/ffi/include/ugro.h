#ifndef UGRO_H
#define UGRO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UgroStatus {
  UGRO_STATUS_OK = 0,
  UGRO_STATUS_NULL_ARGUMENT = 1,
  UGRO_STATUS_INVALID_UTF8 = 2,
  UGRO_STATUS_INVALID_ARGUMENT = 3,
  UGRO_STATUS_PARSE_ERROR = 4,
  UGRO_STATUS_IO_ERROR = 5,
  UGRO_STATUS_PANIC = 6,
} UgroStatus;

/*
 Opaque dialogue corpus.
 */
typedef struct UgroCorpus UgroCorpus;

/*
 Opaque trained policy with its tokenizer.
 */
typedef struct UgroPolicy UgroPolicy;

/*
 ROUGE F1 scores and their mean.
 */
typedef struct UgroRouge {
  double r1_f1;
  double r2_f1;
  double rl_f1;
  double mean_f1;
} UgroRouge;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *ugro_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *ugro_version(void);

/*
 Releases a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and not have been freed.
 */
void ugro_string_free(char *s);

/*
 Corpus-level BLEU-4 in [0, 1].

 # Safety
 `hyps` and `refs` must point to `n` valid C strings each.
 */
enum UgroStatus ugro_corpus_bleu(const char *const *hyps,
                                 const char *const *refs,
                                 size_t n,
                                 double *out_bleu);

/*
 Mean per-pair ROUGE-1/2/L F1 over `n` pairs.

 # Safety
 `hyps` and `refs` must point to `n` valid C strings each.
 */
enum UgroStatus ugro_corpus_rouge(const char *const *hyps,
                                  const char *const *refs,
                                  size_t n,
                                  struct UgroRouge *out);

/*
 Five-class satisfaction classification report as a JSON object.

 # Safety
 `predictions` and `golds` must point to `n` bytes each; `out_json` must be
 writable.
 */
enum UgroStatus ugro_classification_report_json(const uint8_t *predictions,
                                                const uint8_t *golds,
                                                size_t n,
                                                char **out_json);

/*
 Extracts the satisfaction score (1-5) and explanation from raw scorer
 output. `out_explanation` may be NULL.

 # Safety
 `text` must be a valid C string; `out_score` must be writable.
 */
enum UgroStatus ugro_parse_simulator_output(const char *text,
                                            uint8_t *out_score,
                                            char **out_explanation);

/*
 Offline keyword-coverage oracle. `out_explanation` may be NULL.

 # Safety
 `response` must be a valid C string and `keywords` must point to
 `n_keywords` valid C strings.
 */
enum UgroStatus ugro_scripted_score(const char *response,
                                    const char *const *keywords,
                                    size_t n_keywords,
                                    uint8_t *out_score,
                                    char **out_explanation);

/*
 Index of the highest score; ties go to the lowest index.

 # Safety
 `scores` must point to `n` bytes.
 */
enum UgroStatus ugro_rerank(const uint8_t *scores, size_t n, size_t *out_index);

/*
 Loads a JSONL corpus file.

 # Safety
 `path` must be a valid C string; `out` must be writable.
 */
enum UgroStatus ugro_corpus_load(const char *path, struct UgroCorpus **out);

/*
 Parses JSONL corpus text.

 # Safety
 `jsonl` must be a valid C string; `out` must be writable.
 */
enum UgroStatus ugro_corpus_parse(const char *jsonl, struct UgroCorpus **out);

/*
 Deterministic synthetic booking corpus.

 # Safety
 `out` must be writable.
 */
enum UgroStatus ugro_corpus_synthetic(size_t n_dialogues, uint64_t seed, struct UgroCorpus **out);

/*
 Number of dialogues; 0 for NULL.

 # Safety
 `corpus` must be NULL or a live handle.
 */
size_t ugro_corpus_len(const struct UgroCorpus *corpus);

/*
 Serializes the corpus back to JSONL.

 # Safety
 `corpus` must be a live handle; `out_jsonl` must be writable.
 */
enum UgroStatus ugro_corpus_to_jsonl(const struct UgroCorpus *corpus, char **out_jsonl);

/*
 Releases a corpus handle. NULL is ignored.

 # Safety
 `corpus` must come from this library and not have been freed.
 */
void ugro_corpus_free(struct UgroCorpus *corpus);

/*
 Loads a policy checkpoint written by the `sft` or `ppo` commands.

 # Safety
 `path` must be a valid C string; `out` must be writable.
 */
enum UgroStatus ugro_policy_load(const char *path, struct UgroPolicy **out);

/*
 Vocabulary size of the policy's tokenizer; 0 for NULL.

 # Safety
 `policy` must be NULL or a live handle.
 */
size_t ugro_policy_vocab_size(const struct UgroPolicy *policy);

/*
 Greedy response for a dialogue history given as a JSON array of turns
 (`[{"speaker": "user", "text": "..."}, ...]`).

 # Safety
 `policy` must be a live handle, `history_json` a valid C string and
 `out_text` writable.
 */
enum UgroStatus ugro_policy_generate(const struct UgroPolicy *policy,
                                     const char *history_json,
                                     size_t max_new_tokens,
                                     char **out_text);

/*
 Releases a policy handle. NULL is ignored.

 # Safety
 `policy` must come from this library and not have been freed.
 */
void ugro_policy_free(struct UgroPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UGRO_H */
