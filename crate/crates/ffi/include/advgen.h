#ifndef ADVGEN_H
#define ADVGEN_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdvgenStatus {
  ADVGEN_STATUS_OK = 0,
  ADVGEN_STATUS_NULL_POINTER = 1,
  ADVGEN_STATUS_INVALID_UTF8 = 2,
  ADVGEN_STATUS_INVALID_ARGUMENT = 3,
  ADVGEN_STATUS_SHAPE = 4,
  ADVGEN_STATUS_NOT_FOUND = 5,
  ADVGEN_STATUS_STATE = 6,
  ADVGEN_STATUS_REJECTED = 7,
  ADVGEN_STATUS_BACKEND = 8,
  ADVGEN_STATUS_IO = 9,
  ADVGEN_STATUS_JSON = 10,
  ADVGEN_STATUS_PANIC = 11,
  ADVGEN_STATUS_INTERNAL = 12,
} AdvgenStatus;

/**
 * Opaque handle to an evaluation service.
 */
typedef struct AdvgenEvalService AdvgenEvalService;

/**
 * Model callback: write a NUL-terminated answer of at most `out_cap` bytes
 * into `out` and return 0, or return nonzero on failure. It may be called
 * from several threads at once.
 */
typedef int32_t (*AdvgenAnswerFn)(void *ctx,
                                  const char *arm,
                                  const char *passage,
                                  const char *question,
                                  char *out,
                                  size_t out_cap);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *advgen_last_error(void);

/**
 * Frees a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void advgen_string_free(char *s);

/**
 * SQuAD answer normalization.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum AdvgenStatus advgen_normalize_answer(const char *text, char **out);

/**
 * Exact match and token F1 of `prediction` against a single gold answer.
 *
 * # Safety
 * String arguments must be NUL-terminated; out pointers must be writable.
 */
enum AdvgenStatus advgen_em_f1(const char *prediction,
                               const char *gold,
                               bool *out_em,
                               double *out_f1);

/**
 * Span-probability matrix of one labelling head.
 *
 * `q` and `k` are row-major `len x d_k`; `out_probs` receives the row-major
 * `len x len` matrix, zero outside the admissible region
 * (`i <= j`, width at most `max_answer_len`, both ends in `[lo, hi)`).
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum AdvgenStatus advgen_sal_forward(const double *q,
                                     const double *k,
                                     size_t len,
                                     size_t d_k,
                                     size_t max_answer_len,
                                     size_t lo,
                                     size_t hi,
                                     double *out_probs);

/**
 * Self-training decision for one ensemble verdict.
 *
 * `verdict_json` is `{"example_id", "predictions": [{"text", "confidence"}],
 * "n_correct"}`; the result is `{"state", "answer"}`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out_json` must be writable.
 */
enum AdvgenStatus advgen_self_train_relabel(const char *verdict_json,
                                            const char *prompted_answer,
                                            size_t keep_at,
                                            size_t relabel_at,
                                            char **out_json);

/**
 * Deterministic arm index for an annotator id.
 *
 * # Safety
 * `annotator_id` must be NUL-terminated; `out_index` must be writable.
 */
enum AdvgenStatus advgen_assign_arm(const char *annotator_id, size_t n_arms, size_t *out_index);

/**
 * n-gram decontamination of JSON passage arrays
 * (`[{"id", "text", "source"}]`). The result is
 * `{"kept", "dropped", "report"}`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out_json` must be writable.
 */
enum AdvgenStatus advgen_decontaminate(const char *candidates_json,
                                       const char *eval_json,
                                       size_t n,
                                       char **out_json);

/**
 * Creates an evaluation service.
 *
 * `config_json` is the service config (at least `{"arms": [...]}`),
 * `passages_json` a passage array. `data_dir` may be null for an
 * in-memory service. With a null `answer_fn` each arm uses the built-in
 * lexical reference model.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum AdvgenStatus advgen_eval_service_new(const char *config_json,
                                          const char *passages_json,
                                          const char *data_dir,
                                          AdvgenAnswerFn answer_fn,
                                          void *ctx,
                                          struct AdvgenEvalService **out);

/**
 * Releases a service. Null is a no-op.
 *
 * # Safety
 * `svc` must come from [`advgen_eval_service_new`] and not be used again.
 */
void advgen_eval_service_free(struct AdvgenEvalService *svc);

/**
 * Starts or resumes a session; writes the session JSON.
 *
 * # Safety
 * Pointers must be valid; `svc` may be shared across threads.
 */
enum AdvgenStatus advgen_eval_service_start_session(const struct AdvgenEvalService *svc,
                                                    const char *annotator_id,
                                                    char **out_json);

/**
 * Submits onboarding answers as a JSON array of `[start, end]` pairs.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AdvgenStatus advgen_eval_service_submit_onboarding(const struct AdvgenEvalService *svc,
                                                        const char *session_id,
                                                        const char *answers_json,
                                                        char **out_json);

/**
 * Submits a question with its answer span (character offsets, end
 * exclusive).
 *
 * # Safety
 * Pointers must be valid.
 */
enum AdvgenStatus advgen_eval_service_submit_question(const struct AdvgenEvalService *svc,
                                                      const char *session_id,
                                                      const char *question,
                                                      size_t answer_start,
                                                      size_t answer_end,
                                                      char **out_json);

/**
 * Records a validator verdict (`valid` is true or false) for a record.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AdvgenStatus advgen_eval_service_validate(const struct AdvgenEvalService *svc,
                                               const char *record_id,
                                               bool valid,
                                               const char *validator_id);

/**
 * Pending records as a JSON array.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AdvgenStatus advgen_eval_service_validation_queue(const struct AdvgenEvalService *svc,
                                                       char **out_json);

/**
 * Per-arm statistics for an opaque arm token.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AdvgenStatus advgen_eval_service_export_stats(const struct AdvgenEvalService *svc,
                                                   const char *arm_token,
                                                   char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADVGEN_H */
