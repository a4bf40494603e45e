#ifndef MARKFEED_H
#define MARKFEED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a call.
typedef enum MfStatus {
  MF_STATUS_OK = 0,
  MF_STATUS_NULL_POINTER = 1,
  MF_STATUS_INVALID_UTF8 = 2,
  MF_STATUS_INVALID_ARGUMENT = 3,
  MF_STATUS_IO = 4,
  MF_STATUS_INFEASIBLE = 5,
  MF_STATUS_BUFFER_TOO_SMALL = 6,
  MF_STATUS_OUT_OF_RANGE = 7,
  MF_STATUS_INTERNAL = 8,
} MfStatus;

// Measurement level for agreement.
typedef enum MfLevel {
  MF_LEVEL_NOMINAL = 0,
  MF_LEVEL_INTERVAL = 1,
} MfLevel;

// An annotator assignment plan.
typedef struct MfPlan MfPlan;

// A loaded model with its vocabularies.
typedef struct MfTranslator MfTranslator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *mf_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void mf_string_free(char *s);

// Translation edit rate of one hypothesis against one reference, as a
// fraction of the reference length.
//
// # Safety
// Pointers must be valid NUL-terminated strings and a writable `double`.
enum MfStatus mf_ter(const char *hyp, const char *reference, double *out);

// Corpus BLEU in [0, 100] over `n` hypothesis/reference pairs.
//
// # Safety
// `hyps` and `refs` must point to `n` valid strings each.
enum MfStatus mf_bleu(const char *const *hyps, const char *const *refs, size_t n, double *out);

// Marks the hypothesis tokens that are not part of a longest common
// subsequence with the reference. Writes one byte per token (1 = marked)
// into `flags`. `out_len` always receives the token count; when it exceeds
// `capacity` nothing is written and the status is buffer-too-small.
//
// # Safety
// `flags` must have room for `capacity` bytes (it may be null when
// `capacity` is 0).
enum MfStatus mf_simulate_markings(const char *hyp,
                                   const char *reference,
                                   uint8_t *flags,
                                   size_t capacity,
                                   size_t *out_len);

// Krippendorff's alpha for a row-major `n_units` x `n_raters` matrix.
// Missing ratings are NaN.
//
// # Safety
// `values` must point to `n_units * n_raters` doubles.
enum MfStatus mf_alpha(const double *values,
                       size_t n_units,
                       size_t n_raters,
                       enum MfLevel level,
                       double *out);

// Assigns talk parts and feedback modes to annotators.
//
// # Safety
// `talks` and `annotators` must point to the given number of strings;
// `out` must be writable.
enum MfStatus mf_plan_assign(const char *const *talks,
                             size_t n_talks,
                             const char *const *annotators,
                             size_t n_annotators,
                             uint64_t seed,
                             struct MfPlan **out);

// Number of entries in the plan.
//
// # Safety
// `plan` must be a live handle.
enum MfStatus mf_plan_len(const struct MfPlan *plan, size_t *out);

// Entry `index` as a JSON object with `talk_id`, `part`, `annotator_id`
// and `mode`. Free the result with [`mf_string_free`].
//
// # Safety
// `plan` must be a live handle and `out` writable.
enum MfStatus mf_plan_entry(const struct MfPlan *plan, size_t index, char **out);

// Checks the plan against every assignment constraint and reports the
// number of violations (0 for a valid plan).
//
// # Safety
// `plan` must be a live handle.
enum MfStatus mf_plan_verify(const struct MfPlan *plan, size_t *out_violations);

// Releases a plan. Null is ignored.
//
// # Safety
// `plan` must come from [`mf_plan_assign`] and not have been freed.
void mf_plan_free(struct MfPlan *plan);

// Loads vocabularies from a `prepare` output directory and a checkpoint
// trained against them.
//
// # Safety
// Paths must be valid strings; `out` must be writable.
enum MfStatus mf_translator_open(const char *prepared_dir,
                                 const char *checkpoint,
                                 struct MfTranslator **out);

// Translates one sentence; a beam width of 0 or 1 decodes greedily.
// Free the result with [`mf_string_free`].
//
// # Safety
// `translator` must be a live handle, `source` a valid string and `out`
// writable.
enum MfStatus mf_translator_translate(const struct MfTranslator *translator,
                                      const char *source,
                                      size_t beam_width,
                                      char **out);

// Releases a translator. Null is ignored.
//
// # Safety
// `translator` must come from [`mf_translator_open`] and not have been
// freed.
void mf_translator_free(struct MfTranslator *translator);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARKFEED_H */
