#ifndef CLINOTE_H
#define CLINOTE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ClinoteStatus {
  CLINOTE_STATUS_OK = 0,
  CLINOTE_STATUS_NULL_ARGUMENT = 1,
  CLINOTE_STATUS_INVALID_UTF8 = 2,
  CLINOTE_STATUS_INVALID_ARGUMENT = 3,
  CLINOTE_STATUS_PARSE_ERROR = 4,
  CLINOTE_STATUS_MODEL_ERROR = 5,
  CLINOTE_STATUS_VALIDATION_FAILED = 6,
  CLINOTE_STATUS_IO = 7,
  CLINOTE_STATUS_BROKEN_CHAIN = 8,
  CLINOTE_STATUS_OUT_OF_RANGE = 9,
  CLINOTE_STATUS_PANIC = 99,
} ClinoteStatus;

typedef enum ClinoteNoteKind {
  CLINOTE_NOTE_KIND_SOAP = 0,
  CLINOTE_NOTE_KIND_BIRP = 1,
} ClinoteNoteKind;

/**
 * Opaque speaker classifier.
 */
typedef struct ClinoteModel ClinoteModel;

/**
 * Opaque diarized transcript.
 */
typedef struct ClinoteTranscript ClinoteTranscript;

typedef struct ClinoteRouge {
  double precision;
  double recall;
  double f1;
} ClinoteRouge;

typedef struct ClinoteMetrics {
  double accuracy;
  double precision;
  double recall;
  double f1;
} ClinoteMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy of the calling thread's last error message, or null if the last call succeeded.
 */
char *clinote_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void clinote_string_free(char *s);

/**
 * Library version as a static string; do not free.
 */
const char *clinote_version(void);

/**
 * Parses `[0] ... [1] ...` text.
 *
 * # Safety
 * `text` and `source_id` must be NUL-terminated; `out` must be writable.
 */
enum ClinoteStatus clinote_transcript_parse(const char *text,
                                            const char *source_id,
                                            struct ClinoteTranscript **out);

/**
 * # Safety
 * `t` must be null or a live handle.
 */
void clinote_transcript_free(struct ClinoteTranscript *t);

/**
 * # Safety
 * `t` must be a live handle; `out` writable.
 */
enum ClinoteStatus clinote_transcript_len(const struct ClinoteTranscript *t, size_t *out);

/**
 * Speaker code (0 clinician, 1 patient) and text of utterance `index`.
 * `out_text` may be null when only the speaker is wanted.
 *
 * # Safety
 * `t` must be a live handle; out-pointers writable or null as documented.
 */
enum ClinoteStatus clinote_transcript_utterance(const struct ClinoteTranscript *t,
                                                size_t index,
                                                uint8_t *out_speaker,
                                                char **out_text);

/**
 * # Safety
 * `t` must be a live handle; `out` writable.
 */
enum ClinoteStatus clinote_transcript_render(const struct ClinoteTranscript *t, char **out);

/**
 * Loads a model from the JSON written by `clinote train`.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` writable.
 */
enum ClinoteStatus clinote_model_from_json(const char *json, struct ClinoteModel **out);

/**
 * # Safety
 * `m` must be null or a live handle.
 */
void clinote_model_free(struct ClinoteModel *m);

/**
 * Labels one utterance. `out_probs` (may be null) receives
 * `[p_clinician, p_patient]`.
 *
 * # Safety
 * `m` live; `text` NUL-terminated; `out_probs` null or room for two doubles.
 */
enum ClinoteStatus clinote_model_predict(const struct ClinoteModel *m,
                                         const char *text,
                                         uint8_t *out_speaker,
                                         double *out_probs);

/**
 * Segments undiarized text and labels each segment.
 *
 * # Safety
 * `m` live; strings NUL-terminated; `out` writable.
 */
enum ClinoteStatus clinote_model_classify(const struct ClinoteModel *m,
                                          const char *text,
                                          const char *source_id,
                                          struct ClinoteTranscript **out);

/**
 * # Safety
 * Strings NUL-terminated; `out` writable.
 */
enum ClinoteStatus clinote_rouge1(const char *candidate,
                                  const char *reference,
                                  struct ClinoteRouge *out);

/**
 * Metrics from a 2x2 confusion matrix with the patient as positive class.
 *
 * # Safety
 * `out` writable.
 */
enum ClinoteStatus clinote_confusion_metrics(uint64_t tp,
                                             uint64_t fp,
                                             uint64_t tn,
                                             uint64_t fn_,
                                             struct ClinoteMetrics *out);

/**
 * # Safety
 * `out` writable.
 */
enum ClinoteStatus clinote_schema(enum ClinoteNoteKind kind, char **out);

/**
 * Validates a note. Returns `Ok` when it conforms and `ValidationFailed`
 * otherwise; in both cases `out_violations` (may be null) receives a JSON
 * array of `{path, reason, ...}` objects.
 *
 * # Safety
 * `json` NUL-terminated; `out_violations` null or writable.
 */
enum ClinoteStatus clinote_validate_note(const char *json,
                                         enum ClinoteNoteKind kind,
                                         char **out_violations);

/**
 * Renders a valid note as sectioned plain text.
 *
 * # Safety
 * `json` NUL-terminated; `out` writable.
 */
enum ClinoteStatus clinote_render_note(const char *json, enum ClinoteNoteKind kind, char **out);

/**
 * Scans free text for identifiers. `out_count` gets the number of findings;
 * `out_findings` (may be null) a JSON array of `{category, span, excerpt}`.
 *
 * # Safety
 * `text` NUL-terminated; `out_count` writable; `out_findings` null or writable.
 */
enum ClinoteStatus clinote_scan_pii(const char *text, size_t *out_count, char **out_findings);

/**
 * Verifies a patient's hash chain. On success `out_versions` holds the chain
 * length; a broken chain returns `BrokenChain` with the failing version
 * (0 for the header) in `out_broken_at`.
 *
 * # Safety
 * Strings NUL-terminated; out-pointers writable.
 */
enum ClinoteStatus clinote_store_verify(const char *store_dir,
                                        const char *patient_id,
                                        uint64_t *out_versions,
                                        uint64_t *out_broken_at);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLINOTE_H */
