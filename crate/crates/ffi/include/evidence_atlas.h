#ifndef EVIDENCE_ATLAS_H
#define EVIDENCE_ATLAS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EaStatus {
  EA_STATUS_OK = 0,
  EA_STATUS_NULL_POINTER = 1,
  EA_STATUS_INVALID_UTF8 = 2,
  EA_STATUS_INVALID_ARGUMENT = 3,
  EA_STATUS_IO = 4,
  EA_STATUS_PARSE = 5,
  EA_STATUS_NOT_FOUND = 6,
  EA_STATUS_INTERNAL = 7,
} EaStatus;

/*
 Synonym dictionary for concept matching.
 */
typedef struct EaDictionary EaDictionary;

/*
 Read-only API over an ingested store.
 */
typedef struct EaService EaService;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static string; do not free.
 */
const char *ea_version(void);

/*
 Copy of the last error message on this thread, or NULL when there is none.
 Free with `ea_string_free`.
 */
char *ea_last_error(void);

/*
 # Safety
 `s` must come from this library and not have been freed. NULL is ignored.
 */
void ea_string_free(char *s);

/*
 Detect abbreviation definitions in `text`; writes a JSON array to `out`.

 # Safety
 `text` must be a NUL-terminated string; `out` must be writable.
 */
enum EaStatus ea_abbreviations(const char *text, char **out);

/*
 Load an ontology TSV and an optional synonym TSV (`synonyms` may be NULL).

 # Safety
 Paths must be NUL-terminated strings; `out` must be writable.
 */
enum EaStatus ea_dictionary_load(const char *ontology,
                                 const char *synonyms,
                                 struct EaDictionary **out);

/*
 Leftmost-longest concept matches in `text` as a JSON array.

 # Safety
 `dict` must be a live handle; `text` NUL-terminated; `out` writable.
 */
enum EaStatus ea_dictionary_match(const struct EaDictionary *dict, const char *text, char **out);

/*
 # Safety
 `dict` must come from `ea_dictionary_load` and not have been freed. NULL is ignored.
 */
void ea_dictionary_free(struct EaDictionary *dict);

/*
 Ingest a feed file with the given config; writes the ingest report as JSON.

 # Safety
 Paths must be NUL-terminated strings; `out` must be writable.
 */
enum EaStatus ea_ingest(const char *config, const char *feed, char **out);

/*
 Open the store named by a config file for querying.

 # Safety
 `config` must be NUL-terminated; `out` must be writable.
 */
enum EaStatus ea_service_open(const char *config, struct EaService **out);

/*
 Concept suggestions for a prefix; `role` may be NULL.

 # Safety
 `svc` must be a live handle; strings NUL-terminated; `out` writable.
 */
enum EaStatus ea_service_autocomplete(const struct EaService *svc,
                                      const char *prefix,
                                      const char *role,
                                      char **out);

/*
 Search with a JSON request body; writes the JSON response.

 # Safety
 `svc` must be a live handle; `request` NUL-terminated; `out` writable.
 */
enum EaStatus ea_service_search(const struct EaService *svc, const char *request, char **out);

/*
 Evidence map for a JSON query.

 # Safety
 `svc` must be a live handle; `query` NUL-terminated; `out` writable.
 */
enum EaStatus ea_service_map(const struct EaService *svc, const char *query, char **out);

/*
 Annotated document view.

 # Safety
 `svc` must be a live handle; `doc_id` NUL-terminated; `out` writable.
 */
enum EaStatus ea_service_document(const struct EaService *svc, const char *doc_id, char **out);

/*
 # Safety
 `svc` must come from `ea_service_open` and not have been freed. NULL is ignored.
 */
void ea_service_free(struct EaService *svc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVIDENCE_ATLAS_H */
