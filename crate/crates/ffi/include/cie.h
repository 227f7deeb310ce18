#ifndef CIE_H
#define CIE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum CieStatus {
  CIE_STATUS_OK = 0,
  CIE_STATUS_NULL_ARGUMENT = 1,
  CIE_STATUS_INVALID_UTF8 = 2,
  CIE_STATUS_LOAD_FAILED = 3,
  CIE_STATUS_INGEST_FAILED = 4,
  CIE_STATUS_PANICKED = 5,
} CieStatus;

/**
 * Opaque engine handle.
 */
typedef struct CieEngine CieEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds an engine from environment and codebook JSON documents.
 *
 * # Safety
 * `environment` and `codebook` must be NUL-terminated strings; `out` must be
 * a valid pointer to write the handle to.
 */
enum CieStatus cie_engine_new(const char *environment,
                              const char *codebook,
                              struct CieEngine **out);

/**
 * Builds an engine over the bundled Astronomy Shop model.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum CieStatus cie_engine_new_bundled(struct CieEngine **out);

/**
 * Releases an engine. Null is ignored.
 *
 * # Safety
 * `engine` must come from `cie_engine_new*` and not be used afterwards.
 */
void cie_engine_free(struct CieEngine *engine);

/**
 * Ingests newline-delimited JSON observations. All or nothing.
 *
 * # Safety
 * `engine` must be a live handle; `ndjson` a NUL-terminated string.
 */
enum CieStatus cie_engine_ingest(const struct CieEngine *engine, const char *ndjson);

/**
 * Handles one tool request frame. Protocol-level failures (bad JSON, unknown
 * method, ...) still return `Ok` with a structured error response.
 *
 * # Safety
 * `engine` must be a live handle, `request` a NUL-terminated string and
 * `response` a valid pointer. The response must be freed with
 * `cie_string_free`.
 */
enum CieStatus cie_engine_handle(const struct CieEngine *engine,
                                 const char *request,
                                 char **response);

/**
 * Current snapshot revision, or 0 for a null handle.
 *
 * # Safety
 * `engine` must be null or a live handle.
 */
uint64_t cie_engine_revision(const struct CieEngine *engine);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void cie_string_free(char *s);

/**
 * Message for the last failed call on this thread. Valid until the next
 * failing call on the same thread.
 */
const char *cie_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *cie_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CIE_H */
