/* C interface to the manta engine.
 *
 * Every call returns a manta_status. On failure a message is available from
 * manta_last_error() on the calling thread until the next call on that thread.
 * Strings handed out through `char** out` parameters are owned by the caller
 * and released with manta_string_free().
 */
#ifndef MANTA_MANTA_H
#define MANTA_MANTA_H

#include <stddef.h>

#if defined(_WIN32)
#  if defined(MANTA_BUILDING_LIBRARY)
#    define MANTA_API __declspec(dllexport)
#  else
#    define MANTA_API __declspec(dllimport)
#  endif
#else
#  define MANTA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct manta_engine manta_engine;
typedef struct manta_server manta_server;

typedef enum manta_status {
    MANTA_OK = 0,
    MANTA_E_INVALID_ARGUMENT,
    MANTA_E_MALFORMED_DECOMPOSITION,
    MANTA_E_BUDGET_EXCEEDED,
    MANTA_E_PROVIDER,
    MANTA_E_DIMENSION_MISMATCH,
    MANTA_E_UNPARSEABLE_VERDICT,
    MANTA_E_EMPTY_ENHANCEMENT,
    MANTA_E_NON_FINITE_INPUT,
    MANTA_E_EMPTY_COLLECTION,
    MANTA_E_CORRUPT_SNAPSHOT,
    MANTA_E_VERSION_MISMATCH,
    MANTA_E_NO_CHECKPOINT,
    MANTA_E_BACKEND_UNAVAILABLE,
    MANTA_E_MODEL_NOT_FOUND,
    MANTA_E_TIMEOUT,
    MANTA_E_UNREADABLE_FILE,
    MANTA_E_SCHEMA,
    MANTA_E_DUPLICATE_ID,
    MANTA_E_MISSING_METADATA,
    MANTA_E_NO_VERDICTS,
    MANTA_E_UNKNOWN_RUN,
    MANTA_E_UNKNOWN_IMAGE,
    MANTA_E_IO,
    MANTA_E_INTERNAL
} manta_status;

MANTA_API const char* manta_version(void);
MANTA_API const char* manta_status_name(manta_status status);
MANTA_API const char* manta_last_error(void);
MANTA_API void manta_string_free(char* s);

/* Exactly one of config_path / config_json may be non-NULL. With both NULL the
 * engine uses mock providers and the stub backend rooted at the working directory. */
MANTA_API manta_status manta_engine_create(const char* config_path, const char* config_json, manta_engine** out);
MANTA_API void manta_engine_destroy(manta_engine* engine);

/* kind: "checkpoint" or "adapter". Writes <collections_dir>/<collection>.mnta. */
MANTA_API manta_status manta_ingest(manta_engine* engine, const char* input_path, const char* collection,
                                    const char* kind, int metadata_baseline, char** out_report_json);

/* options_json may be NULL; see the README for its shape. The run record is
 * written to *out_record_json even when a stage fails, in which case the
 * status names the failure. */
MANTA_API manta_status manta_run(manta_engine* engine, const char* prompt, const char* options_json,
                                 char** out_record_json);

/* Dry run: stops before generation and persists nothing. */
MANTA_API manta_status manta_compose(manta_engine* engine, const char* prompt, const char* options_json,
                                     char** out_record_json);

MANTA_API manta_status manta_refine(manta_engine* engine, const char* run_id, size_t image_index, double denoise,
                                    char** out_record_json);

/* request_json: {"prompts": [...], "against": "base"|"no-enhance"|"random-adapters",
 *                "criteria": [...], "seed": n} */
MANTA_API manta_status manta_evaluate(manta_engine* engine, const char* request_json, char** out_report_json);

/* Routes one HTTP-style request through the service without a socket. */
MANTA_API manta_status manta_request(manta_engine* engine, const char* method, const char* path, const char* body,
                                     int* out_http_status, char** out_body);

/* Starts the HTTP service on a background thread. port 0 picks a free port. */
MANTA_API manta_status manta_server_start(manta_engine* engine, const char* host, int port, int* out_bound_port,
                                          manta_server** out);
MANTA_API void manta_server_stop(manta_server* server);

#ifdef __cplusplus
}
#endif

#endif
