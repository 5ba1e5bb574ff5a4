#ifndef OVERSIGHT_OVERSIGHT_H
#define OVERSIGHT_OVERSIGHT_H

/*
 * C interface to the oversight library.
 *
 * Structured values cross the boundary as UTF-8 JSON.  Every string returned
 * through a `char** out` parameter is owned by the caller and released with
 * oversight_string_free().  On failure a function returns a nonzero status
 * and oversight_last_error() describes it as {code, message, detail}; the
 * description is thread-local and valid until the next call on that thread.
 */

#include <stddef.h>

#if defined(OVERSIGHT_BUILDING_LIBRARY)
#define OVERSIGHT_API __attribute__((visibility("default")))
#else
#define OVERSIGHT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum oversight_status {
  OVERSIGHT_OK = 0,
  OVERSIGHT_INVALID_ARGUMENT = 1,
  OVERSIGHT_MALFORMED_TREE = 2,
  OVERSIGHT_DUPLICATE_SIBLING = 3,
  OVERSIGHT_WRONG_ROOT_COUNT = 4,
  OVERSIGHT_PROCESSED_NODE_MUTATED = 5,
  OVERSIGHT_ROOT_SET_CHANGED = 6,
  OVERSIGHT_MISSING_SLOT = 7,
  OVERSIGHT_UNKNOWN_SLOT = 8,
  OVERSIGHT_RESIDUAL_PLACEHOLDER = 9,
  OVERSIGHT_TEMPLATE_INTEGRITY = 10,
  OVERSIGHT_TRANSPORT_ERROR = 11,
  OVERSIGHT_BACKEND_REFUSAL = 12,
  OVERSIGHT_SCRIPT_EXHAUSTED = 13,
  OVERSIGHT_STORAGE_ERROR = 14,
  OVERSIGHT_TREE_INIT_FAILED = 15,
  OVERSIGHT_SESSION_NOT_AWAITING = 16,
  OVERSIGHT_NODE_MISMATCH = 17,
  OVERSIGHT_SESSION_NOT_FOUND = 18,
  OVERSIGHT_SESSION_INCOMPLETE = 19,
  OVERSIGHT_JUDGE_PARSE_ERROR = 20,
  OVERSIGHT_EMPTY_RUBRIC_SET = 21,
  OVERSIGHT_ID_MISMATCH = 22,
  OVERSIGHT_LENGTH_MISMATCH = 23,
  OVERSIGHT_NO_USER_TURNS = 24,
  OVERSIGHT_EMPTY_BATCH = 25,
  OVERSIGHT_INTENT_SET_MISMATCH = 26,
  OVERSIGHT_CAPACITY = 27,
  OVERSIGHT_REPLAY_MISMATCH = 28,
  OVERSIGHT_CONFIG = 29,
  OVERSIGHT_AWAITING_ANSWER = 30,
  OVERSIGHT_INTERNAL = 99
} oversight_status;

/* Configuration, model backends and storage root shared by every call. */
typedef struct oversight_context oversight_context;

OVERSIGHT_API const char* oversight_version(void);
OVERSIGHT_API const char* oversight_status_name(oversight_status status);
OVERSIGHT_API const char* oversight_last_error(void);
OVERSIGHT_API void oversight_string_free(char* s);

/*
 * config_path: JSON config file, or NULL for defaults.
 * overrides_json: flat object applied after the environment, or NULL:
 *   {"storage_root", "listen", "fixed_clock", "prd_cadence", "turn_cap",
 *    "max_sessions", "seed", "bearer_token", "prompts_dir",
 *    "roles": {<role or "default">: {...backend fields...}}}
 */
OVERSIGHT_API oversight_status oversight_context_create(const char* config_path, const char* overrides_json,
                                                        oversight_context** out);
OVERSIGHT_API void oversight_context_destroy(oversight_context* ctx);
/* Effective configuration as JSON, secrets redacted. */
OVERSIGHT_API oversight_status oversight_context_config(oversight_context* ctx, char** out_json);

/* Stored sessions, one transition per call.  Bodies mirror the REST API. */
OVERSIGHT_API oversight_status oversight_session_create(oversight_context* ctx, const char* request_json,
                                                        char** out_json);
OVERSIGHT_API oversight_status oversight_session_next(oversight_context* ctx, const char* session_id,
                                                      char** out_json);
OVERSIGHT_API oversight_status oversight_session_answer(oversight_context* ctx, const char* session_id,
                                                        const char* request_json, char** out_json);
OVERSIGHT_API oversight_status oversight_session_tree(oversight_context* ctx, const char* session_id,
                                                      char** out_json);
OVERSIGHT_API oversight_status oversight_session_prd(oversight_context* ctx, const char* session_id,
                                                     const char* request_json, char** out_json);
OVERSIGHT_API oversight_status oversight_session_status(oversight_context* ctx, const char* session_id,
                                                        char** out_json);

/*
 * Full session against a simulated user:
 *   {"intent": path, "oracle"?: path, "simulator"?: "oracle"|"model",
 *    "rubrics"?: path, "session_id"?: str, "intermediate"?: bool, "evaluate"?: bool}
 * Artifacts land under {storage_root}/sessions/{id}/.
 */
OVERSIGHT_API oversight_status oversight_run(oversight_context* ctx, const char* request_json, char** out_json);

/* Re-executes a stored session from its transcript into target_root. */
OVERSIGHT_API oversight_status oversight_replay(oversight_context* ctx, const char* session_id,
                                                const char* target_root, char** out_json);

/* Judge a document: {"prd": text, "rubrics": rubric-tree JSON, "strict_indicator"?: bool}. */
OVERSIGHT_API oversight_status oversight_evaluate(oversight_context* ctx, const char* request_json,
                                                 char** out_report_json, char** out_markdown);
/* Rubric tree extracted from a reference document. */
OVERSIGHT_API oversight_status oversight_generate_rubrics(oversight_context* ctx, const char* reference_prd,
                                                          char** out_json);

/* Rewards for a JSONL trace file; writes rewards.json and advantages.{bin,json} into out_dir when non-NULL. */
OVERSIGHT_API oversight_status oversight_rewards(const char* traces_path, double epsilon, const char* out_dir,
                                                char** out_json);

/* Benchmark from a bench config file; report.{json,md} under out_dir. */
OVERSIGHT_API oversight_status oversight_benchmark(const char* bench_config_path, const char* out_dir,
                                                   char** out_report_json);
/* reports_json: array of benchmark reports.  Returns the delta table. */
OVERSIGHT_API oversight_status oversight_compare(const char* reports_json, char** out_json, char** out_markdown);

/* Feedback parsing as the engine sees it. */
OVERSIGHT_API oversight_status oversight_parse_feedback(const char* answer, char** out_json);

/* HTTP service.  start returns once listening; serve blocks until stopped. */
OVERSIGHT_API oversight_status oversight_server_start(oversight_context* ctx, int* out_port);
OVERSIGHT_API oversight_status oversight_server_serve(oversight_context* ctx);
OVERSIGHT_API oversight_status oversight_server_stop(oversight_context* ctx);

#ifdef __cplusplus
}
#endif

#endif /* OVERSIGHT_OVERSIGHT_H */
