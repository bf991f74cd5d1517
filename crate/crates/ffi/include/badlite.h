#ifndef BADLITE_H
#define BADLITE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdint.h>

/**
 * Result codes. Values are stable.
 */
typedef enum BadliteStatus {
  BADLITE_STATUS_OK = 0,
  BADLITE_STATUS_PARSE_ERROR = 1,
  BADLITE_STATUS_COMPILE_ERROR = 2,
  BADLITE_STATUS_DATASET_NOT_FOUND = 3,
  BADLITE_STATUS_DUPLICATE_NAME = 4,
  BADLITE_STATUS_PRIMARY_KEY_VIOLATION = 5,
  BADLITE_STATUS_ACTIVE_FUNCTION_ON_PLAIN_DATASET = 6,
  BADLITE_STATUS_CHANNEL_OVERRUN = 7,
  BADLITE_STATUS_BROKER_UNREACHABLE = 8,
  BADLITE_STATUS_MALFORMED_RECORD = 9,
  BADLITE_STATUS_BROKER_NOT_FOUND = 10,
  BADLITE_STATUS_EXPECTATION_FAILED = 11,
  BADLITE_STATUS_IO = 12,
  /**
   * Null pointer or non-UTF-8 string argument.
   */
  BADLITE_STATUS_INVALID_ARGUMENT = 100,
  /**
   * A Rust panic was caught at the boundary.
   */
  BADLITE_STATUS_PANIC = 101,
} BadliteStatus;

/**
 * Opaque engine handle.
 */
typedef struct BadliteEngine BadliteEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an engine. `config_json` is a cluster configuration object, or
 * null for one node on a virtual clock.
 *
 * # Safety
 * `config_json` is null or a NUL-terminated string; `out` is valid for
 * one pointer write.
 */
enum BadliteStatus badlite_engine_new(const char *config_json, struct BadliteEngine **out);

/**
 * # Safety
 * `engine` is null or a handle from [`badlite_engine_new`]; it must not
 * be used afterwards.
 */
void badlite_engine_free(struct BadliteEngine *engine);

/**
 * Drops broker traffic instead of sending it over HTTP.
 *
 * # Safety
 * `engine` is a live handle.
 */
enum BadliteStatus badlite_engine_discard_deliveries(struct BadliteEngine *engine);

/**
 * Runs a statement script; `*out_json` receives a JSON array with one
 * result object per statement.
 *
 * # Safety
 * `engine` is a live handle, `script` a NUL-terminated string, `out_json`
 * valid for one pointer write.
 */
enum BadliteStatus badlite_run_script(struct BadliteEngine *engine,
                                      const char *script,
                                      char **out_json);

/**
 * Feeds one JSON record to a started feed.
 *
 * # Safety
 * `engine` is a live handle; `feed` and `record` are NUL-terminated.
 */
enum BadliteStatus badlite_ingest(struct BadliteEngine *engine,
                                  const char *feed,
                                  const char *record);

/**
 * Subscribes to a channel. `args_json` is a JSON array of arguments;
 * `*out_id` receives the subscription id.
 *
 * # Safety
 * `engine` is a live handle; string arguments are NUL-terminated;
 * `out_id` is valid for one pointer write.
 */
enum BadliteStatus badlite_subscribe(struct BadliteEngine *engine,
                                     const char *channel,
                                     const char *args_json,
                                     const char *broker,
                                     char **out_id);

/**
 * Moves virtual clocks forward and runs due channel executions.
 * `*out_json` (if not null) receives `[{"channel", "execution"}]`.
 *
 * # Safety
 * `engine` is a live handle; `out_json` is null or valid for one pointer
 * write.
 */
enum BadliteStatus badlite_advance(struct BadliteEngine *engine, int64_t micros, char **out_json);

/**
 * Fetches persisted results of a lazy channel as a JSON array.
 *
 * # Safety
 * `engine` is a live handle; string arguments are NUL-terminated;
 * `out_json` is valid for one pointer write.
 */
enum BadliteStatus badlite_pull(struct BadliteEngine *engine,
                                const char *channel,
                                const char *execution_time,
                                const char *subscription_id,
                                char **out_json);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *badlite_last_error_message(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` is null or was returned by this library and not yet freed.
 */
void badlite_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BADLITE_H */
