#ifndef PROOFGYM_H
#define PROOFGYM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  PG_LAW_LEFT_ID = 0,
  PG_LAW_RIGHT_ID = 1,
} PgLaw;

typedef enum {
  PG_STATUS_OK = 0,
  PG_STATUS_NULL_ARGUMENT = 1,
  PG_STATUS_INVALID_UTF8 = 2,
  PG_STATUS_PARSE = 3,
  /**
   * The engine rejected a tactic or a theorem.
   */
  PG_STATUS_ENGINE = 4,
  /**
   * The proof has no open goal.
   */
  PG_STATUS_NO_GOAL = 5,
  PG_STATUS_IO = 6,
  PG_STATUS_MODEL = 7,
  /**
   * The protocol server received `QUIT`.
   */
  PG_STATUS_QUIT = 8,
  PG_STATUS_PANIC = 9,
} PgStatus;

/**
 * Trained tactic model.
 */
typedef struct PgModel PgModel;

/**
 * Line-protocol server.
 */
typedef struct PgServer PgServer;

/**
 * One proof in the rewrite domain.
 */
typedef struct PgSession PgSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread. Valid until the next call
 * into the library on the same thread; never null.
 */
const char *pg_last_error(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void pg_string_free(char *s);

PgServer *pg_server_new(void);

/**
 * # Safety
 * `server` must come from [`pg_server_new`] and not have been freed.
 */
void pg_server_free(PgServer *server);

/**
 * Handles one request line. `*response` receives the response line, or
 * null for a blank request. Protocol-level errors are `ERR` responses with
 * status `Ok`.
 *
 * # Safety
 * `server` must be live, `line` a NUL-terminated string and `response`
 * writable.
 */
PgStatus pg_server_exec(PgServer *server, const char *line, char **response);

/**
 * Starts a proof of a rewrite-domain theorem given as an s-expression.
 *
 * # Safety
 * `theorem` must be a NUL-terminated string and `out` writable.
 */
PgStatus pg_session_start(const char *theorem, PgSession **out);

/**
 * # Safety
 * `session` must come from [`pg_session_start`] and not have been freed.
 */
void pg_session_free(PgSession *session);

/**
 * Rewrites the current goal at a 1-based preorder position.
 *
 * # Safety
 * `session` must be live.
 */
PgStatus pg_session_rewrite(PgSession *session, size_t pos, PgLaw law);

/**
 * # Safety
 * `session` must be live.
 */
PgStatus pg_session_reflexivity(PgSession *session);

/**
 * # Safety
 * `session` must be live.
 */
PgStatus pg_session_undo(PgSession *session);

/**
 * Current goal as an s-expression; `NoGoal` once the proof is complete.
 *
 * # Safety
 * `session` must be live and `out` writable.
 */
PgStatus pg_session_goal(const PgSession *session, char **out);

/**
 * # Safety
 * `session` must be live and `out` writable.
 */
PgStatus pg_session_is_complete(const PgSession *session, bool *out);

/**
 * Loads a toy tactic checkpoint written by `proofgym train --task tac`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
PgStatus pg_model_load(const char *path, PgModel **out);

/**
 * # Safety
 * `model` must come from [`pg_model_load`] and not have been freed.
 */
void pg_model_free(PgModel *model);

/**
 * Greedy proof synthesis, optionally with fallback to the reference
 * prover. Writes whether the proof completed and how many steps the
 * reference prover supplied.
 *
 * # Safety
 * `model` must be live, `theorem` a NUL-terminated string, and the outputs
 * writable.
 */
PgStatus pg_model_prove(const PgModel *model,
                        const char *theorem,
                        bool fallback,
                        bool *completed,
                        size_t *fallback_uses);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROOFGYM_H */
