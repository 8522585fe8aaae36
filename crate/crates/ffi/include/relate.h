#ifndef RELATE_H
#define RELATE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  RELATE_STATUS_OK = 0,
  RELATE_STATUS_NULL_POINTER = 1,
  RELATE_STATUS_INVALID_ARGUMENT = 2,
  RELATE_STATUS_CONFIG = 3,
  RELATE_STATUS_SCHEMA = 4,
  RELATE_STATUS_IO = 5,
  RELATE_STATUS_NUMERICAL = 6,
  RELATE_STATUS_BUFFER_TOO_SMALL = 7,
  RELATE_STATUS_PANIC = 8,
} RelateStatus;

// A loaded parameter store.
typedef struct RelateParams RelateParams;

// A dataset, an encoder bound to its schema, and encoder parameters.
typedef struct RelateSession RelateSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *relate_version(void);

// Message of the last failed call on this thread, or an empty string. The
// pointer stays valid until the next failing call on the same thread.
const char *relate_last_error(void);

// Reads a parameter file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
RelateStatus relate_params_load(const char *path, RelateParams **out);

// Writes a parameter file.
//
// # Safety
// `params` must come from [`relate_params_load`] or
// [`relate_session_params`] and `path` must be NUL-terminated.
RelateStatus relate_params_save(const RelateParams *params, const char *path);

// Number of trainable scalars.
//
// # Safety
// `params` must be a live handle and `out` writable.
RelateStatus relate_params_count(const RelateParams *params, uintptr_t *out);

// Releases a parameter handle. Null is ignored.
//
// # Safety
// `params` must be null or a live handle not used afterwards.
void relate_params_free(RelateParams *params);

// Opens a run config: loads its dataset, binds its encoder and loads the
// config's model, or initializes fresh parameters from the config seed.
//
// # Safety
// `config_path` must be NUL-terminated and `out` writable.
RelateStatus relate_session_open(const char *config_path, RelateSession **out);

// Embedding width `d`.
//
// # Safety
// `session` must be a live handle and `out` writable.
RelateStatus relate_session_dim(const RelateSession *session, uintptr_t *out);

// Row count of `table`.
//
// # Safety
// `session` must be a live handle, `table` NUL-terminated, `out` writable.
RelateStatus relate_session_rows(const RelateSession *session, const char *table, uintptr_t *out);

// Row-major `rows × d` embeddings of `table`. `written` receives the
// number of values, also when `capacity` is too small.
//
// # Safety
// `session` must be a live handle, `table` NUL-terminated, `out` valid for
// `capacity` writes and `written` writable.
RelateStatus relate_session_encode(const RelateSession *session,
                                   const char *table,
                                   double *out,
                                   uintptr_t capacity,
                                   uintptr_t *written);

// Copies the session's parameters into a new handle.
//
// # Safety
// `session` must be a live handle and `out` writable.
RelateStatus relate_session_params(const RelateSession *session, RelateParams **out);

// Releases a session. Null is ignored.
//
// # Safety
// `session` must be null or a live handle not used afterwards.
void relate_session_free(RelateSession *session);

// ROC AUC of `n` scores against 0/1 labels, ties counted as one half.
//
// # Safety
// `scores` and `labels` must each hold `n` values; `out` must be writable.
RelateStatus relate_auc(const double *scores, const double *labels, uintptr_t n, double *out);

// Mean absolute error of `n` predictions.
//
// # Safety
// `predictions` and `targets` must each hold `n` values; `out` writable.
RelateStatus relate_mae(const double *predictions, const double *targets, uintptr_t n, double *out);

// Fourier number features of `x` for scales `10^-2 … 10^4`: 14 values.
//
// # Safety
// `out` must be valid for `capacity` writes and `written` writable.
RelateStatus relate_fone(double x, double *out, uintptr_t capacity, uintptr_t *written);

// Cyclic and absolute time features of epoch seconds `t`: 28 values.
//
// # Safety
// `out` must be valid for `capacity` writes and `written` writable.
RelateStatus relate_time_features(int64_t t, double *out, uintptr_t capacity, uintptr_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELATE_H */
