/* C API for the WACO speech-translation laboratory.
 *
 * All entry points are exported from the shared library `libwaco`. A context
 * is created from a JSON configuration string, optionally amended with dotted
 * overrides, and then drives one pipeline stage at a time. Every call returns
 * a waco_status; on failure the thread-local message from waco_last_error()
 * describes the cause. Stage results are JSON documents owned by the library
 * until the next stage call on the same context.
 */
#ifndef WACO_C_H
#define WACO_C_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum waco_status {
  WACO_OK = 0,
  WACO_ERR_CONFIG = 2,  /* invalid configuration or arguments */
  WACO_ERR_DATA = 3,    /* malformed or missing data / model files */
  WACO_ERR_NUMERIC = 4  /* non-finite values encountered */
} waco_status;

typedef struct waco_ctx waco_ctx;

/* Parses and validates `config_json` (UTF-8, NUL-terminated). On success
 * stores a new context in *out. Free with waco_ctx_free. */
waco_status waco_ctx_create(const char* config_json, waco_ctx** out);

/* Applies a dotted-path override, e.g. "train.max_steps=500". The value is
 * parsed as JSON, falling back to a string literal. Re-validates the full
 * configuration. */
waco_status waco_ctx_set(waco_ctx* ctx, const char* key_eq_value);

/* Serializes the effective configuration. The returned string lives until the
 * next call on this context. */
waco_status waco_ctx_config(waco_ctx* ctx, const char** out_json);

void waco_ctx_free(waco_ctx* ctx);

/* Stage runners. Each writes its artifacts under the configured paths and
 * leaves a JSON result record retrievable via waco_result(). `method` for
 * waco_run_pretrain is one of "waco", "const", "ctc", "base". */
waco_status waco_run_gen_data(waco_ctx* ctx);
waco_status waco_run_train_bpe(waco_ctx* ctx);
waco_status waco_run_pretrain_mt(waco_ctx* ctx);
waco_status waco_run_pretrain(waco_ctx* ctx, const char* method);
waco_status waco_run_finetune(waco_ctx* ctx);
waco_status waco_run_translate(waco_ctx* ctx);
waco_status waco_run_evaluate(waco_ctx* ctx);
waco_status waco_run_analyze(waco_ctx* ctx);
waco_status waco_run_sweep(waco_ctx* ctx);
waco_status waco_run_seqkd(waco_ctx* ctx);

/* JSON result of the most recent successful stage call on this context, or
 * NULL if none. Owned by the context; valid until the next stage call. */
const char* waco_result(const waco_ctx* ctx);

/* Thread-local message describing the most recent failure, or "" if none. */
const char* waco_last_error(void);

/* Library version string, e.g. "0.1.0". */
const char* waco_version(void);

#ifdef __cplusplus
}
#endif

#endif /* WACO_C_H */
