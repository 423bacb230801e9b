/*
 * devprint C API.
 *
 * Every call that can fail takes a dp_context and returns a dp_status. On
 * failure the context holds the message and a JSON error object until the
 * next call on that context. Stage functions take their options as a JSON
 * object; unknown keys are usage errors. Input paths are checked before a
 * stage does any work, and outputs go only to the paths given ("-" is stdout
 * where noted).
 *
 * A context is not safe for concurrent use; separate contexts are.
 */
#ifndef DEVPRINT_H
#define DEVPRINT_H

#include <stddef.h>

#if defined(__GNUC__)
#define DP_API __attribute__((visibility("default")))
#else
#define DP_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dp_status {
  DP_OK = 0,
  DP_USAGE = 1,    /* bad options or arguments */
  DP_DATA = 2,     /* unreadable, malformed or inconsistent input */
  DP_INTERNAL = 3  /* a bug */
} dp_status;

typedef struct dp_context dp_context;
typedef struct dp_model dp_model;

DP_API const char* dp_version(void);

DP_API dp_status dp_context_new(dp_context** out);
DP_API void dp_context_free(dp_context* ctx);

/* Human-readable message of the last failure, "" after success. */
DP_API const char* dp_last_error(const dp_context* ctx);
/* {"status": n, "kind": "usage|data|internal", "message": ..., "path"?, "line"?} or "" */
DP_API const char* dp_last_error_json(const dp_context* ctx);
/* JSON report of the last successful stage: counts, outputs, warnings. */
DP_API const char* dp_last_report(const dp_context* ctx);

/* --- stages ---------------------------------------------------------------
 * probes_dump   {probeset, target, port, out="-"}                       JSON lines
 * sim_make_dataset {per_vendor, seed, loss, acl_drop, profiles?, probeset,
 *                   out, labels, network?, world_dir?}
 * scan          {targets, network | profiles, probeset, port_range "lo:hi",
 *                seed, retries, timeout_ms, max_in_flight, transport "sim|live", out}
 * extract       {fingerprints, probeset, out, schema?}
 * label         {mode "regex|cluster|mine|apply|audit", banners, ...}
 * dealias       {fingerprints, labels, nodes, k, out_fingerprints, out_labels, conflicts?}
 * train         {features, labels, cap, search, inner_k, outer_k, validation, seed,
 *                out, leaderboard?, metrics?, hyperparameters for search=0}
 * predict       {model, features, threshold "auto|none|<float>", out="-"}
 * insights      {model, traces, fingerprints, geo, probeset, out, annotated?}
 * e2e           {sim=true, seed, per_vendor, minor_devices, traces, configs,
 *                inner_k, outer_k, cap, k, out}
 * The README lists every key with its default. */
DP_API dp_status dp_probes_dump(dp_context* ctx, const char* options_json);
DP_API dp_status dp_sim_make_dataset(dp_context* ctx, const char* options_json);
DP_API dp_status dp_scan(dp_context* ctx, const char* options_json);
DP_API dp_status dp_extract(dp_context* ctx, const char* options_json);
DP_API dp_status dp_label(dp_context* ctx, const char* options_json);
DP_API dp_status dp_dealias(dp_context* ctx, const char* options_json);
DP_API dp_status dp_train(dp_context* ctx, const char* options_json);
DP_API dp_status dp_predict(dp_context* ctx, const char* options_json);
DP_API dp_status dp_insights(dp_context* ctx, const char* options_json);
DP_API dp_status dp_e2e(dp_context* ctx, const char* options_json);

/* --- models ---------------------------------------------------------------- */
DP_API dp_status dp_model_load(dp_context* ctx, const char* path, dp_model** out);
DP_API void dp_model_free(dp_model* model);
DP_API size_t dp_model_class_count(const dp_model* model);
/* NULL when out of range. */
DP_API const char* dp_model_class(const dp_model* model, size_t index);
/* Negative when the model has no threshold. */
DP_API double dp_model_threshold(const dp_model* model);
/* A negative value removes the threshold. */
DP_API void dp_model_set_threshold(dp_model* model, double threshold);
/* `vector_json` is {"slot": "value", ...}. The label stays valid until the
 * next call on ctx. */
DP_API dp_status dp_model_predict(dp_context* ctx, const dp_model* model, const char* vector_json,
                                  const char** label);

#ifdef __cplusplus
}
#endif

#endif /* DEVPRINT_H */
