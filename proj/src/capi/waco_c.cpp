#include "waco/waco_c.h"

#include <exception>
#include <string>

#include <nlohmann/json.hpp>

#include "core/error.hpp"
#include "pipeline/pipeline.hpp"

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

}  // namespace

struct waco_ctx {
  nlohmann::json config;                 // raw JSON, revalidated on change
  waco::pipeline::RunConfig cfg;         // parsed view of `config`
  std::string result;                    // last stage result, serialized
  std::string config_str;                // scratch for waco_ctx_config
};

namespace {

template <typename Fn>
waco_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return WACO_OK;
  } catch (const waco::ConfigError& e) {
    set_error(e.what());
    return WACO_ERR_CONFIG;
  } catch (const waco::DataError& e) {
    set_error(e.what());
    return WACO_ERR_DATA;
  } catch (const waco::NumericError& e) {
    set_error(e.what());
    return WACO_ERR_NUMERIC;
  } catch (const nlohmann::json::exception& e) {
    set_error(e.what());
    return WACO_ERR_CONFIG;
  } catch (const std::exception& e) {
    set_error(e.what());
    return WACO_ERR_DATA;
  }
}

template <typename Fn>
waco_status run_stage(waco_ctx* ctx, Fn&& fn) {
  if (!ctx) {
    set_error("null context");
    return WACO_ERR_CONFIG;
  }
  return guarded([&] { ctx->result = fn(ctx->cfg).dump(2); });
}

}  // namespace

extern "C" {

waco_status waco_ctx_create(const char* config_json, waco_ctx** out) {
  if (!out) {
    set_error("null output pointer");
    return WACO_ERR_CONFIG;
  }
  *out = nullptr;
  return guarded([&] {
    nlohmann::json j = config_json && config_json[0]
                           ? nlohmann::json::parse(config_json)
                           : nlohmann::json::object();
    auto ctx = new waco_ctx;
    try {
      ctx->config = std::move(j);
      ctx->cfg = waco::pipeline::RunConfig::from_json(ctx->config);
    } catch (...) {
      delete ctx;
      throw;
    }
    *out = ctx;
  });
}

waco_status waco_ctx_set(waco_ctx* ctx, const char* key_eq_value) {
  if (!ctx || !key_eq_value) {
    set_error("null argument");
    return WACO_ERR_CONFIG;
  }
  return guarded([&] {
    nlohmann::json j = ctx->config;
    waco::pipeline::apply_override(j, key_eq_value);
    ctx->cfg = waco::pipeline::RunConfig::from_json(j);  // validate before commit
    ctx->config = std::move(j);
  });
}

waco_status waco_ctx_config(waco_ctx* ctx, const char** out_json) {
  if (!ctx || !out_json) {
    set_error("null argument");
    return WACO_ERR_CONFIG;
  }
  return guarded([&] {
    ctx->config_str = ctx->cfg.to_json().dump(2);
    *out_json = ctx->config_str.c_str();
  });
}

void waco_ctx_free(waco_ctx* ctx) { delete ctx; }

waco_status waco_run_gen_data(waco_ctx* ctx) {
  return run_stage(ctx, waco::pipeline::run_gen_data);
}

waco_status waco_run_train_bpe(waco_ctx* ctx) {
  return run_stage(ctx, waco::pipeline::run_train_bpe);
}

waco_status waco_run_pretrain_mt(waco_ctx* ctx) {
  return run_stage(ctx, waco::pipeline::run_pretrain_mt);
}

waco_status waco_run_pretrain(waco_ctx* ctx, const char* method) {
  if (!method) {
    set_error("null method");
    return WACO_ERR_CONFIG;
  }
  std::string m = method;
  return run_stage(ctx, [&m](const waco::pipeline::RunConfig& cfg) {
    return waco::pipeline::run_pretrain(cfg, m);
  });
}

waco_status waco_run_finetune(waco_ctx* ctx) {
  return run_stage(ctx, waco::pipeline::run_finetune);
}

waco_status waco_run_translate(waco_ctx* ctx) {
  return run_stage(ctx, waco::pipeline::run_translate);
}

waco_status waco_run_evaluate(waco_ctx* ctx) {
  return run_stage(ctx, waco::pipeline::run_evaluate);
}

waco_status waco_run_analyze(waco_ctx* ctx) {
  return run_stage(ctx, waco::pipeline::run_analyze);
}

waco_status waco_run_sweep(waco_ctx* ctx) {
  return run_stage(ctx, waco::pipeline::run_sweep);
}

waco_status waco_run_seqkd(waco_ctx* ctx) {
  return run_stage(ctx, waco::pipeline::run_seqkd);
}

const char* waco_result(const waco_ctx* ctx) {
  return ctx && !ctx->result.empty() ? ctx->result.c_str() : nullptr;
}

const char* waco_last_error(void) { return g_last_error.c_str(); }

const char* waco_version(void) { return "0.1.0"; }

}  // extern "C"
