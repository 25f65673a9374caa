// `waco` command-line tool. Thin shell over the C API: parses flags, folds
// them into config overrides, runs one pipeline stage, prints its result.
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "waco/waco_c.h"

namespace {

int fail(waco_status st) {
  std::fprintf(stderr, "error: %s\n", waco_last_error());
  return static_cast<int>(st);
}

struct CtxGuard {
  waco_ctx* ctx = nullptr;
  ~CtxGuard() { waco_ctx_free(ctx); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Word-aligned contrastive speech translation laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<long long> seed;
  std::string out_dir;
  std::string method = "waco";

  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--set", overrides, "Override, e.g. train.max_steps=500");
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--out", out_dir, "Output directory");

  auto* gen_data = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  auto* train_bpe = app.add_subcommand("train-bpe", "Train the shared BPE model");
  auto* pretrain_mt = app.add_subcommand("pretrain-mt", "Pre-train the MT model");
  auto* pretrain_waco =
      app.add_subcommand("pretrain-waco", "Cross-modal pre-training");
  pretrain_waco->add_option("--method", method,
                            "Objective: waco, const, ctc or base");
  auto* finetune = app.add_subcommand("finetune", "Fine-tune on speech translation");
  auto* translate = app.add_subcommand("translate", "Decode a test split");
  auto* evaluate = app.add_subcommand("evaluate", "Score hypotheses against references");
  auto* analyze = app.add_subcommand("analyze", "Representation similarity analyses");
  auto* sweep = app.add_subcommand("sweep", "Budget sweep across methods");
  auto* seqkd = app.add_subcommand("seqkd", "Sequence-level knowledge distillation");
  // Let the shared flags (--config, --seed, ...) appear after the subcommand.
  for (CLI::App* s : app.get_subcommands(nullptr)) s->fallthrough();

  CLI11_PARSE(app, argc, argv);
  CLI::App* sub = app.get_subcommands().front();

  bool is_training = sub == pretrain_mt || sub == pretrain_waco ||
                     sub == finetune || sub == sweep;
  if (is_training && !seed) {
    std::fprintf(stderr, "error: --seed is required for %s\n",
                 sub->get_name().c_str());
    return static_cast<int>(WACO_ERR_CONFIG);
  }

  std::string config_json;
  if (!config_path.empty()) {
    std::ifstream is(config_path, std::ios::binary);
    if (!is) {
      std::fprintf(stderr, "error: cannot read config file: %s\n",
                   config_path.c_str());
      return static_cast<int>(WACO_ERR_CONFIG);
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    config_json = ss.str();
  }

  CtxGuard g;
  waco_status st = waco_ctx_create(config_json.c_str(), &g.ctx);
  if (st != WACO_OK) return fail(st);

  auto set = [&](const std::string& kv) -> waco_status {
    return waco_ctx_set(g.ctx, kv.c_str());
  };
  if (seed) {
    // gen-data is seeded through the corpus spec, training through the trainer.
    std::string kv = (sub == gen_data ? "corpus.seed=" : "train.seed=") +
                     std::to_string(*seed);
    if ((st = set(kv)) != WACO_OK) return fail(st);
  }
  if (!out_dir.empty() && (st = set("paths.out_dir=" + out_dir)) != WACO_OK)
    return fail(st);
  for (const auto& kv : overrides)
    if ((st = set(kv)) != WACO_OK) return fail(st);

  if (sub == gen_data) st = waco_run_gen_data(g.ctx);
  else if (sub == train_bpe) st = waco_run_train_bpe(g.ctx);
  else if (sub == pretrain_mt) st = waco_run_pretrain_mt(g.ctx);
  else if (sub == pretrain_waco) st = waco_run_pretrain(g.ctx, method.c_str());
  else if (sub == finetune) st = waco_run_finetune(g.ctx);
  else if (sub == translate) st = waco_run_translate(g.ctx);
  else if (sub == evaluate) st = waco_run_evaluate(g.ctx);
  else if (sub == analyze) st = waco_run_analyze(g.ctx);
  else if (sub == sweep) st = waco_run_sweep(g.ctx);
  else st = waco_run_seqkd(g.ctx);

  if (st != WACO_OK) return fail(st);

  const char* result = waco_result(g.ctx);
  if (sub == evaluate && result) {
    auto j = nlohmann::json::parse(result);
    std::printf("bleu=%.2f\n", j.at("bleu").get<double>());
    std::printf("wer=%.2f\n", j.at("wer").get<double>());
  } else if (result) {
    std::printf("%s\n", result);
  }
  return 0;
}
