// End-to-end stage orchestration driven by a validated hierarchical
// configuration; this is the layer the C API and the CLI sit on.
#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "corpus/generator.hpp"
#include "eval/analysis.hpp"
#include "losses/losses.hpp"
#include "train/trainer.hpp"

namespace waco::pipeline {

struct RunConfig {
  corpus::CorpusSpec corpus;
  int bpe_vocab_size = 160;
  model::ModelConfig model;  // vocab_size filled from the BPE model at run time
  train::TrainConfig train;
  losses::ContrastiveConfig contrastive;
  eval::DecodeConfig decode;
  std::int64_t asr_budget_frames = 0;  // 0 = whole split
  std::int64_t st_budget_frames = 0;
  std::string translate_source = "speech";  // or "text"
  int analyze_n_matrices = 2;

  struct Paths {
    std::string data_dir;
    std::string out_dir;
    std::string bpe_model;
    std::string checkpoint;
    std::string init_checkpoint;
    std::string mt_checkpoint;
    std::string asr_checkpoint;
    std::string manifest;
    std::string merge_manifest;
    std::string hyp_file;
    std::string ref_file;
  } paths;

  struct Sweep {
    std::vector<std::string> methods = {"waco"};
    std::vector<std::int64_t> st_budgets;
  } sweep;

  // Parses and validates; unknown keys anywhere are collected and reported
  // together in one ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Dotted-path override, e.g. "train.max_steps=500". Values parse as JSON
// first, falling back to a string literal.
void apply_override(nlohmann::json& j, const std::string& key_eq_value);

// Stage runners. Each returns a result record (also written under out_dir
// where the stage produces artifacts).
nlohmann::json run_gen_data(const RunConfig& cfg);
nlohmann::json run_train_bpe(const RunConfig& cfg);
nlohmann::json run_pretrain_mt(const RunConfig& cfg);
nlohmann::json run_pretrain(const RunConfig& cfg, const std::string& method);
nlohmann::json run_finetune(const RunConfig& cfg);
nlohmann::json run_translate(const RunConfig& cfg);
nlohmann::json run_evaluate(const RunConfig& cfg);
nlohmann::json run_analyze(const RunConfig& cfg);
nlohmann::json run_sweep(const RunConfig& cfg);
nlohmann::json run_seqkd(const RunConfig& cfg);

int env_threads();  // WACO_THREADS, default 1

}  // namespace waco::pipeline
