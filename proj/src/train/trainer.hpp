// Optimizer, batching, and the three training stages (MT pre-training,
// cross-modal pre-training, multi-task fine-tuning) with checkpoint ring
// averaging and deterministic seeding.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "corpus/bpe.hpp"
#include "corpus/types.hpp"
#include "eval/beam.hpp"
#include "losses/losses.hpp"
#include "model/model.hpp"

namespace waco::train {

struct TrainConfig {
  double peak_lr = 1e-3;
  int warmup_steps = 200;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 0.0;
  std::int64_t frame_budget_per_batch = 1500;
  int max_steps = 1000;
  int eval_interval = 100;
  int keep_last_k = 5;
  double label_smoothing = 0.1;
  double tau = 0.2;
  double lambda = 0.0;
  double grad_clip = 5.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// lr = peak_lr * min(step / warmup, sqrt(warmup / step))
double lr_schedule(int step, const TrainConfig& cfg);

struct AdamState {
  int step = 0;
  std::map<std::string, ad::Mat> m;
  std::map<std::string, ad::Mat> v;
};

using TrainablePredicate = std::function<bool(const std::string&)>;

// Bias-corrected Adam over the gradients accumulated in `params`; tensors
// rejected by `trainable` are left untouched. Throws NumericError (naming
// the tensor) on non-finite gradients. Returns the global gradient norm
// after clipping at cfg.grad_clip.
double adam_step(model::Params& params, AdamState& state, const TrainConfig& cfg,
                 const TrainablePredicate& trainable = nullptr);

// Seeded per-epoch shuffle, then greedy fill up to the frame budget.
std::vector<std::vector<std::size_t>> make_batches(
    const std::vector<std::int64_t>& frames, std::int64_t frame_budget,
    std::uint64_t seed, int epoch);

enum class PretrainMethod { kWaco, kConst, kCtc };
PretrainMethod parse_method(const std::string& name);  // also accepts "base"

struct StageResult {
  int steps_run = 0;
  double best_metric = 0.0;  // dev BLEU (mt/finetune) or dev loss (cross-modal)
  int best_step = 0;
};

class JsonlLogger {
 public:
  explicit JsonlLogger(const std::filesystem::path& path);
  void log(const nlohmann::json& record);

 private:
  std::ofstream os_;
};

// Trains text embedding + joint Transformer on x -> y; keeps the
// best-dev-BLEU parameters in `params` on return.
StageResult pretrain_mt(const std::vector<corpus::Utterance>& train_set,
                        const std::vector<corpus::Utterance>& dev_set,
                        const corpus::BpeVocab& vocab, model::Params& params,
                        const TrainConfig& cfg, const eval::DecodeConfig& dev_decode,
                        JsonlLogger* logger);

// Cross-modal pre-training on ASR data. Only the speech encoder (plus the
// CTC head for the CTC method) is updated; text modules stay frozen so the
// MT initialization survives. Selection by best dev loss.
StageResult pretrain_xmodal(PretrainMethod method,
                            const std::vector<corpus::Utterance>& train_set,
                            const std::vector<corpus::Utterance>& dev_set,
                            const corpus::BpeVocab& vocab, model::Params& params,
                            const TrainConfig& cfg,
                            const losses::ContrastiveConfig& ctr_cfg,
                            JsonlLogger* logger);

// Multi-task fine-tuning on ST triplets; periodic checkpoints go to
// `ckpt_dir` as ckpt_<step>.waco, a ring of the keep_last_k most recent; the
// final parameters are their element-wise mean.
StageResult finetune(const std::vector<corpus::Utterance>& train_set,
                     const std::vector<corpus::Utterance>& dev_set,
                     const corpus::BpeVocab& vocab, model::Params& params,
                     const TrainConfig& cfg, const losses::ContrastiveConfig& ctr_cfg,
                     const eval::DecodeConfig& dev_decode,
                     const std::filesystem::path& ckpt_dir, JsonlLogger* logger);

// Element-wise mean of checkpoint files (all must share one config).
model::Params average_checkpoints(const std::vector<std::filesystem::path>& paths);

// Dev-set BLEU by beam decoding speech -> translation.
double dev_bleu_st(model::Params& params, const corpus::BpeVocab& vocab,
                   const std::vector<corpus::Utterance>& dev_set,
                   const eval::DecodeConfig& decode);
// Dev-set BLEU by beam decoding source text -> translation.
double dev_bleu_mt(model::Params& params, const corpus::BpeVocab& vocab,
                   const std::vector<corpus::Utterance>& dev_set,
                   const eval::DecodeConfig& decode);

}  // namespace waco::train
