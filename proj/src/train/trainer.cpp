#include "train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "corpus/io.hpp"
#include "eval/metrics.hpp"

namespace waco::train {

using losses::ContrastiveConfig;
using model::Params;

void TrainConfig::validate() const {
  if (warmup_steps < 1) throw ConfigError("train: warmup_steps must be >= 1");
  if (keep_last_k < 1) throw ConfigError("train: keep_last_k must be >= 1");
  if (max_steps < 1) throw ConfigError("train: max_steps must be >= 1");
  if (eval_interval < 1) throw ConfigError("train: eval_interval must be >= 1");
  if (peak_lr <= 0.0) throw ConfigError("train: peak_lr must be positive");
  if (frame_budget_per_batch < 1)
    throw ConfigError("train: frame_budget_per_batch must be >= 1");
  if (tau <= 0.0) throw ConfigError("train: tau must be positive");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw ConfigError("train: label_smoothing must lie in [0, 1)");
}

double lr_schedule(int step, const TrainConfig& cfg) {
  if (step < 1) throw ConfigError("lr_schedule: step must be >= 1");
  double w = static_cast<double>(cfg.warmup_steps);
  double s = static_cast<double>(step);
  return cfg.peak_lr * std::min(s / w, std::sqrt(w / s));
}

double adam_step(Params& params, AdamState& state, const TrainConfig& cfg,
                 const TrainablePredicate& trainable) {
  std::string bad;
  if (!params.grads_finite(&bad))
    throw NumericError("non-finite gradient in tensor '" + bad + "'");

  // Global-norm clipping over the trainable set.
  double sq = 0.0;
  for (const auto& [name, t] : params.tensors()) {
    if (trainable && !trainable(name)) continue;
    if (t.grad.size()) sq += t.grad.squaredNorm();
  }
  double norm = std::sqrt(sq);
  double clip_scale = 1.0;
  if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;

  ++state.step;
  double lr = lr_schedule(state.step, cfg);
  double bc1 = 1.0 - std::pow(cfg.beta1, state.step);
  double bc2 = 1.0 - std::pow(cfg.beta2, state.step);
  constexpr double kEps = 1e-8;

  for (auto& [name, t] : params.tensors()) {
    if (trainable && !trainable(name)) continue;
    ad::Mat g = t.grad.size() ? (t.grad * clip_scale).eval()
                              : ad::Mat::Zero(t.value.rows(), t.value.cols()).eval();
    ad::Mat& m = state.m[name];
    ad::Mat& v = state.v[name];
    if (m.size() == 0) {
      m = ad::Mat::Zero(g.rows(), g.cols());
      v = ad::Mat::Zero(g.rows(), g.cols());
    }
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    ad::Mat update =
        (m / bc1).array() / ((v / bc2).array().sqrt() + kEps);
    if (cfg.weight_decay > 0.0) t.value -= lr * cfg.weight_decay * t.value;
    t.value -= lr * update.matrix();
  }
  return norm * clip_scale;
}

std::vector<std::vector<std::size_t>> make_batches(
    const std::vector<std::int64_t>& frames, std::int64_t frame_budget,
    std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  std::int64_t cum = 0;
  for (std::size_t i : order) {
    if (batches.empty() || cum + frames[i] > frame_budget) {
      batches.emplace_back();
      cum = 0;
    }
    batches.back().push_back(i);
    cum += frames[i];
  }
  return batches;
}

PretrainMethod parse_method(const std::string& name) {
  if (name == "waco") return PretrainMethod::kWaco;
  if (name == "const") return PretrainMethod::kConst;
  if (name == "ctc") return PretrainMethod::kCtc;
  throw ConfigError("unknown pre-training method: '" + name + "'");
}

JsonlLogger::JsonlLogger(const std::filesystem::path& path)
    : os_(path, std::ios::binary) {
  if (!os_) throw DataError("cannot open training log: " + path.string());
}

void JsonlLogger::log(const nlohmann::json& record) {
  os_ << record.dump() << '\n';
  os_.flush();
}

namespace {

std::string detok(const corpus::BpeVocab& vocab, const std::vector<int>& ids) {
  // Lenient variant of decode: drop tokens before the first word boundary.
  std::vector<std::string> words;
  for (int id : ids) {
    if (id < 4 || id >= vocab.size()) continue;
    const std::string& tok = vocab.token(id);
    if (!tok.empty() && tok[0] == corpus::kBoundaryMarker)
      words.push_back(tok.substr(1));
    else if (!words.empty())
      words.back() += tok;
  }
  return corpus::join_words(words);
}

std::vector<const corpus::Utterance*> pick(
    const std::vector<corpus::Utterance>& all, const std::vector<std::size_t>& idx) {
  std::vector<const corpus::Utterance*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&all[i]);
  return out;
}

std::vector<std::int64_t> frame_counts(const std::vector<corpus::Utterance>& set) {
  std::vector<std::int64_t> frames;
  frames.reserve(set.size());
  for (const auto& u : set) frames.push_back(u.n_frames());
  return frames;
}

}  // namespace

double dev_bleu_st(Params& params, const corpus::BpeVocab& vocab,
                   const std::vector<corpus::Utterance>& dev_set,
                   const eval::DecodeConfig& decode) {
  std::vector<std::string> hyps, refs;
  for (const auto& u : dev_set) {
    ad::Mat mem = eval::encode_memory_speech(params, u.features);
    hyps.push_back(detok(vocab, eval::beam_decode(params, mem, decode)));
    refs.push_back(corpus::join_words(u.translation));
  }
  return eval::bleu(hyps, refs);
}

double dev_bleu_mt(Params& params, const corpus::BpeVocab& vocab,
                   const std::vector<corpus::Utterance>& dev_set,
                   const eval::DecodeConfig& decode) {
  std::vector<std::string> hyps, refs;
  for (const auto& u : dev_set) {
    std::vector<int> x = corpus::encode(vocab, u.transcript);
    ad::Mat mem = eval::encode_memory_text(params, x);
    hyps.push_back(detok(vocab, eval::beam_decode(params, mem, decode)));
    refs.push_back(corpus::join_words(u.translation));
  }
  return eval::bleu(hyps, refs);
}

StageResult pretrain_mt(const std::vector<corpus::Utterance>& train_set,
                        const std::vector<corpus::Utterance>& dev_set,
                        const corpus::BpeVocab& vocab, Params& params,
                        const TrainConfig& cfg, const eval::DecodeConfig& dev_decode,
                        JsonlLogger* logger) {
  cfg.validate();
  model::Model m(params);
  AdamState opt;
  auto trainable = [](const std::string& n) {
    return n.rfind("temb.", 0) == 0 || n.rfind("joint.", 0) == 0 ||
           n.rfind("dec.", 0) == 0;
  };
  auto frames = frame_counts(train_set);
  StageResult result;
  Params best = params;
  double best_bleu = -1.0;
  int epoch = 0, step = 0;
  while (step < cfg.max_steps) {
    auto batches = make_batches(frames, cfg.frame_budget_per_batch, cfg.seed, epoch++);
    for (const auto& batch_idx : batches) {
      if (step >= cfg.max_steps) break;
      ++step;
      ad::Tape t(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(step));
      auto batch = pick(train_set, batch_idx);
      std::vector<ad::Var> terms;
      for (const corpus::Utterance* u : batch) {
        std::vector<int> x = corpus::encode(vocab, u->transcript);
        std::vector<int> y = corpus::encode(vocab, u->translation);
        terms.push_back(losses::ce_task(t, m, m.t_emb_pos(t, x, true), y,
                                        cfg.label_smoothing, true));
      }
      ad::Var loss = t.mean_of(terms);
      params.zero_grads();
      t.backward(loss);
      double gnorm = adam_step(params, opt, cfg, trainable);
      if (logger)
        logger->log({{"step", step},
                     {"stage", "mt"},
                     {"lr", lr_schedule(step, cfg)},
                     {"loss", loss.val()(0, 0)},
                     {"grad_norm", gnorm},
                     {"seed", cfg.seed}});
      if (step % cfg.eval_interval == 0 || step == cfg.max_steps) {
        double b = dev_bleu_mt(params, vocab, dev_set, dev_decode);
        if (logger)
          logger->log({{"step", step}, {"stage", "mt"}, {"dev_bleu", b}, {"seed", cfg.seed}});
        if (b > best_bleu) {
          best_bleu = b;
          best = params;
          result.best_step = step;
        }
      }
    }
  }
  params = best;
  result.steps_run = step;
  result.best_metric = best_bleu;
  return result;
}

namespace {

double xmodal_loss_eval(PretrainMethod method, model::Model& m,
                        const std::vector<corpus::Utterance>& dev_set,
                        const corpus::BpeVocab& vocab, const TrainConfig& cfg,
                        const ContrastiveConfig& ctr_cfg) {
  auto frames = frame_counts(dev_set);
  auto batches = make_batches(frames, cfg.frame_budget_per_batch, 0, 0);
  double sum = 0.0;
  int n = 0;
  for (const auto& idx : batches) {
    ad::Tape t;
    auto batch = pick(dev_set, idx);
    ad::Var loss;
    switch (method) {
      case PretrainMethod::kWaco:
        loss = losses::loss_pt(t, m, batch, vocab, ctr_cfg, false);
        break;
      case PretrainMethod::kConst:
        loss = losses::loss_sent_pt(t, m, batch, vocab, ctr_cfg, false);
        break;
      case PretrainMethod::kCtc:
        loss = losses::loss_ctc_pt(t, m, batch, vocab, false);
        break;
    }
    sum += loss.val()(0, 0);
    ++n;
  }
  return n ? sum / n : 0.0;
}

}  // namespace

StageResult pretrain_xmodal(PretrainMethod method,
                            const std::vector<corpus::Utterance>& train_set,
                            const std::vector<corpus::Utterance>& dev_set,
                            const corpus::BpeVocab& vocab, Params& params,
                            const TrainConfig& cfg, const ContrastiveConfig& ctr_cfg,
                            JsonlLogger* logger) {
  cfg.validate();
  model::Model m(params);
  AdamState opt;
  bool with_ctc = method == PretrainMethod::kCtc;
  auto trainable = [with_ctc](const std::string& n) {
    return n.rfind("senc.", 0) == 0 || (with_ctc && n.rfind("ctc.", 0) == 0);
  };
  const char* stage = method == PretrainMethod::kWaco    ? "waco"
                      : method == PretrainMethod::kConst ? "const"
                                                         : "ctc";
  auto frames = frame_counts(train_set);
  StageResult result;
  Params best = params;
  double best_loss = std::numeric_limits<double>::infinity();
  int epoch = 0, step = 0;
  while (step < cfg.max_steps) {
    auto batches = make_batches(frames, cfg.frame_budget_per_batch, cfg.seed, epoch++);
    for (const auto& batch_idx : batches) {
      if (step >= cfg.max_steps) break;
      ++step;
      ad::Tape t(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(step));
      auto batch = pick(train_set, batch_idx);
      ad::Var loss;
      int n_pairs = 0;
      switch (method) {
        case PretrainMethod::kWaco:
          loss = losses::loss_pt(t, m, batch, vocab, ctr_cfg, true, &n_pairs);
          break;
        case PretrainMethod::kConst:
          loss = losses::loss_sent_pt(t, m, batch, vocab, ctr_cfg, true);
          break;
        case PretrainMethod::kCtc:
          loss = losses::loss_ctc_pt(t, m, batch, vocab, true);
          break;
      }
      params.zero_grads();
      t.backward(loss);
      double gnorm = adam_step(params, opt, cfg, trainable);
      if (logger)
        logger->log({{"step", step},
                     {"stage", stage},
                     {"lr", lr_schedule(step, cfg)},
                     {"loss", loss.val()(0, 0)},
                     {"n_pairs", n_pairs},
                     {"grad_norm", gnorm},
                     {"seed", cfg.seed}});
      if (step % cfg.eval_interval == 0 || step == cfg.max_steps) {
        double dev = xmodal_loss_eval(method, m, dev_set, vocab, cfg, ctr_cfg);
        if (logger)
          logger->log({{"step", step}, {"stage", stage}, {"dev_loss", dev}, {"seed", cfg.seed}});
        if (dev < best_loss) {
          best_loss = dev;
          best = params;
          result.best_step = step;
        }
      }
    }
  }
  params = best;
  result.steps_run = step;
  result.best_metric = best_loss;
  return result;
}

StageResult finetune(const std::vector<corpus::Utterance>& train_set,
                     const std::vector<corpus::Utterance>& dev_set,
                     const corpus::BpeVocab& vocab, Params& params,
                     const TrainConfig& cfg, const ContrastiveConfig& ctr_cfg,
                     const eval::DecodeConfig& dev_decode,
                     const std::filesystem::path& ckpt_dir, JsonlLogger* logger) {
  cfg.validate();
  std::filesystem::create_directories(ckpt_dir);
  model::Model m(params);
  AdamState opt;
  auto frames = frame_counts(train_set);
  StageResult result;
  std::deque<std::filesystem::path> ring;
  double best_bleu = -1.0;
  int epoch = 0, step = 0;
  while (step < cfg.max_steps) {
    auto batches = make_batches(frames, cfg.frame_budget_per_batch, cfg.seed, epoch++);
    for (const auto& batch_idx : batches) {
      if (step >= cfg.max_steps) break;
      ++step;
      ad::Tape t(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(step));
      auto batch = pick(train_set, batch_idx);
      losses::FtBreakdown bd;
      ad::Var loss = losses::loss_ft(t, m, batch, vocab, cfg.lambda,
                                     cfg.label_smoothing, ctr_cfg, true, &bd);
      params.zero_grads();
      t.backward(loss);
      double gnorm = adam_step(params, opt, cfg, nullptr);
      if (logger)
        logger->log({{"step", step},
                     {"stage", "finetune"},
                     {"lr", lr_schedule(step, cfg)},
                     {"loss", bd.total},
                     {"ce_st", bd.ce_st},
                     {"ce_mt", bd.ce_mt},
                     {"ce_asr", bd.ce_asr},
                     {"ctr", bd.ctr},
                     {"grad_norm", gnorm},
                     {"seed", cfg.seed}});
      if (step % cfg.eval_interval == 0 || step == cfg.max_steps) {
        double b = dev_bleu_st(params, vocab, dev_set, dev_decode);
        if (logger)
          logger->log({{"step", step}, {"stage", "finetune"}, {"dev_bleu", b}, {"seed", cfg.seed}});
        if (b > best_bleu) {
          best_bleu = b;
          result.best_step = step;
        }
        auto path = ckpt_dir / ("ckpt_" + std::to_string(step) + ".waco");
        model::save_checkpoint(params, path);
        ring.push_back(path);
        while (static_cast<int>(ring.size()) > cfg.keep_last_k) {
          std::filesystem::remove(ring.front());
          ring.pop_front();
        }
      }
    }
  }
  params = average_checkpoints({ring.begin(), ring.end()});
  result.steps_run = step;
  result.best_metric = best_bleu;
  return result;
}

model::Params average_checkpoints(const std::vector<std::filesystem::path>& paths) {
  if (paths.empty()) throw DataError("average_checkpoints: no checkpoints");
  Params avg = model::load_checkpoint(paths[0]);
  for (std::size_t i = 1; i < paths.size(); ++i) {
    Params p = model::load_checkpoint(paths[i]);
    for (auto& [name, t] : avg.tensors()) t.value += p.at(name).value;
  }
  double inv = 1.0 / static_cast<double>(paths.size());
  for (auto& [name, t] : avg.tensors()) t.value *= inv;
  return avg;
}

}  // namespace waco::train
