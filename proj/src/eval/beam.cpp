#include "eval/beam.hpp"

#include <algorithm>
#include <cmath>

#include "corpus/bpe.hpp"

namespace waco::eval {

using corpus::BpeVocab;
using model::Model;

void DecodeConfig::validate() const {
  if (beam_size < 1) throw ConfigError("decode: beam_size must be >= 1");
  if (max_len < 1) throw ConfigError("decode: max_len must be >= 1");
}

ad::Mat encode_memory_speech(model::Params& params,
                             const corpus::FeatMatrix& features) {
  ad::Tape t;
  Model m(params);
  return m.joint_encode(t, m.s_enc_pos(t, features.cast<double>(), false), false)
      .val();
}

ad::Mat encode_memory_text(model::Params& params, const std::vector<int>& tokens) {
  ad::Tape t;
  Model m(params);
  return m.joint_encode(t, m.t_emb_pos(t, tokens, false), false).val();
}

namespace {

struct Hypothesis {
  std::vector<int> tokens;  // decoder input so far, starts with BOS
  double log_prob = 0.0;
  int finished_at = -1;  // step index when EOS was emitted, -1 while alive

  bool finished() const { return finished_at >= 0; }
};

double penalized(const Hypothesis& h, double alpha) {
  // Length counts generated tokens (everything after BOS).
  double len = static_cast<double>(h.tokens.size() - 1);
  if (h.finished()) len = static_cast<double>(h.tokens.size());  // + EOS
  if (len < 1.0) len = 1.0;
  return h.log_prob / std::pow(len, alpha);
}

// Preference order: higher penalized score, then earlier completion, then
// lexicographically smaller token ids.
bool better(const Hypothesis& a, const Hypothesis& b, double alpha) {
  double sa = penalized(a, alpha), sb = penalized(b, alpha);
  if (sa != sb) return sa > sb;
  if (a.finished_at != b.finished_at) {
    if (a.finished() && b.finished()) return a.finished_at < b.finished_at;
    return a.finished();
  }
  return a.tokens < b.tokens;
}

Eigen::VectorXd next_log_probs(Model& m, const ad::Mat& memory,
                               const std::vector<int>& prefix) {
  ad::Tape t;
  ad::Var mem = t.constant(memory);
  ad::Var logits = m.decode_logits(t, mem, prefix, false);
  Eigen::VectorXd z = logits.val().row(logits.rows() - 1);
  double mx = z.maxCoeff();
  double lse = mx + std::log((z.array() - mx).exp().sum());
  return z.array() - lse;
}

}  // namespace

std::vector<int> beam_decode(model::Params& params, const ad::Mat& memory,
                             const DecodeConfig& cfg) {
  cfg.validate();
  Model m(params);
  double alpha = cfg.length_penalty_alpha;
  std::vector<Hypothesis> alive = {{{BpeVocab::kBosId}, 0.0, -1}};
  std::vector<Hypothesis> finished;

  for (int step = 0; step < cfg.max_len && !alive.empty(); ++step) {
    std::vector<Hypothesis> expanded;
    for (const Hypothesis& h : alive) {
      Eigen::VectorXd logp = next_log_probs(m, memory, h.tokens);
      // Candidate order by raw log-prob, ties by smaller token id.
      std::vector<int> cand(static_cast<std::size_t>(logp.size()));
      for (std::size_t i = 0; i < cand.size(); ++i) cand[i] = static_cast<int>(i);
      std::sort(cand.begin(), cand.end(), [&](int a, int b) {
        if (logp(a) != logp(b)) return logp(a) > logp(b);
        return a < b;
      });
      int take = std::min<int>(cfg.beam_size, static_cast<int>(cand.size()));
      for (int k = 0; k < take; ++k) {
        int tok = cand[static_cast<std::size_t>(k)];
        if (tok == BpeVocab::kPadId || tok == BpeVocab::kBosId ||
            tok == BpeVocab::kBlankId)
          continue;
        Hypothesis next = h;
        next.log_prob += logp(tok);
        if (tok == BpeVocab::kEosId) {
          next.finished_at = step;
          finished.push_back(std::move(next));
        } else {
          next.tokens.push_back(tok);
          expanded.push_back(std::move(next));
        }
      }
    }
    std::sort(expanded.begin(), expanded.end(),
              [&](const Hypothesis& a, const Hypothesis& b) {
                // Alive ranking uses raw log-prob (hypotheses share length).
                if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                return a.tokens < b.tokens;
              });
    if (static_cast<int>(expanded.size()) > cfg.beam_size)
      expanded.resize(static_cast<std::size_t>(cfg.beam_size));
    alive = std::move(expanded);
  }

  for (Hypothesis& h : alive) finished.push_back(std::move(h));
  if (finished.empty()) return {};
  const Hypothesis* best = &finished.front();
  for (const Hypothesis& h : finished)
    if (better(h, *best, alpha)) best = &h;
  return std::vector<int>(best->tokens.begin() + 1, best->tokens.end());
}

}  // namespace waco::eval
