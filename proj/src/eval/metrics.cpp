#include "eval/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "core/error.hpp"

namespace waco::eval {

std::vector<std::string> tokenize_13a(const std::string& text) {
  std::string spaced;
  for (std::size_t i = 0; i < text.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::ispunct(c)) {
      spaced += ' ';
      spaced += static_cast<char>(c);
      spaced += ' ';
    } else {
      spaced += static_cast<char>(c);
    }
  }
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : spaced) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) tokens.push_back(std::move(cur)), cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::int64_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return counts;
}

}  // namespace

double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references) {
  if (references.empty()) throw DataError("bleu: empty reference set");
  if (hypotheses.size() != references.size())
    throw DataError("bleu: hypothesis/reference count mismatch");

  constexpr int kMaxOrder = 4;
  std::int64_t correct[kMaxOrder] = {0, 0, 0, 0};
  std::int64_t total[kMaxOrder] = {0, 0, 0, 0};
  std::int64_t hyp_len = 0, ref_len = 0;

  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    auto hyp = tokenize_13a(hypotheses[s]);
    auto ref = tokenize_13a(references[s]);
    hyp_len += static_cast<std::int64_t>(hyp.size());
    ref_len += static_cast<std::int64_t>(ref.size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      auto hc = count_ngrams(hyp, n);
      auto rc = count_ngrams(ref, n);
      for (const auto& [gram, cnt] : hc) {
        total[n - 1] += cnt;
        auto it = rc.find(gram);
        if (it != rc.end()) correct[n - 1] += std::min(cnt, it->second);
      }
    }
  }
  if (hyp_len == 0) return 0.0;

  double log_prec_sum = 0.0;
  double smooth = 1.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (total[n] == 0) return 0.0;  // every hypothesis shorter than n+1 tokens
    double p;
    if (correct[n] == 0) {
      smooth *= 2.0;  // exponential smoothing
      p = 1.0 / (smooth * static_cast<double>(total[n]));
    } else {
      p = static_cast<double>(correct[n]) / static_cast<double>(total[n]);
    }
    log_prec_sum += std::log(p);
  }
  double bp = hyp_len >= ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(ref_len) /
                                       static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_prec_sum / kMaxOrder);
}

double wer(const std::vector<std::string>& hypotheses,
           const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size())
    throw DataError("wer: hypothesis/reference count mismatch");
  std::int64_t edits = 0, ref_words = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    auto hyp = tokenize_13a(hypotheses[s]);
    auto ref = tokenize_13a(references[s]);
    std::size_t H = hyp.size(), R = ref.size();
    std::vector<std::vector<std::int64_t>> d(R + 1, std::vector<std::int64_t>(H + 1));
    for (std::size_t i = 0; i <= R; ++i) d[i][0] = static_cast<std::int64_t>(i);
    for (std::size_t j = 0; j <= H; ++j) d[0][j] = static_cast<std::int64_t>(j);
    for (std::size_t i = 1; i <= R; ++i)
      for (std::size_t j = 1; j <= H; ++j) {
        std::int64_t sub = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
        d[i][j] = std::min({sub, d[i - 1][j] + 1, d[i][j - 1] + 1});
      }
    edits += d[R][H];
    ref_words += static_cast<std::int64_t>(R);
  }
  if (ref_words == 0) throw DataError("wer: empty references");
  return static_cast<double>(edits) / static_cast<double>(ref_words);
}

}  // namespace waco::eval
