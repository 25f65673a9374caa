#include "alignment/spans.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "corpus/io.hpp"

namespace waco::alignment {

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::optional<std::vector<WordSpan>> match_words(
    const std::vector<corpus::WordInterval>& intervals,
    const std::vector<std::string>& words,
    const std::vector<corpus::TokenRange>& grouped) {
  if (intervals.empty()) return std::nullopt;
  std::vector<std::size_t> kept;  // indices of non-punctuation token words
  for (std::size_t i = 0; i < words.size(); ++i)
    if (!corpus::is_punctuation_word(words[i])) kept.push_back(i);
  if (kept.size() != intervals.size()) return std::nullopt;

  std::vector<WordSpan> spans;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto& iv = intervals[i];
    if (lower(iv.word) != lower(words[kept[i]])) return std::nullopt;
    WordSpan s;
    s.word = iv.word;
    s.token_range = grouped[kept[i]];
    s.raw_lo = static_cast<int>(iv.start_frame) + 1;  // to 1-based inclusive
    s.raw_hi = static_cast<int>(iv.end_frame);
    spans.push_back(std::move(s));
  }
  return spans;
}

std::pair<int, int> rescale_interval(int lo, int hi, int n_frames, int enc_len) {
  if (!(1 <= lo && lo <= hi && hi <= n_frames))
    throw DataError("rescale_interval: need 1 <= l <= r <= n_frames");
  if (enc_len < 1) throw DataError("rescale_interval: enc_len must be >= 1");
  double scale = static_cast<double>(enc_len) / static_cast<double>(n_frames);
  int enc_lo = static_cast<int>(std::floor(lo * scale)) + 1;
  int enc_hi = static_cast<int>(std::ceil(hi * scale));
  enc_hi = std::min(enc_hi, enc_len);
  enc_hi = std::max(enc_hi, 1);
  enc_lo = std::max(enc_lo, 1);
  if (enc_lo > enc_hi) enc_lo = enc_hi;
  return {enc_lo, enc_hi};
}

std::optional<std::vector<WordSpan>> build_spans(const corpus::Utterance& utt,
                                                 const corpus::BpeVocab& vocab,
                                                 int enc_len) {
  if (!utt.has_alignment || utt.word_intervals.empty()) return std::nullopt;
  std::vector<int> tokens = encode(vocab, utt.transcript);
  std::vector<corpus::TokenRange> grouped = group_words(vocab, tokens);
  std::vector<std::string> words;
  for (const auto& g : grouped) {
    std::vector<int> sub(tokens.begin() + g.lo - 1, tokens.begin() + g.hi);
    auto decoded = decode(vocab, sub);
    words.push_back(decoded.empty() ? std::string() : decoded.front());
  }
  auto spans = match_words(utt.word_intervals, words, grouped);
  if (!spans) return std::nullopt;
  for (auto& s : *spans) {
    auto [lo, hi] =
        rescale_interval(s.raw_lo, s.raw_hi, static_cast<int>(utt.n_frames()), enc_len);
    s.enc_lo = lo;
    s.enc_hi = hi;
  }
  return spans;
}

}  // namespace waco::alignment
