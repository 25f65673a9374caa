#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace waco::corpus {

using FeatMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct WordInterval {
  std::string word;
  std::int64_t start_frame = 0;  // 0-based, half-open [start, end)
  std::int64_t end_frame = 0;
};

struct Utterance {
  std::string id;
  FeatMatrix features;  // n_frames x feat_dim
  std::vector<std::string> transcript;
  std::vector<std::string> translation;  // empty for ASR-only rows
  std::vector<WordInterval> word_intervals;
  bool has_alignment = false;

  std::int64_t n_frames() const { return features.rows(); }
};

// Throws DataError when intervals overlap, are unsorted, fall outside
// [0, n_frames), or do not match the punctuation-stripped transcript.
void validate_utterance(const Utterance& u);

bool is_punctuation_word(const std::string& w);

struct IntRange {
  int lo = 0;
  int hi = 0;  // inclusive
};

enum class TranslationRule { kIdentityDictionary, kAdjacentSwapDictionary };

struct SplitSizes {
  int train_asr = 0;
  int dev_asr = 0;
  int train_st = 0;
  int dev_st = 0;
  int test = 0;
  int train_mt = 0;
  int dev_mt = 0;
};

struct CorpusSpec {
  int n_source_words = 40;
  int feat_dim = 16;
  IntRange frames_per_word{8, 16};
  IntRange silence_frames{0, 3};
  IntRange words_per_utt{3, 8};
  double noise_sigma = 0.1;
  TranslationRule translation_rule = TranslationRule::kAdjacentSwapDictionary;
  SplitSizes sizes;
  std::uint64_t seed = 0;

  void validate() const;
};

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names = {
      "train_asr", "dev_asr", "train_st", "dev_st", "test", "train_mt", "dev_mt"};
  return names;
}

}  // namespace waco::corpus
