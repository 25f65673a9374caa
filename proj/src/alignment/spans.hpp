// Word spans: pairing forced-alignment intervals with BPE word groups and
// rescaling raw frame intervals to speech-encoder output indices.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "corpus/bpe.hpp"
#include "corpus/types.hpp"

namespace waco::alignment {

struct WordSpan {
  std::string word;
  corpus::TokenRange token_range;  // 1-based, inclusive
  int raw_lo = 0;                  // 1-based inclusive frame range
  int raw_hi = 0;
  int enc_lo = 0;                  // 1-based inclusive encoder-output range
  int enc_hi = 0;
};

// Pairs interval words with grouped token words positionally after dropping
// punctuation-only words on the token side. A count or string mismatch marks
// the utterance skipped (nullopt), it is not an error.
std::optional<std::vector<WordSpan>> match_words(
    const std::vector<corpus::WordInterval>& intervals,
    const std::vector<std::string>& words,
    const std::vector<corpus::TokenRange>& grouped);

// Maps a 1-based inclusive raw frame range onto encoder output indices:
// floor for the left edge, ceil for the right, clamped and never empty.
std::pair<int, int> rescale_interval(int lo, int hi, int n_frames, int enc_len);

// group_words -> match_words -> rescale_interval for one utterance.
std::optional<std::vector<WordSpan>> build_spans(const corpus::Utterance& utt,
                                                 const corpus::BpeVocab& vocab,
                                                 int enc_len);

}  // namespace waco::alignment
