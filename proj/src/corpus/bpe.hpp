// Greedy byte-pair tokenizer with a deterministic merge order: most frequent
// adjacent pair first, ties broken by lexicographic order of the merged string.
// Word-initial tokens carry the boundary marker prefix.
#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/error.hpp"

namespace waco::corpus {

inline constexpr char kBoundaryMarker = '_';

struct BpeVocab {
  // Dense ids 0..V-1. Ids 0..3 are the specials below; the blank id is
  // reserved for CTC bookkeeping and never produced by encoding.
  static constexpr int kPadId = 0;
  static constexpr int kBosId = 1;
  static constexpr int kEosId = 2;
  static constexpr int kBlankId = 3;

  std::vector<std::string> tokens;
  std::vector<std::pair<std::string, std::string>> merges;  // in training order
  std::unordered_map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(tokens.size()); }
  int id_of(const std::string& tok) const;
  const std::string& token(int id) const;
  void rebuild_index();
};

// Trains on a stream of whitespace-split word sequences (transcripts and
// translations together). vocab_size caps specials + alphabet + merges.
BpeVocab train_bpe(const std::vector<std::vector<std::string>>& sentences,
                   int vocab_size);

std::vector<int> encode(const BpeVocab& vocab, const std::vector<std::string>& words);
std::vector<std::string> decode(const BpeVocab& vocab, const std::vector<int>& ids);

struct TokenRange {
  int lo = 0;  // 1-based, inclusive
  int hi = 0;
};

// Groups encoded tokens back into whole words; a word starts at each
// boundary-marked token. Errors when the first token lacks the marker.
std::vector<TokenRange> group_words(const BpeVocab& vocab,
                                    const std::vector<int>& tokens);

void save_bpe(const BpeVocab& vocab, const std::filesystem::path& path);
BpeVocab load_bpe(const std::filesystem::path& path);

}  // namespace waco::corpus
