// Synthetic paired speech/text generation: every source word has a fixed
// random prototype frame; an utterance concatenates noisy prototype blocks
// separated by zero-mean silence, with exact word intervals recorded.
#pragma once

#include <filesystem>

#include "corpus/io.hpp"
#include "corpus/types.hpp"

namespace waco::corpus {

struct Lexicon {
  std::vector<std::string> source;
  std::vector<std::string> target;  // dictionary image of source[i] is target[i]
};

Lexicon make_lexicon(const CorpusSpec& spec);

// Deterministic in (spec.seed, word_index) only.
Eigen::RowVectorXf word_prototype(const CorpusSpec& spec, int word_index);

Utterance generate_utterance(const CorpusSpec& spec, const Lexicon& lex,
                             const std::string& split, int index);

// Writes manifests for every split plus feats/ and align/ subdirectories.
void generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir);

// Uniform sampling without replacement until the cumulative frame count
// reaches `frame_budget`.
std::vector<ManifestRow> subset_budget(const std::vector<ManifestRow>& rows,
                                       std::int64_t frame_budget,
                                       std::uint64_t seed);

}  // namespace waco::corpus
