// Representation analyses: word/sentence embedding similarity, alignment
// matrices, rank correlation, cascade evaluation and SeqKD expansion.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "corpus/generator.hpp"
#include "eval/beam.hpp"
#include "losses/losses.hpp"

namespace waco::eval {

struct SimilarityReport {
  double word_level_mean_cosine = 0.0;
  double sentence_level_mean_cosine = 0.0;
  int n_words = 0;
  int n_sentences = 0;
};

SimilarityReport similarity_report(model::Params& params,
                                   const corpus::BpeVocab& vocab,
                                   const std::vector<corpus::Utterance>& set,
                                   const losses::ContrastiveConfig& cfg);

struct AlignmentMatrices {
  ad::Mat token_to_frame;  // m x enc_len: cosine(pooled text word i, frame j)
  ad::Mat word_level;      // m x m: cosine(pooled speech span i, pooled text word j)
  std::vector<std::string> words;
};

// Nullopt-style: empty matrices when the utterance is skip-marked.
AlignmentMatrices alignment_matrix(model::Params& params,
                                   const corpus::BpeVocab& vocab,
                                   const corpus::Utterance& utt,
                                   const losses::ContrastiveConfig& cfg);

void write_matrix_tsv(const ad::Mat& m, const std::filesystem::path& path);

// Mean diagonal minus mean off-diagonal of a square matrix.
double diag_margin(const ad::Mat& m);

double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// Beam-decode every utterance (speech or transcript memory); parallelized
// over utterances up to `n_threads`, output order deterministic.
std::vector<std::string> translate_set(model::Params& params,
                                       const corpus::BpeVocab& vocab,
                                       const std::vector<corpus::Utterance>& set,
                                       const DecodeConfig& cfg, bool from_speech,
                                       int n_threads = 1);

std::string detokenize(const corpus::BpeVocab& vocab, const std::vector<int>& ids);

// ASR model transcribes, MT model translates the transcript tokens.
double cascade_eval(model::Params& asr_params, model::Params& mt_params,
                    const corpus::BpeVocab& vocab,
                    const std::vector<corpus::Utterance>& test_set,
                    const DecodeConfig& cfg, int n_threads = 1);

// Replaces each row's translation with the MT model's beam decode of its
// transcript; feature paths are rewritten as absolute. Throws DataError
// naming the row id on decode failure.
std::vector<corpus::ManifestRow> seqkd_expand(
    model::Params& mt_params, const corpus::BpeVocab& vocab,
    const std::vector<corpus::ManifestRow>& asr_rows,
    const std::filesystem::path& manifest_dir, const DecodeConfig& cfg);

}  // namespace waco::eval
