// Beam search over the joint encoder-decoder with length-penalty scoring
// score = sum(log P) / len^alpha.
#pragma once

#include <vector>

#include "corpus/types.hpp"
#include "model/model.hpp"

namespace waco::eval {

struct DecodeConfig {
  int beam_size = 10;
  double length_penalty_alpha = 0.6;
  int max_len = 64;

  void validate() const;
};

// Joint-encoder memory in eval mode, as a plain value matrix.
ad::Mat encode_memory_speech(model::Params& params, const corpus::FeatMatrix& features);
ad::Mat encode_memory_text(model::Params& params, const std::vector<int>& tokens);

// Returns the decoded token ids with BOS/EOS stripped (possibly empty).
std::vector<int> beam_decode(model::Params& params, const ad::Mat& memory,
                             const DecodeConfig& cfg);

}  // namespace waco::eval
