// Toy cross-modal architecture: speech encoder (strided conv downsampling +
// Transformer blocks), text embedding table, joint encoder-decoder, and a
// CTC projection head whose token rows are shared with the text embedding.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core/autodiff.hpp"
#include "core/error.hpp"

namespace waco::model {

using ad::Mat;
using ad::Tape;
using ad::Var;

struct ConvSpec {
  int kernel = 5;
  int stride = 2;
};

struct ModelConfig {
  int feat_dim = 16;
  int d_model = 64;
  int n_heads = 4;
  int ffn_dim = 128;
  int n_speech_layers = 2;
  int n_joint_enc_layers = 2;
  int n_dec_layers = 2;
  std::vector<ConvSpec> downsample = {{5, 2}, {5, 2}};
  int vocab_size = 0;
  double dropout = 0.1;
  int max_positions = 512;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  int total_stride() const;
  // Output length of the conv stack: per layer, ceil division by its stride.
  int enc_len(int n_frames) const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct Tensor {
  Mat value;
  Mat grad;  // empty until first accumulation
};

class Params {
 public:
  Params() = default;
  Params(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::map<std::string, Tensor>& tensors() { return tensors_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  void zero_grads();
  bool grads_finite(std::string* offending = nullptr) const;

 private:
  ModelConfig cfg_;
  std::map<std::string, Tensor> tensors_;
};

// Checkpoint: magic "WACOCKPT", u32 config-JSON length + bytes, u32 tensor
// count, then per tensor name/rank/dims (u32) and f32 little-endian payload.
void save_checkpoint(const Params& params, const std::filesystem::path& path);
Params load_checkpoint(const std::filesystem::path& path);

// Forward passes on a tape. `train` enables dropout (seeded from the tape).
class Model {
 public:
  explicit Model(Params& p) : p_(p) {}

  const ModelConfig& config() const { return p_.config(); }

  // features: n_frames x feat_dim (double). Output: enc_len x d_model.
  Var s_enc(Tape& t, const Mat& features, bool train) const;
  // Speech encoding plus fresh sinusoidal positions, the joint-encoder input
  // for speech (mirrors t_emb_pos; the contrastive losses pool s_enc itself).
  Var s_enc_pos(Tape& t, const Mat& features, bool train) const;
  // Raw embedding rows scaled by sqrt(d_model); no positional terms.
  Var t_emb(Tape& t, const std::vector<int>& tokens) const;
  // Embedding plus sinusoidal positions, the joint-encoder input for text.
  Var t_emb_pos(Tape& t, const std::vector<int>& tokens, bool train) const;
  // Joint encoder over either modality's sequence.
  Var joint_encode(Tape& t, Var memory_in, bool train) const;
  // Causal decoder over `target_in` attending to an encoded memory; returns
  // per-position logits over the vocabulary (output projection tied to the
  // embedding table).
  Var decode_logits(Tape& t, Var memory, const std::vector<int>& target_in,
                    bool train) const;
  // Full path: memory_in -> joint encoder -> decoder logits.
  Var joint_forward(Tape& t, Var memory_in, const std::vector<int>& target_in,
                    bool train) const;
  // Per-frame logits over vocab_size + 1; the last column is the CTC blank.
  Var ctc_logits(Tape& t, Var speech_enc_out) const;

 private:
  Var param(Tape& t, const std::string& name) const;
  Var encoder_layer(Tape& t, Var x, const std::string& prefix, bool train) const;
  Var decoder_layer(Tape& t, Var x, Var memory, const std::string& prefix,
                    bool train) const;
  Var attention(Tape& t, Var q_in, Var kv_in, const std::string& prefix,
                bool causal, bool train) const;
  Var ffn(Tape& t, Var x, const std::string& prefix, bool train) const;
  Var add_positions(Tape& t, Var x, bool train) const;
  Var final_norm(Tape& t, Var x, const std::string& prefix) const;

  Params& p_;
};

Mat sinusoidal_positions(int n, int d_model);

}  // namespace waco::model
