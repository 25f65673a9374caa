#include "model/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace waco::model {

void ModelConfig::validate() const {
  if (d_model % n_heads != 0)
    throw ConfigError("model: d_model must be divisible by n_heads");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("model: dropout must lie in [0, 1)");
  if (downsample.empty()) throw ConfigError("model: downsample stack empty");
  for (const auto& c : downsample)
    if (c.stride < 1 || c.kernel < 1)
      throw ConfigError("model: conv kernel and stride must be >= 1");
  if (vocab_size <= 0) throw ConfigError("model: vocab_size must be positive");
  for (int v : {feat_dim, d_model, ffn_dim, n_speech_layers, n_joint_enc_layers,
                n_dec_layers, max_positions})
    if (v <= 0) throw ConfigError("model: all dimensions must be positive");
}

int ModelConfig::total_stride() const {
  int s = 1;
  for (const auto& c : downsample) s *= c.stride;
  return s;
}

int ModelConfig::enc_len(int n_frames) const {
  int len = n_frames;
  for (const auto& c : downsample) len = (len + c.stride - 1) / c.stride;
  return len;
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json ds = nlohmann::json::array();
  for (const auto& c : downsample) ds.push_back({c.kernel, c.stride});
  return {{"feat_dim", feat_dim},
          {"d_model", d_model},
          {"n_heads", n_heads},
          {"ffn_dim", ffn_dim},
          {"n_speech_layers", n_speech_layers},
          {"n_joint_enc_layers", n_joint_enc_layers},
          {"n_dec_layers", n_dec_layers},
          {"downsample", ds},
          {"vocab_size", vocab_size},
          {"dropout", dropout},
          {"max_positions", max_positions}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.feat_dim = j.at("feat_dim");
  c.d_model = j.at("d_model");
  c.n_heads = j.at("n_heads");
  c.ffn_dim = j.at("ffn_dim");
  c.n_speech_layers = j.at("n_speech_layers");
  c.n_joint_enc_layers = j.at("n_joint_enc_layers");
  c.n_dec_layers = j.at("n_dec_layers");
  c.downsample.clear();
  for (const auto& d : j.at("downsample"))
    c.downsample.push_back({d.at(0), d.at(1)});
  c.vocab_size = j.at("vocab_size");
  c.dropout = j.at("dropout");
  c.max_positions = j.at("max_positions");
  c.validate();
  return c;
}

namespace {

Mat uniform_init(std::mt19937_64& rng, int rows, int cols) {
  double a = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
  return m;
}

Mat normal_init(std::mt19937_64& rng, int rows, int cols, double sd) {
  std::normal_distribution<double> dist(0.0, sd);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
  return m;
}

}  // namespace

Params::Params(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  auto weight = [&](const std::string& name, int r, int c) {
    tensors_[name].value = uniform_init(rng, r, c);
  };
  auto zeros = [&](const std::string& name, int r, int c) {
    tensors_[name].value = Mat::Zero(r, c);
  };
  auto ones = [&](const std::string& name, int c) {
    tensors_[name].value = Mat::Ones(1, c);
  };
  int d = cfg_.d_model;

  tensors_["temb.emb"].value =
      normal_init(rng, cfg_.vocab_size, d, 1.0 / std::sqrt(static_cast<double>(d)));

  auto attn = [&](const std::string& p) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) weight(p + "." + w, d, d);
    for (const char* b : {"bq", "bk", "bv", "bo"}) zeros(p + "." + b, 1, d);
  };
  auto ln = [&](const std::string& p) {
    ones(p + ".g", d);
    zeros(p + ".b", 1, d);
  };
  auto ffn = [&](const std::string& p) {
    weight(p + ".w1", d, cfg_.ffn_dim);
    zeros(p + ".b1", 1, cfg_.ffn_dim);
    weight(p + ".w2", cfg_.ffn_dim, d);
    zeros(p + ".b2", 1, d);
  };
  auto enc_layer = [&](const std::string& p) {
    ln(p + ".ln1");
    attn(p + ".attn");
    ln(p + ".ln2");
    ffn(p + ".ffn");
  };

  int in_dim = cfg_.feat_dim;
  for (std::size_t i = 0; i < cfg_.downsample.size(); ++i) {
    std::string p = "senc.conv" + std::to_string(i);
    weight(p + ".w", cfg_.downsample[i].kernel * in_dim, d);
    zeros(p + ".b", 1, d);
    in_dim = d;
  }
  for (int i = 0; i < cfg_.n_speech_layers; ++i)
    enc_layer("senc.l" + std::to_string(i));
  ln("senc.lnf");

  for (int i = 0; i < cfg_.n_joint_enc_layers; ++i)
    enc_layer("joint.l" + std::to_string(i));
  ln("joint.lnf");

  for (int i = 0; i < cfg_.n_dec_layers; ++i) {
    std::string p = "dec.l" + std::to_string(i);
    ln(p + ".ln1");
    attn(p + ".self");
    ln(p + ".ln2");
    attn(p + ".cross");
    ln(p + ".ln3");
    ffn(p + ".ffn");
  }
  ln("dec.lnf");

  weight("ctc.blank_w", 1, d);
  zeros("ctc.bias", 1, cfg_.vocab_size + 1);
  // Trained CTC models emit blank on most frames ("peaky" alignments); start
  // the blank class with a positive bias so the head begins in that regime
  // instead of spending its short schedule discovering it.
  at("ctc.bias").value(0, cfg_.vocab_size) = 4.0;
}

Tensor& Params::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw DataError("unknown parameter tensor: " + name);
  return it->second;
}

const Tensor& Params::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw DataError("unknown parameter tensor: " + name);
  return it->second;
}

void Params::zero_grads() {
  for (auto& [name, t] : tensors_) t.grad.resize(0, 0);
}

bool Params::grads_finite(std::string* offending) const {
  for (const auto& [name, t] : tensors_) {
    if (t.grad.size() == 0) continue;
    if (!t.grad.allFinite()) {
      if (offending) *offending = name;
      return false;
    }
  }
  return true;
}

namespace {

constexpr char kCkptMagic[8] = {'W', 'A', 'C', 'O', 'C', 'K', 'P', 'T'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw DataError("truncated checkpoint: " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const Params& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os.write(kCkptMagic, 8);
  std::string cfg = params.config().to_json().dump();
  put_u32(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put_u32(os, static_cast<std::uint32_t>(params.tensors().size()));
  for (const auto& [name, t] : params.tensors()) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, 2);
    put_u32(os, static_cast<std::uint32_t>(t.value.rows()));
    put_u32(os, static_cast<std::uint32_t>(t.value.cols()));
    for (Eigen::Index i = 0; i < t.value.rows(); ++i)
      for (Eigen::Index j = 0; j < t.value.cols(); ++j) {
        float f = static_cast<float>(t.value(i, j));
        os.write(reinterpret_cast<const char*>(&f), 4);
      }
  }
  if (!os) throw DataError("write failed: " + path.string());
}

Params load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw DataError("bad magic in checkpoint: " + path.string());
  std::uint32_t cfg_len = get_u32(is, path.string());
  std::string cfg_text(cfg_len, '\0');
  if (!is.read(cfg_text.data(), cfg_len))
    throw DataError("truncated config block in " + path.string());
  ModelConfig cfg = ModelConfig::from_json(nlohmann::json::parse(cfg_text));
  Params params(cfg, 0);
  std::uint32_t n_tensors = get_u32(is, path.string());
  for (std::uint32_t k = 0; k < n_tensors; ++k) {
    std::uint32_t name_len = get_u32(is, path.string());
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw DataError("truncated tensor name in " + path.string());
    std::uint32_t rank = get_u32(is, path.string());
    if (rank != 2) throw DataError("unsupported tensor rank in " + path.string());
    std::uint32_t rows = get_u32(is, path.string());
    std::uint32_t cols = get_u32(is, path.string());
    Tensor& t = params.at(name);
    if (t.value.rows() != static_cast<Eigen::Index>(rows) ||
        t.value.cols() != static_cast<Eigen::Index>(cols))
      throw DataError("shape mismatch for tensor '" + name + "' in " + path.string());
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) {
        float f;
        if (!is.read(reinterpret_cast<char*>(&f), 4))
          throw DataError("truncated payload for tensor '" + name + "'");
        t.value(i, j) = static_cast<double>(f);
      }
  }
  return params;
}

Mat sinusoidal_positions(int n, int d_model) {
  Mat pos(n, d_model);
  for (int p = 0; p < n; ++p)
    for (int i = 0; i < d_model; ++i) {
      double angle = p / std::pow(10000.0, 2.0 * (i / 2) / d_model);
      pos(p, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pos;
}

Var Model::param(Tape& t, const std::string& name) const {
  Tensor& tensor = p_.at(name);
  return t.leaf(tensor.value, &tensor.grad);
}

Var Model::attention(Tape& t, Var q_in, Var kv_in, const std::string& prefix,
                     bool causal, bool train) const {
  const ModelConfig& cfg = p_.config();
  int dh = cfg.head_dim();
  Var q = t.add_row(t.matmul(q_in, param(t, prefix + ".wq")), param(t, prefix + ".bq"));
  Var k = t.add_row(t.matmul(kv_in, param(t, prefix + ".wk")), param(t, prefix + ".bk"));
  Var v = t.add_row(t.matmul(kv_in, param(t, prefix + ".wv")), param(t, prefix + ".bv"));

  Mat mask;
  if (causal) {
    Eigen::Index n = q_in.rows();
    mask = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) mask(i, j) = -1e30;
  }

  std::vector<Var> heads;
  for (int h = 0; h < cfg.n_heads; ++h) {
    Var qh = t.slice_cols(q, h * dh, dh);
    Var kh = t.slice_cols(k, h * dh, dh);
    Var vh = t.slice_cols(v, h * dh, dh);
    Var scores = t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var attn = t.softmax_rows(scores, causal ? &mask : nullptr);
    if (train) attn = t.dropout(attn, cfg.dropout);
    heads.push_back(t.matmul(attn, vh));
  }
  Var merged = t.concat_cols(heads);
  return t.add_row(t.matmul(merged, param(t, prefix + ".wo")), param(t, prefix + ".bo"));
}

Var Model::ffn(Tape& t, Var x, const std::string& prefix, bool train) const {
  Var h = t.relu(t.add_row(t.matmul(x, param(t, prefix + ".w1")), param(t, prefix + ".b1")));
  if (train) h = t.dropout(h, p_.config().dropout);
  return t.add_row(t.matmul(h, param(t, prefix + ".w2")), param(t, prefix + ".b2"));
}

Var Model::encoder_layer(Tape& t, Var x, const std::string& prefix, bool train) const {
  // Pre-norm residual blocks.
  Var a = t.layer_norm(x, param(t, prefix + ".ln1.g"), param(t, prefix + ".ln1.b"));
  Var attn = attention(t, a, a, prefix + ".attn", /*causal=*/false, train);
  if (train) attn = t.dropout(attn, p_.config().dropout);
  x = t.add(x, attn);
  Var f = t.layer_norm(x, param(t, prefix + ".ln2.g"), param(t, prefix + ".ln2.b"));
  Var ff = ffn(t, f, prefix + ".ffn", train);
  if (train) ff = t.dropout(ff, p_.config().dropout);
  return t.add(x, ff);
}

Var Model::decoder_layer(Tape& t, Var x, Var memory, const std::string& prefix,
                         bool train) const {
  Var a = t.layer_norm(x, param(t, prefix + ".ln1.g"), param(t, prefix + ".ln1.b"));
  Var self = attention(t, a, a, prefix + ".self", /*causal=*/true, train);
  if (train) self = t.dropout(self, p_.config().dropout);
  x = t.add(x, self);
  Var c = t.layer_norm(x, param(t, prefix + ".ln2.g"), param(t, prefix + ".ln2.b"));
  Var cross = attention(t, c, memory, prefix + ".cross", /*causal=*/false, train);
  if (train) cross = t.dropout(cross, p_.config().dropout);
  x = t.add(x, cross);
  Var f = t.layer_norm(x, param(t, prefix + ".ln3.g"), param(t, prefix + ".ln3.b"));
  Var ff = ffn(t, f, prefix + ".ffn", train);
  if (train) ff = t.dropout(ff, p_.config().dropout);
  return t.add(x, ff);
}

Var Model::final_norm(Tape& t, Var x, const std::string& prefix) const {
  return t.layer_norm(x, param(t, prefix + ".g"), param(t, prefix + ".b"));
}

Var Model::add_positions(Tape& t, Var x, bool train) const {
  const ModelConfig& cfg = p_.config();
  if (x.rows() > cfg.max_positions)
    throw DataError("sequence length " + std::to_string(x.rows()) +
                    " exceeds max_positions " + std::to_string(cfg.max_positions));
  Var pos = t.constant(sinusoidal_positions(static_cast<int>(x.rows()), cfg.d_model));
  Var out = t.add(x, pos);
  if (train) out = t.dropout(out, cfg.dropout);
  return out;
}

Var Model::s_enc(Tape& t, const Mat& features, bool train) const {
  const ModelConfig& cfg = p_.config();
  if (features.rows() < cfg.total_stride())
    throw DataError("s_enc: input of " + std::to_string(features.rows()) +
                    " frames is shorter than the total stride " +
                    std::to_string(cfg.total_stride()));
  Var x = t.constant(features);
  for (std::size_t i = 0; i < cfg.downsample.size(); ++i) {
    std::string p = "senc.conv" + std::to_string(i);
    Var w = t.window_gather(x, cfg.downsample[i].kernel, cfg.downsample[i].stride);
    x = t.relu(t.add_row(t.matmul(w, param(t, p + ".w")), param(t, p + ".b")));
  }
  x = add_positions(t, x, train);
  for (int i = 0; i < cfg.n_speech_layers; ++i)
    x = encoder_layer(t, x, "senc.l" + std::to_string(i), train);
  return final_norm(t, x, "senc.lnf");
}

Var Model::s_enc_pos(Tape& t, const Mat& features, bool train) const {
  return add_positions(t, s_enc(t, features, train), train);
}

Var Model::t_emb(Tape& t, const std::vector<int>& tokens) const {
  Var table = param(t, "temb.emb");
  Var rows = t.gather_rows(table, tokens);
  return t.scale(rows, std::sqrt(static_cast<double>(p_.config().d_model)));
}

Var Model::t_emb_pos(Tape& t, const std::vector<int>& tokens, bool train) const {
  return add_positions(t, t_emb(t, tokens), train);
}

Var Model::joint_encode(Tape& t, Var memory_in, bool train) const {
  Var x = memory_in;
  for (int i = 0; i < p_.config().n_joint_enc_layers; ++i)
    x = encoder_layer(t, x, "joint.l" + std::to_string(i), train);
  return final_norm(t, x, "joint.lnf");
}

Var Model::decode_logits(Tape& t, Var memory, const std::vector<int>& target_in,
                         bool train) const {
  Var x = t_emb_pos(t, target_in, train);
  for (int i = 0; i < p_.config().n_dec_layers; ++i)
    x = decoder_layer(t, x, memory, "dec.l" + std::to_string(i), train);
  x = final_norm(t, x, "dec.lnf");
  // Output projection tied to the embedding table.
  return t.matmul_nt(x, param(t, "temb.emb"));
}

Var Model::joint_forward(Tape& t, Var memory_in, const std::vector<int>& target_in,
                         bool train) const {
  return decode_logits(t, joint_encode(t, memory_in, train), target_in, train);
}

Var Model::ctc_logits(Tape& t, Var speech_enc_out) const {
  // Token columns share the embedding rows; the blank column is learned.
  Var emb = param(t, "temb.emb");
  Var blank = param(t, "ctc.blank_w");
  Var emb_logits = t.matmul_nt(speech_enc_out, emb);        // L x V
  Var blank_logits = t.matmul_nt(speech_enc_out, blank);    // L x 1
  Var logits = t.concat_cols({emb_logits, blank_logits});   // L x (V+1)
  return t.add_row(logits, param(t, "ctc.bias"));
}

}  // namespace waco::model
