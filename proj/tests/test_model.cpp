#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "model/model.hpp"

using namespace waco;
using ad::Mat;
using ad::Tape;
using ad::Var;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("waco_model_" + std::to_string(std::rand()) + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

model::ModelConfig tiny_config() {
  model::ModelConfig cfg;
  cfg.feat_dim = 5;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.ffn_dim = 16;
  cfg.n_speech_layers = 1;
  cfg.n_joint_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.downsample = {{3, 2}};
  cfg.vocab_size = 12;
  cfg.dropout = 0.0;
  cfg.max_positions = 64;
  return cfg;
}

Mat random_features(std::mt19937_64& rng, int n, int d) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = dist(rng);
  return m;
}

}  // namespace

TEST_CASE("config validation") {
  auto cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.n_heads = 3;  // does not divide d_model
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.vocab_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(cfg.to_json() == model::ModelConfig::from_json(cfg.to_json()).to_json());
}

TEST_CASE("enc_len is per-layer ceil division") {
  model::ModelConfig cfg;
  cfg.downsample = {{5, 2}, {5, 2}};
  CHECK(cfg.total_stride() == 4);
  CHECK(cfg.enc_len(100) == 25);
  CHECK(cfg.enc_len(101) == 26);  // ceil(101/2)=51, ceil(51/2)=26
  CHECK(cfg.enc_len(1) == 1);
  CHECK(cfg.enc_len(1600) == 400);
  model::ModelConfig one;
  one.downsample = {{3, 2}};
  CHECK(one.enc_len(5) == 3);
}

TEST_CASE("parameter creation is seeded and complete") {
  auto cfg = tiny_config();
  model::Params a(cfg, 7), b(cfg, 7), c(cfg, 8);
  CHECK(a.tensors().size() == b.tensors().size());
  for (const auto& [name, t] : a.tensors()) {
    CHECK(t.value == b.at(name).value);
  }
  CHECK(a.at("temb.emb").value != c.at("temb.emb").value);
  CHECK(a.at("temb.emb").value.rows() == cfg.vocab_size);
  CHECK(a.at("temb.emb").value.cols() == cfg.d_model);
  CHECK(a.at("ctc.blank_w").value.cols() == cfg.d_model);
  CHECK(a.at("ctc.bias").value.cols() == cfg.vocab_size + 1);
  CHECK_THROWS_AS(a.at("no.such.tensor"), DataError);
}

TEST_CASE("speech encoder output shape follows enc_len") {
  auto cfg = tiny_config();
  model::Params p(cfg, 1);
  model::Model m(p);
  std::mt19937_64 rng(3);
  for (int n : {2, 4, 9, 17}) {
    Tape t;
    Var enc = m.s_enc(t, random_features(rng, n, cfg.feat_dim), false);
    CHECK(enc.rows() == cfg.enc_len(n));
    CHECK(enc.cols() == cfg.d_model);
  }
  // Shorter than the total stride is rejected rather than padded.
  Tape t;
  CHECK_THROWS_AS(m.s_enc(t, random_features(rng, 1, cfg.feat_dim), false),
                  DataError);
}

TEST_CASE("text embedding is scaled table lookup without positions") {
  auto cfg = tiny_config();
  model::Params p(cfg, 1);
  model::Model m(p);
  Tape t;
  std::vector<int> toks = {4, 7, 4};
  Var e = m.t_emb(t, toks);
  CHECK(e.rows() == 3);
  Mat expect = p.at("temb.emb").value.row(4) * std::sqrt(double(cfg.d_model));
  CHECK((e.val().row(0) - expect).norm() < 1e-12);
  CHECK(e.val().row(0) == e.val().row(2));  // no positional term
  Var ep = m.t_emb_pos(t, toks, false);
  CHECK(ep.val().row(0) != ep.val().row(2));  // positions break the tie
}

TEST_CASE("decoder logits are causal") {
  auto cfg = tiny_config();
  model::Params p(cfg, 2);
  model::Model m(p);
  std::mt19937_64 rng(5);
  Mat memory = random_features(rng, 4, cfg.d_model);
  std::vector<int> in_a = {1, 4, 5, 6};
  std::vector<int> in_b = {1, 4, 5, 9};  // differs only at the last position
  Tape t;
  Var la = m.decode_logits(t, t.constant(memory), in_a, false);
  Var lb = m.decode_logits(t, t.constant(memory), in_b, false);
  CHECK(la.rows() == 4);
  CHECK(la.cols() == cfg.vocab_size);
  // Earlier positions cannot see the future change.
  CHECK((la.val().topRows(3) - lb.val().topRows(3)).norm() < 1e-12);
  CHECK((la.val().row(3) - lb.val().row(3)).norm() > 1e-8);
}

TEST_CASE("output projection is tied to the embedding table") {
  auto cfg = tiny_config();
  model::Params p(cfg, 3);
  model::Model m(p);
  std::mt19937_64 rng(7);
  Mat memory = random_features(rng, 3, cfg.d_model);
  std::vector<int> in = {1, 5};
  Tape t0;
  Mat before = m.decode_logits(t0, t0.constant(memory), in, false).val();
  // A whole-row constant shift is invisible through the zero-mean layer-norm
  // output, so perturb a single coordinate.
  p.at("temb.emb").value(9, 0) += 0.5;
  Tape t1;
  Mat after = m.decode_logits(t1, t1.constant(memory), in, false).val();
  // Only that row's output column moves.
  for (int j = 0; j < cfg.vocab_size; ++j) {
    if (j == 9)
      CHECK((before.col(j) - after.col(j)).norm() > 1e-8);
    else
      CHECK((before.col(j) - after.col(j)).norm() < 1e-12);
  }
}

TEST_CASE("ctc logits append a learned blank column") {
  auto cfg = tiny_config();
  model::Params p(cfg, 4);
  model::Model m(p);
  std::mt19937_64 rng(9);
  Tape t;
  Var enc = m.s_enc(t, random_features(rng, 9, cfg.feat_dim), false);
  Var logits = m.ctc_logits(t, enc);
  CHECK(logits.rows() == enc.rows());
  CHECK(logits.cols() == cfg.vocab_size + 1);
  // Token columns are tied to the embedding table: perturbing one embedding
  // row moves exactly that logit column (the blank column has its own row).
  Mat enc_val = enc.val();
  Mat before = logits.val();
  p.at("temb.emb").value(2, 0) += 0.25;
  Tape t2;
  Mat after = m.ctc_logits(t2, t2.constant(enc_val)).val();
  for (int j = 0; j <= cfg.vocab_size; ++j) {
    if (j == 2)
      CHECK((before.col(j) - after.col(j)).norm() > 1e-8);
    else
      CHECK((before.col(j) - after.col(j)).norm() < 1e-12);
  }
}

TEST_CASE("checkpoint round trip") {
  TempDir d;
  auto cfg = tiny_config();
  model::Params p(cfg, 11);
  fs::path path = d.path / "m.waco";
  model::save_checkpoint(p, path);

  std::ifstream is(path, std::ios::binary);
  char magic[8];
  is.read(magic, 8);
  CHECK(std::string(magic, 8) == "WACOCKPT");

  model::Params q = model::load_checkpoint(path);
  CHECK(q.config().to_json() == cfg.to_json());
  REQUIRE(q.tensors().size() == p.tensors().size());
  for (const auto& [name, t] : p.tensors()) {
    // Stored as f32: loaded values match the float cast of the originals.
    Mat expect = t.value.cast<float>().cast<double>();
    CHECK(q.at(name).value == expect);
  }
  // Save -> load -> save is byte-identical.
  fs::path path2 = d.path / "m2.waco";
  model::save_checkpoint(q, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
  CHECK_THROWS_AS(model::load_checkpoint(d.path / "missing.waco"), DataError);
}

TEST_CASE("grads_finite flags the offending tensor") {
  auto cfg = tiny_config();
  model::Params p(cfg, 1);
  p.at("temb.emb").grad = Mat::Zero(cfg.vocab_size, cfg.d_model);
  CHECK(p.grads_finite());
  p.at("temb.emb").grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  std::string name;
  CHECK_FALSE(p.grads_finite(&name));
  CHECK(name == "temb.emb");
}

TEST_CASE("forward passes are deterministic in eval mode") {
  auto cfg = tiny_config();
  model::Params p(cfg, 21);
  model::Model m(p);
  std::mt19937_64 rng(13);
  Mat feats = random_features(rng, 11, cfg.feat_dim);
  Tape t1(1), t2(999);  // different dropout seeds must not matter when train=false
  Mat a = m.joint_encode(t1, m.s_enc(t1, feats, false), false).val();
  Mat b = m.joint_encode(t2, m.s_enc(t2, feats, false), false).val();
  CHECK(a == b);
}

TEST_CASE("sinusoidal positions match the standard formula") {
  Mat pos = model::sinusoidal_positions(3, 4);
  CHECK(pos.rows() == 3);
  CHECK(pos(0, 0) == doctest::Approx(0.0));
  CHECK(pos(0, 1) == doctest::Approx(1.0));
  CHECK(pos(1, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(pos(1, 1) == doctest::Approx(std::cos(1.0)));
  double w = 1.0 / std::pow(10000.0, 2.0 / 4.0);
  CHECK(pos(2, 2) == doctest::Approx(std::sin(2.0 * w)));
  CHECK(pos(2, 3) == doctest::Approx(std::cos(2.0 * w)));
}
