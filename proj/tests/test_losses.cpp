#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "corpus/generator.hpp"
#include "losses/losses.hpp"

using namespace waco;
using ad::Mat;
using ad::Pooling;
using ad::Tape;
using ad::Var;
using losses::ContrastiveConfig;

namespace {

std::vector<Var> rows_of(Tape& t, Var m) {
  std::vector<Var> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    out.push_back(t.pool_range(m, i, i, Pooling::kSum));
  return out;
}

struct Fixture {
  corpus::CorpusSpec spec;
  corpus::Lexicon lex;
  std::vector<corpus::Utterance> utts;
  corpus::BpeVocab vocab;
  model::Params params;

  Fixture() {
    spec.n_source_words = 10;
    spec.feat_dim = 5;
    spec.frames_per_word = {5, 8};
    spec.silence_frames = {0, 2};
    spec.words_per_utt = {3, 5};
    spec.seed = 17;
    lex = corpus::make_lexicon(spec);
    std::vector<std::vector<std::string>> text;
    for (int i = 0; i < 8; ++i) {
      utts.push_back(corpus::generate_utterance(spec, lex, "f", i));
      text.push_back(utts.back().transcript);
      text.push_back(utts.back().translation);
    }
    vocab = corpus::train_bpe(text, 96);
    model::ModelConfig mc;
    mc.feat_dim = spec.feat_dim;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.ffn_dim = 16;
    mc.n_speech_layers = 1;
    mc.n_joint_enc_layers = 1;
    mc.n_dec_layers = 1;
    mc.downsample = {{3, 2}};
    mc.vocab_size = vocab.size();
    mc.dropout = 0.0;
    params = model::Params(mc, 23);
  }

  std::vector<const corpus::Utterance*> batch() const {
    std::vector<const corpus::Utterance*> b;
    for (const auto& u : utts) b.push_back(&u);
    return b;
  }
};

}  // namespace

TEST_CASE("cosine basics") {
  Eigen::VectorXd a(2), b(2);
  a << 1, 0;
  b << 0, 2;
  CHECK(losses::cosine(a, a) == doctest::Approx(1.0));
  CHECK(losses::cosine(a, b) == doctest::Approx(0.0));
  CHECK_THROWS_AS(losses::cosine(a, Eigen::VectorXd::Zero(2)), NumericError);
}

TEST_CASE("single-pair contrastive loss is exactly zero") {
  Tape t;
  Mat f(1, 3);
  f << 0.3, -1.0, 2.0;
  ContrastiveConfig cfg;
  for (double tau : {0.05, 0.2, 1.0}) {
    cfg.tau = tau;
    Var loss = losses::n_pair_loss(t, rows_of(t, t.leaf(f)), rows_of(t, t.leaf(f)),
                                   cfg);
    CHECK(loss.val()(0, 0) == 0.0);
  }
}

TEST_CASE("orthonormal two-pair case equals ln(1+e^{-1/tau})") {
  Mat e = Mat::Identity(2, 2);
  ContrastiveConfig cfg;
  for (double tau : {0.05, 0.2, 1.0}) {
    cfg.tau = tau;
    Tape t;
    Var loss =
        losses::n_pair_loss(t, rows_of(t, t.leaf(e)), rows_of(t, t.leaf(e)), cfg);
    CHECK(loss.val()(0, 0) ==
          doctest::Approx(std::log1p(std::exp(-1.0 / tau))).epsilon(1e-12));
  }
  // The spec's pinned number at tau = 0.2.
  cfg.tau = 0.2;
  Tape t;
  Var loss =
      losses::n_pair_loss(t, rows_of(t, t.leaf(e)), rows_of(t, t.leaf(e)), cfg);
  CHECK(loss.val()(0, 0) == doctest::Approx(0.006715).epsilon(1e-3));
}

TEST_CASE("cosine scores make the loss scale invariant") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d(0.0, 1.0);
  Mat fs(3, 4), ft(3, 4);
  for (Eigen::Index i = 0; i < fs.size(); ++i) fs(i) = d(rng), ft(i) = d(rng);
  ContrastiveConfig cfg;
  Tape t;
  double a = losses::n_pair_loss(t, rows_of(t, t.leaf(fs)), rows_of(t, t.leaf(ft)),
                                 cfg).val()(0, 0);
  double b = losses::n_pair_loss(t, rows_of(t, t.leaf((fs * 7.5).eval())),
                                 rows_of(t, t.leaf((ft * 0.01).eval())), cfg)
                 .val()(0, 0);
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("dedup masking removes same-word negatives") {
  // Pairs 0 and 2 share the word; with dedup their mutual negative terms
  // vanish, so anchor 0 faces one fewer negative.
  Mat fs(3, 3), ft(3, 3);
  fs << 1, 0, 0, 0, 1, 0, 1, 0, 0;
  ft = fs;
  std::vector<std::string> words = {"dog", "cat", "dog"};
  ContrastiveConfig cfg;
  cfg.tau = 1.0;
  Tape t;
  double plain = losses::n_pair_loss(t, rows_of(t, t.leaf(fs)),
                                     rows_of(t, t.leaf(ft)), cfg, &words)
                     .val()(0, 0);
  cfg.dedup_negatives = true;
  double dedup = losses::n_pair_loss(t, rows_of(t, t.leaf(fs)),
                                     rows_of(t, t.leaf(ft)), cfg, &words)
                     .val()(0, 0);
  CHECK(dedup < plain);
  // Row 0 with dedup: negatives {cat} only -> log(e^1 + e^0) - 1, same for
  // row 2; row 1 keeps both (identical) dog negatives at similarity 0.
  double row0 = std::log(std::exp(1.0) + 1.0) - 1.0;
  double row1 = std::log(std::exp(1.0) + 2.0) - 1.0;
  CHECK(dedup == doctest::Approx((2.0 * row0 + row1) / 3.0).epsilon(1e-12));
}

TEST_CASE("n_pair_loss gradient matches finite differences") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> d(0.0, 1.0);
  Mat fs(4, 5), ft(4, 5);
  for (Eigen::Index i = 0; i < fs.size(); ++i) fs(i) = d(rng), ft(i) = d(rng);
  ContrastiveConfig cfg;
  Tape t;
  Var in = t.leaf(fs);
  t.backward(losses::n_pair_loss(t, rows_of(t, in), rows_of(t, t.constant(ft)), cfg));
  Mat fd = ad::finite_diff(
      [&](const Mat& m) {
        Tape u;
        return losses::n_pair_loss(u, rows_of(u, u.leaf(m)),
                                   rows_of(u, u.constant(ft)), cfg)
            .val()(0, 0);
      },
      fs);
  CHECK((in.grad() - fd).norm() / std::max(1.0, fd.norm()) < 1e-6);
}

TEST_CASE("pooled pairs cover every aligned word") {
  Fixture f;
  model::Model m(f.params);
  ContrastiveConfig cfg;
  for (const auto& u : f.utts) {
    Tape t;
    auto pairs = losses::pooled_pairs(t, m, u, f.vocab, cfg, false);
    REQUIRE(pairs.has_value());
    CHECK(pairs->f_s.size() == u.word_intervals.size());
    CHECK(pairs->f_t.size() == pairs->f_s.size());
    CHECK(pairs->words.size() == pairs->f_s.size());
    for (std::size_t i = 0; i < pairs->f_s.size(); ++i) {
      CHECK(pairs->f_s[i].rows() == 1);
      CHECK(pairs->f_s[i].cols() == f.params.config().d_model);
      CHECK(pairs->words[i] == u.word_intervals[i].word);
    }
  }
}

TEST_CASE("after_joint_encoder changes the pooled representations") {
  Fixture f;
  model::Model m(f.params);
  ContrastiveConfig before, after;
  after.after_joint_encoder = true;
  Tape t;
  auto a = losses::pooled_pairs(t, m, f.utts[0], f.vocab, before, false);
  auto b = losses::pooled_pairs(t, m, f.utts[0], f.vocab, after, false);
  REQUIRE(a.has_value());
  REQUIRE(b.has_value());
  CHECK((a->f_s[0].val() - b->f_s[0].val()).norm() > 1e-8);
  CHECK((a->f_t[0].val() - b->f_t[0].val()).norm() > 1e-8);
}

TEST_CASE("waco_ctr and sent_ctr agree with n_pair_loss") {
  Fixture f;
  model::Model m(f.params);
  ContrastiveConfig cfg;
  Tape t;
  auto pairs = losses::pooled_pairs(t, m, f.utts[0], f.vocab, cfg, false);
  REQUIRE(pairs.has_value());
  double via_ctr = losses::waco_ctr(t, *pairs, cfg).val()(0, 0);
  double via_npair =
      losses::n_pair_loss(t, pairs->f_s, pairs->f_t, cfg, &pairs->words).val()(0, 0);
  CHECK(via_ctr == doctest::Approx(via_npair).epsilon(1e-12));
  auto sent = losses::sentence_pair(t, m, f.utts[0], f.vocab, cfg, false);
  CHECK(losses::sent_ctr(t, sent, cfg).val()(0, 0) == 0.0);  // single pair
}

TEST_CASE("loss_pt pools pairs across the whole batch") {
  Fixture f;
  model::Model m(f.params);
  ContrastiveConfig cfg;
  Tape t;
  int n_pairs = 0;
  Var loss = losses::loss_pt(t, m, f.batch(), f.vocab, cfg, false, &n_pairs);
  std::size_t expect = 0;
  for (const auto& u : f.utts) expect += u.word_intervals.size();
  CHECK(n_pairs == static_cast<int>(expect));
  CHECK(std::isfinite(loss.val()(0, 0)));
  CHECK(loss.val()(0, 0) > 0.0);

  // A batch with no alignable pairs is an error.
  corpus::Utterance bare = f.utts[0];
  bare.has_alignment = false;
  bare.word_intervals.clear();
  std::vector<const corpus::Utterance*> empty_batch = {&bare};
  CHECK_THROWS_AS(losses::loss_pt(t, m, empty_batch, f.vocab, cfg, false),
                  DataError);
}

TEST_CASE("loss_ctc_pt is finite and positive") {
  Fixture f;
  model::Model m(f.params);
  Tape t;
  Var loss = losses::loss_ctc_pt(t, m, f.batch(), f.vocab, false);
  CHECK(std::isfinite(loss.val()(0, 0)));
  CHECK(loss.val()(0, 0) > 0.0);
}

TEST_CASE("decoder input and target framing") {
  std::vector<int> toks = {5, 9, 4};
  CHECK(losses::decoder_input(toks) ==
        std::vector<int>{corpus::BpeVocab::kBosId, 5, 9, 4});
  CHECK(losses::decoder_target(toks) ==
        std::vector<int>{5, 9, 4, corpus::BpeVocab::kEosId});
}

TEST_CASE("loss_ft breakdown is self-consistent") {
  Fixture f;
  model::Model m(f.params);
  ContrastiveConfig cfg;
  Tape t;
  losses::FtBreakdown bd{};
  Var total = losses::loss_ft(t, m, f.batch(), f.vocab, 0.5, 0.1, cfg, false, &bd);
  CHECK(bd.total == doctest::Approx(total.val()(0, 0)).epsilon(1e-12));
  double ce = (bd.ce_st + bd.ce_mt + bd.ce_asr) / 3.0;
  CHECK(bd.total == doctest::Approx(ce + 0.5 * bd.ctr).epsilon(1e-9));
  CHECK(bd.ctr > 0.0);

  // lambda = 0 leaves only the CE terms.
  Tape t0;
  losses::FtBreakdown bd0{};
  Var plain = losses::loss_ft(t0, m, f.batch(), f.vocab, 0.0, 0.1, cfg, false, &bd0);
  CHECK(bd0.ctr == 0.0);
  CHECK(plain.val()(0, 0) ==
        doctest::Approx((bd0.ce_st + bd0.ce_mt + bd0.ce_asr) / 3.0).epsilon(1e-9));
}

TEST_CASE("ce_task drops under teacher forcing of the right target") {
  Fixture f;
  model::Model m(f.params);
  Tape t;
  std::vector<int> y = corpus::encode(f.vocab, f.utts[0].translation);
  Var mem = m.t_emb_pos(t, corpus::encode(f.vocab, f.utts[0].transcript), false);
  Var loss = m.config().vocab_size
                 ? losses::ce_task(t, m, mem, y, 0.1, false)
                 : Var();
  CHECK(std::isfinite(loss.val()(0, 0)));
  // Untrained: close to uniform log V per token.
  CHECK(loss.val()(0, 0) < std::log(double(f.vocab.size())) + 1.0);
  CHECK(loss.val()(0, 0) > 0.0);
}
