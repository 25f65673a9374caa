#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "alignment/spans.hpp"
#include "corpus/generator.hpp"
#include "model/model.hpp"

using namespace waco;

TEST_CASE("pinned interval rescaling example") {
  // (l, r, n_frames, enc_len) = (160, 480, 1600, 100):
  // floor(160/1600*100)+1 = 11, ceil(480/1600*100) = 30.
  auto [lo, hi] = alignment::rescale_interval(160, 480, 1600, 100);
  CHECK(lo == 11);
  CHECK(hi == 30);
}

TEST_CASE("rescaled ranges are clamped and never empty") {
  for (int l = 1; l <= 16; ++l)
    for (int r = l; r <= 16; ++r) {
      auto [lo, hi] = alignment::rescale_interval(l, r, 16, 4);
      CHECK(lo >= 1);
      CHECK(hi <= 4);
      CHECK(lo <= hi);  // one-frame-wide span forced when needed
    }
  // Full range maps to the full encoder output.
  auto [lo, hi] = alignment::rescale_interval(1, 1600, 1600, 100);
  CHECK(lo == 1);
  CHECK(hi == 100);
}

TEST_CASE("match_words pairs intervals with grouped tokens") {
  std::vector<corpus::WordInterval> iv = {{"practice", 0, 10}, {"makes", 12, 20}};
  std::vector<std::string> words = {"practice", "makes", "."};
  std::vector<corpus::TokenRange> groups = {{1, 4}, {5, 5}, {6, 6}};
  auto spans = alignment::match_words(iv, words, groups);
  REQUIRE(spans.has_value());
  REQUIRE(spans->size() == 2);  // punctuation-only word dropped
  CHECK((*spans)[0].word == "practice");
  CHECK((*spans)[0].token_range.lo == 1);
  CHECK((*spans)[0].token_range.hi == 4);
  CHECK((*spans)[0].raw_lo == 1);  // converted to 1-based inclusive
  CHECK((*spans)[0].raw_hi == 10);
  CHECK((*spans)[1].token_range.lo == 5);
  CHECK((*spans)[1].raw_lo == 13);
  CHECK((*spans)[1].raw_hi == 20);
}

TEST_CASE("match_words skips on count or string mismatch") {
  std::vector<corpus::WordInterval> iv = {{"alpha", 0, 4}};
  // Count mismatch: two content words vs one interval.
  CHECK_FALSE(alignment::match_words(iv, {"alpha", "beta"}, {{1, 1}, {2, 2}})
                  .has_value());
  // String mismatch.
  CHECK_FALSE(alignment::match_words(iv, {"gamma"}, {{1, 1}}).has_value());
  // Case-insensitive match succeeds.
  auto spans = alignment::match_words({{"Practice", 0, 4}}, {"practice"}, {{1, 2}});
  REQUIRE(spans.has_value());
  CHECK(spans->size() == 1);
}

TEST_CASE("build_spans on a generated utterance") {
  corpus::CorpusSpec spec;
  spec.n_source_words = 10;
  spec.feat_dim = 4;
  spec.frames_per_word = {6, 10};
  spec.silence_frames = {0, 2};
  spec.words_per_utt = {4, 6};
  spec.seed = 5;
  auto lex = corpus::make_lexicon(spec);
  std::vector<std::vector<std::string>> text;
  std::vector<corpus::Utterance> utts;
  for (int i = 0; i < 12; ++i) {
    utts.push_back(corpus::generate_utterance(spec, lex, "t", i));
    text.push_back(utts.back().transcript);
  }
  auto vocab = corpus::train_bpe(text, 96);

  model::ModelConfig mc;  // default (5,2)+(5,2) downsampling, total stride 4
  int checked = 0;
  for (const auto& u : utts) {
    int n = static_cast<int>(u.n_frames());
    int enc_len = mc.enc_len(n);
    auto spans = alignment::build_spans(u, vocab, enc_len);
    REQUIRE(spans.has_value());
    CHECK(spans->size() == u.word_intervals.size());
    for (std::size_t w = 0; w < spans->size(); ++w) {
      const auto& s = (*spans)[w];
      CHECK(s.word == u.word_intervals[w].word);
      CHECK(s.enc_lo >= 1);
      CHECK(s.enc_hi <= enc_len);
      CHECK(s.enc_lo <= s.enc_hi);
      // Mapped back through the stride, the encoder span overlaps the
      // generating raw interval.
      int back_lo = (s.enc_lo - 1) * mc.total_stride();
      int back_hi = s.enc_hi * mc.total_stride();
      CHECK(back_lo < static_cast<int>(u.word_intervals[w].end_frame));
      CHECK(back_hi > static_cast<int>(u.word_intervals[w].start_frame));
      ++checked;
    }
  }
  CHECK(checked > 40);
}

TEST_CASE("build_spans skips an utterance without usable alignment") {
  corpus::Utterance u;
  u.id = "x";
  u.features = corpus::FeatMatrix::Zero(8, 2);
  u.transcript = {"ab"};
  u.word_intervals = {{"cd", 0, 8}};  // does not match the transcript
  u.has_alignment = true;
  auto vocab = corpus::train_bpe({{"ab", "cd"}}, 32);
  CHECK_FALSE(alignment::build_spans(u, vocab, 2).has_value());
}
