#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "corpus/bpe.hpp"

using namespace waco;
using corpus::BpeVocab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("waco_bpe_" + std::to_string(std::rand()) + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("specials occupy the first four ids") {
  auto v = corpus::train_bpe({{"ab"}}, 32);
  CHECK(v.tokens[BpeVocab::kPadId] == "<pad>");
  CHECK(v.tokens[BpeVocab::kBosId] == "<s>");
  CHECK(v.tokens[BpeVocab::kEosId] == "</s>");
  CHECK(v.tokens[BpeVocab::kBlankId] == "<blank>");
}

TEST_CASE("hand-simulated merges on a one-word corpus") {
  // "aaaa" splits into _a a a a; the most frequent pair is (a, a) with count 2
  // against (_a, a) with count 1, so "aa" merges first and "_aaaa" is
  // eventually a single token.
  auto v = corpus::train_bpe({{"aaaa"}, {"aaaa"}, {"aaaa"}}, 64);
  REQUIRE_FALSE(v.merges.empty());
  CHECK(v.merges[0] == std::pair<std::string, std::string>{"a", "a"});
  CHECK(v.id_of("_aaaa") >= 4);
  auto ids = corpus::encode(v, {"aaaa"});
  REQUIRE(ids.size() == 1);
  CHECK(v.token(ids[0]) == "_aaaa");
}

TEST_CASE("tie break is lexicographic on the merged string") {
  // Every pair occurs once; (_x, y) -> "_xy" sorts before (a, b) -> "ab"
  // because '_' precedes letters in byte order.
  auto v = corpus::train_bpe({{"xy", "ab"}}, 16);
  REQUIRE_FALSE(v.merges.empty());
  std::string first = v.merges[0].first + v.merges[0].second;
  for (const auto& [l, r] : v.merges) CHECK(first <= l + r);
}

TEST_CASE("encode and decode round trip") {
  std::vector<std::vector<std::string>> corpus_text = {
      {"hello", "world", "."}, {"hello", "again", "."}, {"worldly", "word", "."}};
  auto v = corpus::train_bpe(corpus_text, 64);
  for (const auto& sent : corpus_text) {
    auto ids = corpus::encode(v, sent);
    for (int id : ids) {
      CHECK(id >= 4);
      CHECK(id != BpeVocab::kBlankId);
    }
    CHECK(corpus::decode(v, ids) == sent);
  }
}

TEST_CASE("unknown character is a data error") {
  auto v = corpus::train_bpe({{"abc"}}, 32);
  CHECK_THROWS_AS(corpus::encode(v, {"abz"}), DataError);
}

TEST_CASE("group_words recovers word boundaries") {
  auto v = corpus::train_bpe({{"ab", "cd", "."}, {"abcd", "."}}, 20);
  auto ids = corpus::encode(v, {"ab", "cd", "."});
  auto groups = corpus::group_words(v, ids);
  REQUIRE(groups.size() == 3);
  CHECK(groups.front().lo == 1);  // 1-based
  CHECK(groups.back().hi == static_cast<int>(ids.size()));
  // Ranges are contiguous and each starts at a boundary-marked token.
  for (std::size_t w = 0; w < groups.size(); ++w) {
    if (w) CHECK(groups[w].lo == groups[w - 1].hi + 1);
    CHECK(v.token(ids[groups[w].lo - 1])[0] == corpus::kBoundaryMarker);
  }
  // Decoding each group gives back the word.
  std::vector<int> first(ids.begin() + groups[0].lo - 1, ids.begin() + groups[0].hi);
  CHECK(corpus::decode(v, first) == std::vector<std::string>{"ab"});
  // A sequence not starting at a word boundary is an error.
  std::vector<int> chopped(ids.begin() + groups[0].hi, ids.end());
  if (!chopped.empty() && v.token(chopped[0])[0] != corpus::kBoundaryMarker)
    CHECK_THROWS_AS(corpus::group_words(v, chopped), DataError);
  std::vector<int> mid = {v.id_of("b")};
  if (v.token(mid[0])[0] != corpus::kBoundaryMarker)
    CHECK_THROWS_AS(corpus::group_words(v, mid), DataError);
}

TEST_CASE("vocab size cap limits merges") {
  auto small = corpus::train_bpe({{"abcdef", "fedcba"}}, 12);
  CHECK(small.size() <= 12);
  auto big = corpus::train_bpe({{"abcdef", "fedcba"}}, 200);
  CHECK(big.size() > small.size());
}

TEST_CASE("save and load round trip with merge separator") {
  TempDir d;
  auto v = corpus::train_bpe({{"spam", "eggs", "."}, {"spams", "."}}, 48);
  fs::path p = d.path / "bpe.model";
  corpus::save_bpe(v, p);
  std::ifstream is(p);
  std::string content((std::istreambuf_iterator<char>(is)), {});
  CHECK(content.find("#MERGES") != std::string::npos);
  auto back = corpus::load_bpe(p);
  CHECK(back.tokens == v.tokens);
  CHECK(back.merges == v.merges);
  CHECK(corpus::encode(back, {"spam", "eggs", "."}) ==
        corpus::encode(v, {"spam", "eggs", "."}));
  CHECK_THROWS_AS(corpus::load_bpe(d.path / "missing.model"), DataError);
}

TEST_CASE("training is deterministic") {
  std::vector<std::vector<std::string>> text = {
      {"abab", "baba", "."}, {"abba", "."}, {"bbbb", "aaaa"}};
  auto a = corpus::train_bpe(text, 40);
  auto b = corpus::train_bpe(text, 40);
  CHECK(a.tokens == b.tokens);
  CHECK(a.merges == b.merges);
}
