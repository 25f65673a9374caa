#include "corpus/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

namespace waco::corpus {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"<pad>", "<s>", "</s>",
                                                    "<blank>"};
  return specials;
}

// Initial symbolization of one word: marker-prefixed first character,
// then bare characters.
std::vector<std::string> symbolize(const std::string& word) {
  std::vector<std::string> syms;
  for (std::size_t i = 0; i < word.size(); ++i) {
    std::string s(1, word[i]);
    if (i == 0) s = std::string(1, kBoundaryMarker) + s;
    syms.push_back(std::move(s));
  }
  return syms;
}

void apply_merge(std::vector<std::string>& syms,
                 const std::pair<std::string, std::string>& rule) {
  for (std::size_t i = 0; i + 1 < syms.size();) {
    if (syms[i] == rule.first && syms[i + 1] == rule.second) {
      syms[i] += syms[i + 1];
      syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(i) + 1);
    } else {
      ++i;
    }
  }
}

}  // namespace

int BpeVocab::id_of(const std::string& tok) const {
  auto it = token_to_id.find(tok);
  if (it == token_to_id.end())
    throw DataError("token not in vocabulary: '" + tok + "'");
  return it->second;
}

const std::string& BpeVocab::token(int id) const {
  if (id < 0 || id >= size())
    throw DataError("token id out of range: " + std::to_string(id));
  return tokens[static_cast<std::size_t>(id)];
}

void BpeVocab::rebuild_index() {
  token_to_id.clear();
  for (int i = 0; i < size(); ++i) token_to_id[tokens[static_cast<std::size_t>(i)]] = i;
  if (token_to_id.size() != tokens.size())
    throw DataError("duplicate token in vocabulary");
}

BpeVocab train_bpe(const std::vector<std::vector<std::string>>& sentences,
                   int vocab_size) {
  // Word frequency table; merges operate on unique words only.
  std::map<std::string, std::int64_t> word_freq;
  for (const auto& sent : sentences)
    for (const auto& w : sent)
      if (!w.empty()) ++word_freq[w];

  std::vector<std::vector<std::string>> word_syms;
  std::vector<std::int64_t> freqs;
  std::set<std::string> alphabet;
  for (const auto& [w, f] : word_freq) {
    auto syms = symbolize(w);
    for (const auto& s : syms) alphabet.insert(s);
    word_syms.push_back(std::move(syms));
    freqs.push_back(f);
  }

  BpeVocab vocab;
  vocab.tokens = special_tokens();
  for (const auto& s : alphabet) vocab.tokens.push_back(s);
  int base = vocab.size();
  if (vocab_size < base)
    throw ConfigError("bpe vocab_size " + std::to_string(vocab_size) +
                      " below alphabet plus specials (" + std::to_string(base) + ")");

  while (vocab.size() < vocab_size) {
    // Count adjacent pairs, weighted by word frequency.
    std::map<std::pair<std::string, std::string>, std::int64_t> pair_freq;
    for (std::size_t w = 0; w < word_syms.size(); ++w) {
      const auto& syms = word_syms[w];
      for (std::size_t i = 0; i + 1 < syms.size(); ++i)
        pair_freq[{syms[i], syms[i + 1]}] += freqs[w];
    }
    if (pair_freq.empty()) break;
    // Best pair: highest frequency, ties by lexicographic merged string.
    std::pair<std::string, std::string> best;
    std::int64_t best_freq = -1;
    std::string best_merged;
    for (const auto& [pr, f] : pair_freq) {
      std::string merged = pr.first + pr.second;
      if (f > best_freq || (f == best_freq && merged < best_merged)) {
        best = pr;
        best_freq = f;
        best_merged = merged;
      }
    }
    for (auto& syms : word_syms) apply_merge(syms, best);
    vocab.merges.push_back(best);
    vocab.tokens.push_back(best_merged);
  }
  vocab.rebuild_index();
  return vocab;
}

std::vector<int> encode(const BpeVocab& vocab,
                        const std::vector<std::string>& words) {
  std::vector<int> ids;
  for (const auto& w : words) {
    if (w.empty()) continue;
    auto syms = symbolize(w);
    for (const auto& s : syms)
      if (!vocab.token_to_id.count(s))
        throw DataError("cannot encode '" + w + "': character '" + s +
                        "' not in vocabulary");
    for (const auto& rule : vocab.merges) apply_merge(syms, rule);
    for (const auto& s : syms) ids.push_back(vocab.id_of(s));
  }
  return ids;
}

std::vector<std::string> decode(const BpeVocab& vocab,
                                const std::vector<int>& ids) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == BpeVocab::kPadId || id == BpeVocab::kBosId ||
        id == BpeVocab::kEosId || id == BpeVocab::kBlankId)
      continue;
    const std::string& tok = vocab.token(id);
    if (!tok.empty() && tok[0] == kBoundaryMarker) {
      words.push_back(tok.substr(1));
    } else {
      if (words.empty())
        throw DataError("decode: sequence does not start at a word boundary");
      words.back() += tok;
    }
  }
  return words;
}

std::vector<TokenRange> group_words(const BpeVocab& vocab,
                                    const std::vector<int>& tokens) {
  std::vector<TokenRange> ranges;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = vocab.token(tokens[i]);
    bool starts_word = !tok.empty() && tok[0] == kBoundaryMarker;
    if (i == 0 && !starts_word)
      throw DataError("group_words: first token lacks the boundary marker");
    if (starts_word) {
      ranges.push_back({static_cast<int>(i) + 1, static_cast<int>(i) + 1});
    } else {
      ranges.back().hi = static_cast<int>(i) + 1;
    }
  }
  return ranges;
}

void save_bpe(const BpeVocab& vocab, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  for (const auto& t : vocab.tokens) os << t << '\n';
  os << "#MERGES\n";
  for (const auto& [a, b] : vocab.merges) os << a << '\t' << b << '\n';
  if (!os) throw DataError("write failed: " + path.string());
}

BpeVocab load_bpe(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open bpe model: " + path.string());
  BpeVocab vocab;
  std::string line;
  bool in_merges = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "#MERGES") {
      in_merges = true;
      continue;
    }
    if (line.empty()) continue;
    if (!in_merges) {
      vocab.tokens.push_back(line);
    } else {
      auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw DataError("malformed merge rule in " + path.string());
      vocab.merges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
  }
  if (!in_merges) throw DataError("missing #MERGES section in " + path.string());
  if (vocab.size() < 4 || vocab.tokens[0] != "<pad>")
    throw DataError("malformed vocabulary section in " + path.string());
  vocab.rebuild_index();
  return vocab;
}

}  // namespace waco::corpus
