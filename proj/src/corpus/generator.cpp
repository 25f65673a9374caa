#include "corpus/generator.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace waco::corpus {

namespace fs = std::filesystem;

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined state
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_str(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

Lexicon make_lexicon(const CorpusSpec& spec) {
  static const char* consonants = "bdfgklmnprstvz";
  static const char* vowels = "aeiou";
  std::vector<std::string> syllables;
  for (const char* c = consonants; *c; ++c)
    for (const char* v = vowels; *v; ++v)
      syllables.push_back(std::string(1, *c) + *v);

  // Deterministic enumeration of two-syllable words in a seeded shuffle order.
  std::vector<std::string> words;
  for (const auto& a : syllables)
    for (const auto& b : syllables) words.push_back(a + b);
  std::mt19937_64 rng(mix(spec.seed, 0xc0de));
  std::shuffle(words.begin(), words.end(), rng);

  int need = 2 * spec.n_source_words;
  if (static_cast<int>(words.size()) < need)
    throw ConfigError("n_source_words too large for the syllable inventory");
  Lexicon lex;
  lex.source.assign(words.begin(), words.begin() + spec.n_source_words);
  lex.target.assign(words.begin() + spec.n_source_words, words.begin() + need);
  return lex;
}

Eigen::RowVectorXf word_prototype(const CorpusSpec& spec, int word_index) {
  std::mt19937_64 rng(mix(spec.seed, 0x7070ULL + static_cast<std::uint64_t>(word_index)));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Eigen::RowVectorXf proto(spec.feat_dim);
  for (int i = 0; i < spec.feat_dim; ++i) proto(i) = normal(rng);
  return proto;
}

Utterance generate_utterance(const CorpusSpec& spec, const Lexicon& lex,
                             const std::string& split, int index) {
  std::mt19937_64 rng(mix(mix(spec.seed, hash_str(split)), static_cast<std::uint64_t>(index)));
  std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.noise_sigma));

  int n_words = uniform_int(rng, spec.words_per_utt.lo, spec.words_per_utt.hi);
  std::vector<int> word_ids(static_cast<std::size_t>(n_words));
  for (int& w : word_ids) w = uniform_int(rng, 0, spec.n_source_words - 1);

  std::vector<int> durations(static_cast<std::size_t>(n_words));
  std::vector<int> gaps(static_cast<std::size_t>(n_words) + 1);
  for (int& d : durations) d = uniform_int(rng, spec.frames_per_word.lo, spec.frames_per_word.hi);
  for (int& g : gaps) g = uniform_int(rng, spec.silence_frames.lo, spec.silence_frames.hi);

  std::int64_t total = gaps[0];
  for (int i = 0; i < n_words; ++i) total += durations[i] + gaps[i + 1];

  Utterance u;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%06d", split.c_str(), index);
  u.id = buf;
  u.features.resize(total, spec.feat_dim);
  std::int64_t at = 0;
  auto emit_silence = [&](int n) {
    for (int f = 0; f < n; ++f, ++at)
      for (int c = 0; c < spec.feat_dim; ++c) u.features(at, c) = noise(rng);
  };
  emit_silence(gaps[0]);
  for (int i = 0; i < n_words; ++i) {
    Eigen::RowVectorXf proto = word_prototype(spec, word_ids[i]);
    WordInterval iv;
    iv.word = lex.source[static_cast<std::size_t>(word_ids[i])];
    iv.start_frame = at;
    for (int f = 0; f < durations[i]; ++f, ++at)
      for (int c = 0; c < spec.feat_dim; ++c)
        u.features(at, c) = proto(c) + noise(rng);
    iv.end_frame = at;
    u.word_intervals.push_back(std::move(iv));
    emit_silence(gaps[i + 1]);
  }
  u.has_alignment = true;

  for (int w : word_ids) u.transcript.push_back(lex.source[static_cast<std::size_t>(w)]);
  std::vector<std::string> target_words;
  for (int w : word_ids) target_words.push_back(lex.target[static_cast<std::size_t>(w)]);
  if (spec.translation_rule == TranslationRule::kAdjacentSwapDictionary)
    for (std::size_t i = 0; i + 1 < target_words.size(); i += 2)
      std::swap(target_words[i], target_words[i + 1]);
  u.transcript.push_back(".");
  target_words.push_back(".");
  u.translation = std::move(target_words);
  validate_utterance(u);
  return u;
}

void generate_corpus(const CorpusSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "feats", ec);
  fs::create_directories(out_dir / "align", ec);
  if (!fs::is_directory(out_dir / "feats") || !fs::is_directory(out_dir / "align"))
    throw DataError("cannot create corpus directory: " + out_dir.string());

  Lexicon lex = make_lexicon(spec);
  struct Split {
    const char* name;
    int size;
    bool with_translation;
  };
  const Split splits[] = {
      {"train_asr", spec.sizes.train_asr, false},
      {"dev_asr", spec.sizes.dev_asr, false},
      {"train_st", spec.sizes.train_st, true},
      {"dev_st", spec.sizes.dev_st, true},
      {"test", spec.sizes.test, true},
      {"train_mt", spec.sizes.train_mt, true},
      {"dev_mt", spec.sizes.dev_mt, true},
  };
  for (const Split& sp : splits) {
    if (sp.size <= 0) throw ConfigError(std::string("zero-size split: ") + sp.name);
    std::vector<ManifestRow> rows;
    for (int i = 0; i < sp.size; ++i) {
      Utterance u = generate_utterance(spec, lex, sp.name, i);
      std::string feat_rel = "feats/" + u.id + ".feat";
      write_features(out_dir / feat_rel, u.features);
      write_alignment(out_dir / "align" / (u.id + ".align"), u.word_intervals);
      ManifestRow r;
      r.id = u.id;
      r.features = feat_rel;
      r.n_frames = u.n_frames();
      r.transcript = u.transcript;
      if (sp.with_translation) r.translation = u.translation;
      rows.push_back(std::move(r));
    }
    std::sort(rows.begin(), rows.end(),
              [](const ManifestRow& a, const ManifestRow& b) { return a.id < b.id; });
    write_manifest(out_dir / (std::string(sp.name) + ".tsv"), rows);
  }
}

std::vector<ManifestRow> subset_budget(const std::vector<ManifestRow>& rows,
                                       std::int64_t frame_budget,
                                       std::uint64_t seed) {
  std::int64_t total = 0;
  for (const auto& r : rows) total += r.n_frames;
  if (frame_budget <= 0) throw ConfigError("subset_budget: budget must be positive");
  if (frame_budget > total)
    throw DataError("subset_budget: budget " + std::to_string(frame_budget) +
                    " exceeds corpus total of " + std::to_string(total) + " frames");
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix(seed, 0x5b5e7));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<ManifestRow> out;
  std::int64_t cum = 0;
  for (std::size_t i : order) {
    if (cum >= frame_budget) break;
    out.push_back(rows[i]);
    cum += rows[i].n_frames;
  }
  return out;
}

}  // namespace waco::corpus
