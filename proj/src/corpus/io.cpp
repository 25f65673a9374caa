#include "corpus/io.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

namespace waco::corpus {

namespace fs = std::filesystem;

bool is_punctuation_word(const std::string& w) {
  if (w.empty()) return false;
  return std::all_of(w.begin(), w.end(),
                     [](unsigned char c) { return std::ispunct(c); });
}

void validate_utterance(const Utterance& u) {
  std::int64_t prev_end = -1;
  std::vector<std::string> aligned_words;
  for (const auto& iv : u.word_intervals) {
    if (iv.start_frame < 0 || iv.start_frame >= iv.end_frame ||
        iv.end_frame > u.n_frames())
      throw DataError("utterance " + u.id + ": interval [" +
                      std::to_string(iv.start_frame) + ", " +
                      std::to_string(iv.end_frame) + ") violates 0 <= start < end <= " +
                      std::to_string(u.n_frames()));
    if (iv.start_frame < prev_end)
      throw DataError("utterance " + u.id + ": intervals overlap or are unsorted");
    prev_end = iv.end_frame;
    aligned_words.push_back(iv.word);
  }
  if (u.has_alignment) {
    std::vector<std::string> stripped;
    for (const auto& w : u.transcript)
      if (!is_punctuation_word(w)) stripped.push_back(w);
    if (aligned_words != stripped)
      throw DataError("utterance " + u.id +
                      ": aligned words do not match punctuation-stripped transcript");
  }
}

void CorpusSpec::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("corpus spec: ") + name + " must be positive");
  };
  positive(n_source_words, "n_source_words");
  positive(feat_dim, "feat_dim");
  positive(frames_per_word.lo, "frames_per_word.lo");
  positive(words_per_utt.lo, "words_per_utt.lo");
  if (frames_per_word.hi < frames_per_word.lo ||
      silence_frames.hi < silence_frames.lo ||
      words_per_utt.hi < words_per_utt.lo)
    throw ConfigError("corpus spec: range hi below lo");
  if (silence_frames.lo < 0) throw ConfigError("corpus spec: silence_frames negative");
  if (noise_sigma < 0.0) throw ConfigError("corpus spec: noise_sigma must be >= 0");
  for (int n : {sizes.train_asr, sizes.dev_asr, sizes.train_st, sizes.dev_st,
                sizes.test, sizes.train_mt, sizes.dev_mt})
    if (n <= 0) throw ConfigError("corpus spec: every split size must be positive");
}

namespace {

constexpr char kFeatMagic[8] = {'W', 'A', 'C', 'O', 'F', 'E', 'A', 'T'};

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
    throw DataError("truncated header reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_features(const fs::path& path, const FeatMatrix& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os.write(kFeatMagic, 8);
  put_u32(os, static_cast<std::uint32_t>(m.rows()));
  put_u32(os, static_cast<std::uint32_t>(m.cols()));
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(float)) * m.size());
  if (!os) throw DataError("write failed: " + path.string());
}

FeatMatrix read_features(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open feature file: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kFeatMagic, 8) != 0)
    throw DataError("bad magic in feature file: " + path.string());
  std::uint32_t rows = get_u32(is, path.string());
  std::uint32_t cols = get_u32(is, path.string());
  FeatMatrix m(rows, cols);
  if (!is.read(reinterpret_cast<char*>(m.data()),
               static_cast<std::streamsize>(sizeof(float)) * m.size()))
    throw DataError("truncated payload in feature file: " + path.string());
  return m;
}

void write_alignment(const fs::path& path,
                     const std::vector<WordInterval>& intervals) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  for (const auto& iv : intervals)
    os << iv.word << '\t' << iv.start_frame << '\t' << iv.end_frame << '\n';
  if (!os) throw DataError("write failed: " + path.string());
}

std::vector<WordInterval> read_alignment(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open alignment file: " + path.string());
  std::vector<WordInterval> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    WordInterval iv;
    std::string start, end;
    if (!std::getline(ss, iv.word, '\t') || !std::getline(ss, start, '\t') ||
        !std::getline(ss, end, '\t'))
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": malformed alignment line");
    try {
      iv.start_frame = std::stoll(start);
      iv.end_frame = std::stoll(end);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": non-numeric frame index");
    }
    if (!out.empty() && iv.start_frame < out.back().start_frame)
      throw DataError(path.string() + ": intervals not sorted by start_frame");
    out.push_back(std::move(iv));
  }
  return out;
}

std::vector<std::string> split_words(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

static const char* kManifestHeader = "id\tfeatures\tn_frames\ttranscript\ttranslation";

void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << kManifestHeader << '\n';
  for (const auto& r : rows)
    os << r.id << '\t' << r.features << '\t' << r.n_frames << '\t'
       << join_words(r.transcript) << '\t' << join_words(r.translation) << '\n';
  if (!os) throw DataError("write failed: " + path.string());
}

std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open manifest: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty manifest: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw DataError("malformed manifest header in " + path.string());
  std::vector<ManifestRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::string::size_type at = 0;
    while (true) {
      auto tab = line.find('\t', at);
      cols.push_back(line.substr(at, tab == std::string::npos ? tab : tab - at));
      if (tab == std::string::npos) break;
      at = tab + 1;
    }
    if (cols.size() != 5)
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": expected 5 tab-separated columns, got " +
                      std::to_string(cols.size()));
    ManifestRow r;
    r.id = cols[0];
    r.features = cols[1];
    try {
      r.n_frames = std::stoll(cols[2]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": non-numeric n_frames");
    }
    r.transcript = split_words(cols[3]);
    r.translation = split_words(cols[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<Utterance> load_split(const fs::path& manifest_path) {
  auto rows = read_manifest(manifest_path);
  fs::path base = manifest_path.parent_path();
  std::vector<Utterance> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    Utterance u;
    u.id = r.id;
    u.transcript = r.transcript;
    u.translation = r.translation;
    fs::path feat_path = base / r.features;
    if (!fs::exists(feat_path))
      throw DataError("manifest row '" + r.id + "' references missing feature file " +
                      feat_path.string());
    u.features = read_features(feat_path);
    if (u.features.rows() != r.n_frames)
      throw DataError("manifest row '" + r.id + "': n_frames " +
                      std::to_string(r.n_frames) + " does not match feature file (" +
                      std::to_string(u.features.rows()) + ")");
    fs::path align_path = base / "align" / (r.id + ".align");
    if (fs::exists(align_path)) {
      u.word_intervals = read_alignment(align_path);
      u.has_alignment = true;
    }
    validate_utterance(u);
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace waco::corpus
