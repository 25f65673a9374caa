// On-disk corpus formats: feature blobs, alignment files, TSV manifests.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "corpus/types.hpp"

namespace waco::corpus {

// Feature file: magic "WACOFEAT", u32 n_frames, u32 feat_dim (little endian),
// then row-major f32 payload.
void write_features(const std::filesystem::path& path, const FeatMatrix& m);
FeatMatrix read_features(const std::filesystem::path& path);

// Alignment file: one `word<TAB>start<TAB>end` line per word, sorted by start.
void write_alignment(const std::filesystem::path& path,
                     const std::vector<WordInterval>& intervals);
std::vector<WordInterval> read_alignment(const std::filesystem::path& path);

// Manifest: UTF-8 TSV with header id/features/n_frames/transcript/translation.
struct ManifestRow {
  std::string id;
  std::string features;  // path relative to the manifest's directory
  std::int64_t n_frames = 0;
  std::vector<std::string> transcript;
  std::vector<std::string> translation;
};

void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

// Loads a manifest plus its feature files and, when present next to the
// features under <corpus>/align/<id>.align, the word alignments.
std::vector<Utterance> load_split(const std::filesystem::path& manifest_path);

std::vector<std::string> split_words(const std::string& line);
std::string join_words(const std::vector<std::string>& words);

}  // namespace waco::corpus
