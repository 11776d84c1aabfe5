#pragma once

// On-disk dataset model: FVEC feature matrices plus a JSON manifest.
//
// FVEC layout (little-endian):
//   0..3   magic "FVEC"
//   4..5   version (u16) = 1
//   6..7   reserved (u16) = 0
//   8..11  T, number of rows (u32)
//   12..15 D, number of columns (u32)
//   16..   T*D float32 values, row-major

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magmine/common.hpp"

namespace magmine {

inline constexpr std::uint16_t kFvecVersion = 1;
inline constexpr std::size_t kFvecHeaderBytes = 16;
inline constexpr int kDefaultSnippetLen = 16;

struct FeatureMatrix {
  std::string video_id;
  FloatMatrix data;  // T x D

  int num_snippets() const { return static_cast<int>(data.rows()); }
  int dim() const { return static_cast<int>(data.cols()); }
  Matrix as_double() const { return data.cast<double>(); }
};

// Half-open frame interval [start_frame, end_frame).
struct AnnotationSpan {
  std::int64_t start_frame = 0;
  std::int64_t end_frame = 0;

  std::int64_t length() const { return end_frame - start_frame; }
  bool operator==(const AnnotationSpan&) const = default;
};

struct VideoRecord {
  std::string video_id;
  int label = 0;
  std::int64_t num_frames = 0;
  int snippet_len = kDefaultSnippetLen;
  std::vector<AnnotationSpan> spans;
  std::string feature_path;  // relative to the manifest directory
};

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split split);
Split parse_split(const std::string& name);

struct DatasetManifest {
  std::string name;
  int dim = 0;
  int snippet_len = kDefaultSnippetLen;
  std::map<Split, std::vector<VideoRecord>> splits;
  std::filesystem::path base_dir;  // directory holding the manifest; not serialized

  const std::vector<VideoRecord>& split(Split s) const;
  std::filesystem::path feature_file(const VideoRecord& record) const;
};

void write_features(const FeatureMatrix& matrix, const std::filesystem::path& path);
void write_features(const FeatureMatrix& matrix, std::ostream& out);

// `video_id` is attached to the result; the file itself does not store it.
FeatureMatrix read_features(const std::filesystem::path& path, std::string video_id = {});
FeatureMatrix read_features(std::istream& in, std::string video_id = {});

struct FvecHeader {
  std::uint16_t version = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
};
FvecHeader read_fvec_header(const std::filesystem::path& path);

// Number of snippets implied by a frame count under the short-video rule.
int expected_snippets(std::int64_t num_frames, int snippet_len);

void validate_record(const VideoRecord& record);

DatasetManifest manifest_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
nlohmann::json manifest_to_json(const DatasetManifest& manifest);

// Parses and validates the manifest. With check_features, every feature file
// header is opened and checked against dim and the snippet count relation.
DatasetManifest load_manifest(const std::filesystem::path& path, bool check_features = true);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Loads and cross-checks one video's features against its record.
FeatureMatrix load_video_features(const DatasetManifest& manifest, const VideoRecord& record);

std::vector<std::uint8_t> frame_labels_from_spans(const VideoRecord& record);

}  // namespace magmine
