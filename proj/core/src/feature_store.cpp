#include "magmine/feature_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace magmine {
namespace {

void put_u16(std::ostream& out, std::uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(bytes, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

FvecHeader parse_header(std::istream& in) {
  std::array<unsigned char, kFvecHeaderBytes> raw{};
  in.read(reinterpret_cast<char*>(raw.data()), raw.size());
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw FormatError("FVEC: truncated header");
  }
  if (raw[0] != 'F' || raw[1] != 'V' || raw[2] != 'E' || raw[3] != 'C') {
    throw FormatError("FVEC: bad magic");
  }
  FvecHeader h;
  h.version = static_cast<std::uint16_t>(raw[4] | (raw[5] << 8));
  if (h.version != kFvecVersion) {
    throw FormatError("FVEC: unsupported version " + std::to_string(h.version));
  }
  if (raw[6] != 0 || raw[7] != 0) throw FormatError("FVEC: reserved bytes must be zero");
  h.rows = get_u32(raw.data() + 8);
  h.cols = get_u32(raw.data() + 12);
  if (h.rows == 0 || h.cols == 0) throw FormatError("FVEC: empty shape");
  return h;
}

template <typename T>
T require(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw FormatError("manifest: missing \"" + std::string(key) + "\" in " + where);
  }
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError("manifest: wrong type for \"" + std::string(key) + "\" in " + where);
  }
}

}  // namespace

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw FormatError("unknown split \"" + name + "\"");
}

const std::vector<VideoRecord>& DatasetManifest::split(Split s) const {
  static const std::vector<VideoRecord> kEmpty;
  auto it = splits.find(s);
  return it == splits.end() ? kEmpty : it->second;
}

std::filesystem::path DatasetManifest::feature_file(const VideoRecord& record) const {
  return base_dir / record.feature_path;
}

void write_features(const FeatureMatrix& matrix, std::ostream& out) {
  if (matrix.data.rows() < 1 || matrix.data.cols() < 1) {
    throw ValidationError("FVEC: matrix must be at least 1x1");
  }
  if (!matrix.data.allFinite()) {
    throw ValidationError("FVEC: non-finite value in " + matrix.video_id);
  }
  out.write("FVEC", 4);
  put_u16(out, kFvecVersion);
  put_u16(out, 0);
  put_u32(out, static_cast<std::uint32_t>(matrix.data.rows()));
  put_u32(out, static_cast<std::uint32_t>(matrix.data.cols()));
  const float* values = matrix.data.data();
  const std::size_t n = static_cast<std::size_t>(matrix.data.size());
  std::vector<char> payload(n * 4);
  for (std::size_t i = 0; i < n; ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) payload[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("FVEC: write failed");
}

void write_features(const FeatureMatrix& matrix, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("FVEC: cannot open " + path.string() + " for writing");
  write_features(matrix, out);
}

FeatureMatrix read_features(std::istream& in, std::string video_id) {
  const FvecHeader h = parse_header(in);
  const std::size_t n = static_cast<std::size_t>(h.rows) * h.cols;
  std::vector<unsigned char> payload(n * 4);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(in.gcount()) != payload.size()) {
    throw FormatError("FVEC: truncated payload (declared " + std::to_string(h.rows) + "x" +
                      std::to_string(h.cols) + ")");
  }
  FeatureMatrix m;
  m.video_id = std::move(video_id);
  m.data.resize(h.rows, h.cols);
  float* values = m.data.data();
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = std::bit_cast<float>(get_u32(payload.data() + 4 * i));
  }
  if (!m.data.allFinite()) throw FormatError("FVEC: non-finite value");
  return m;
}

FeatureMatrix read_features(const std::filesystem::path& path, std::string video_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("FVEC: cannot open " + path.string());
  FeatureMatrix m = read_features(in, std::move(video_id));
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("FVEC: trailing bytes in " + path.string());
  }
  return m;
}

FvecHeader read_fvec_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("FVEC: cannot open " + path.string());
  const FvecHeader h = parse_header(in);
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t want = kFvecHeaderBytes + 4ULL * h.rows * h.cols;
  if (size < want) throw FormatError("FVEC: truncated payload in " + path.string());
  if (size > want) throw FormatError("FVEC: trailing bytes in " + path.string());
  return h;
}

int expected_snippets(std::int64_t num_frames, int snippet_len) {
  if (num_frames < snippet_len) return 1;
  return static_cast<int>(num_frames / snippet_len);
}

void validate_record(const VideoRecord& r) {
  const std::string who = "video \"" + r.video_id + "\"";
  if (r.video_id.empty()) throw ValidationError("manifest: empty video_id");
  if (r.label != 0 && r.label != 1) throw ValidationError(who + ": label must be 0 or 1");
  if (r.num_frames < 1) throw ValidationError(who + ": num_frames must be positive");
  if (r.snippet_len < 1) throw ValidationError(who + ": snippet_len must be positive");
  if (r.label == 0 && !r.spans.empty()) {
    throw ValidationError(who + ": normal video must not carry spans");
  }
  std::int64_t prev_end = 0;
  for (const auto& s : r.spans) {
    if (s.start_frame < 0 || s.start_frame >= s.end_frame) {
      throw ValidationError(who + ": span must satisfy 0 <= start < end");
    }
    if (s.start_frame < prev_end) {
      throw ValidationError(who + ": spans overlap or are unsorted");
    }
    if (s.end_frame > r.num_frames) {
      throw ValidationError(who + ": span end beyond num_frames");
    }
    prev_end = s.end_frame;
  }
}

DatasetManifest manifest_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw FormatError("manifest: top level must be an object");
  DatasetManifest m;
  m.base_dir = base_dir;
  m.name = require<std::string>(doc, "name", "manifest");
  m.dim = require<int>(doc, "dim", "manifest");
  m.snippet_len = require<int>(doc, "snippet_len", "manifest");
  if (m.dim < 1) throw ValidationError("manifest: dim must be positive");
  if (m.snippet_len < 1) throw ValidationError("manifest: snippet_len must be positive");
  if (!doc.contains("splits") || !doc.at("splits").is_object()) {
    throw FormatError("manifest: missing \"splits\" object");
  }
  std::set<std::string> seen;
  for (const auto& [key, list] : doc.at("splits").items()) {
    const Split split = parse_split(key);
    if (!list.is_array()) throw FormatError("manifest: split \"" + key + "\" must be an array");
    auto& records = m.splits[split];
    for (const auto& item : list) {
      VideoRecord r;
      r.video_id = require<std::string>(item, "video_id", "split " + key);
      const std::string where = "video \"" + r.video_id + "\"";
      r.label = require<int>(item, "label", where);
      r.num_frames = require<std::int64_t>(item, "num_frames", where);
      r.feature_path = require<std::string>(item, "feature_path", where);
      r.snippet_len = item.contains("snippet_len") ? require<int>(item, "snippet_len", where) : m.snippet_len;
      if (item.contains("spans")) {
        const auto& spans = item.at("spans");
        if (!spans.is_array()) throw FormatError("manifest: spans must be an array in " + where);
        for (const auto& s : spans) {
          if (!s.is_array() || s.size() != 2 || !s[0].is_number_integer() || !s[1].is_number_integer()) {
            throw FormatError("manifest: span must be [start, end] integers in " + where);
          }
          r.spans.push_back({s[0].get<std::int64_t>(), s[1].get<std::int64_t>()});
        }
      }
      validate_record(r);
      if (!seen.insert(r.video_id).second) {
        throw ValidationError("manifest: duplicate video_id \"" + r.video_id + "\"");
      }
      records.push_back(std::move(r));
    }
  }
  const auto& train = m.split(Split::kTrain);
  const bool has_abn = std::any_of(train.begin(), train.end(), [](const auto& r) { return r.label == 1; });
  const bool has_nrm = std::any_of(train.begin(), train.end(), [](const auto& r) { return r.label == 0; });
  if (!has_abn || !has_nrm) {
    throw ValidationError("manifest: train split needs at least one abnormal and one normal video");
  }
  return m;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [split, records] : m.splits) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& r : records) {
      nlohmann::json spans = nlohmann::json::array();
      for (const auto& s : r.spans) spans.push_back({s.start_frame, s.end_frame});
      nlohmann::json item = {{"video_id", r.video_id},   {"label", r.label},
                             {"num_frames", r.num_frames}, {"spans", spans},
                             {"feature_path", r.feature_path}};
      if (r.snippet_len != m.snippet_len) item["snippet_len"] = r.snippet_len;
      list.push_back(std::move(item));
    }
    splits[split_name(split)] = std::move(list);
  }
  return {{"name", m.name}, {"dim", m.dim}, {"snippet_len", m.snippet_len}, {"splits", splits}};
}

DatasetManifest load_manifest(const std::filesystem::path& path, bool check_features) {
  std::ifstream in(path);
  if (!in) throw Error("manifest: cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest: invalid JSON: ") + e.what());
  }
  DatasetManifest m = manifest_from_json(doc, path.parent_path());
  if (check_features) {
    for (const auto& [split, records] : m.splits) {
      for (const auto& r : records) {
        const auto file = m.feature_file(r);
        if (!std::filesystem::exists(file)) {
          throw ValidationError("manifest: feature file missing for \"" + r.video_id + "\": " + file.string());
        }
        const FvecHeader h = read_fvec_header(file);
        if (static_cast<int>(h.cols) != m.dim) {
          throw ValidationError("manifest: dim mismatch for \"" + r.video_id + "\"");
        }
        if (static_cast<int>(h.rows) != expected_snippets(r.num_frames, r.snippet_len)) {
          throw ValidationError("manifest: snippet count of \"" + r.video_id +
                                "\" inconsistent with num_frames");
        }
      }
    }
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("manifest: cannot write " + path.string());
  out << manifest_to_json(manifest).dump(2) << '\n';
}

FeatureMatrix load_video_features(const DatasetManifest& manifest, const VideoRecord& record) {
  FeatureMatrix m = read_features(manifest.feature_file(record), record.video_id);
  if (m.dim() != manifest.dim) {
    throw ValidationError("features of \"" + record.video_id + "\" have dim " +
                          std::to_string(m.dim()) + ", manifest says " + std::to_string(manifest.dim));
  }
  if (m.num_snippets() != expected_snippets(record.num_frames, record.snippet_len)) {
    throw ValidationError("features of \"" + record.video_id + "\" have a snippet count inconsistent with num_frames");
  }
  return m;
}

std::vector<std::uint8_t> frame_labels_from_spans(const VideoRecord& record) {
  if (record.num_frames < 1) throw ValidationError("num_frames must be positive");
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(record.num_frames), 0);
  for (const auto& s : record.spans) {
    if (s.end_frame > record.num_frames) {
      throw ValidationError("span end beyond num_frames in \"" + record.video_id + "\"");
    }
    if (s.start_frame < 0 || s.start_frame >= s.end_frame) {
      throw ValidationError("invalid span in \"" + record.video_id + "\"");
    }
    std::fill(labels.begin() + s.start_frame, labels.begin() + s.end_frame, std::uint8_t{1});
  }
  return labels;
}

}  // namespace magmine
