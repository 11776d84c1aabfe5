#include "magmine/checkpoint.hpp"

#include <fstream>

#include "magmine/feature_store.hpp"

namespace magmine {

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {{"dim", cfg.dim},
          {"use_neck", cfg.use_neck},
          {"hidden1", cfg.hidden1},
          {"hidden2", cfg.hidden2},
          {"dropout_rate", cfg.dropout_rate}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.dim = j.at("dim").get<int>();
    cfg.use_neck = j.at("use_neck").get<bool>();
    cfg.hidden1 = j.at("hidden1").get<int>();
    cfg.hidden2 = j.at("hidden2").get<int>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad model config: ") + e.what());
  }
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, const ScorerModel& model, const nlohmann::json& meta) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : model.layout().blocks()) {
    blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  }
  const nlohmann::json header = {{"format", "magmine-checkpoint"},
                                 {"version", 1},
                                 {"model", model_config_to_json(model.config())},
                                 {"blocks", blocks},
                                 {"meta", meta}};
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot write " + path.string());
  out.write("MMCK", 4);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xff));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (int p = 0; p < kNumParamBlocks; ++p) {
    const auto view = model.block(static_cast<Param>(p));
    if (view.size() == 0) continue;
    FeatureMatrix blob;
    blob.data = view.cast<float>();
    write_features(blob, out);
  }
  if (!out) throw Error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string(magic, 4) != "MMCK") throw FormatError("checkpoint: bad magic");
  unsigned char len_bytes[4];
  in.read(reinterpret_cast<char*>(len_bytes), 4);
  if (in.gcount() != 4) throw FormatError("checkpoint: truncated header");
  const std::uint32_t len = len_bytes[0] | (len_bytes[1] << 8) | (len_bytes[2] << 16) |
                            (static_cast<std::uint32_t>(len_bytes[3]) << 24);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (in.gcount() != static_cast<std::streamsize>(len)) throw FormatError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("format", "") != "magmine-checkpoint" || header.value("version", 0) != 1) {
    throw FormatError("checkpoint: unsupported format");
  }
  Checkpoint ckpt{ScorerModel(model_config_from_json(header.at("model"))), header.value("meta", nlohmann::json::object())};
  for (int p = 0; p < kNumParamBlocks; ++p) {
    auto view = ckpt.model.block(static_cast<Param>(p));
    if (view.size() == 0) continue;
    const FeatureMatrix blob = read_features(in);
    if (blob.data.rows() != view.rows() || blob.data.cols() != view.cols()) {
      throw FormatError(std::string("checkpoint: shape mismatch for block ") +
                        ckpt.model.layout().block(static_cast<Param>(p)).name);
    }
    view = blob.data.cast<double>();
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes after last block");
  return ckpt;
}

ScorerModel quantize_to_float(const ScorerModel& model) {
  ScorerModel out = model;
  for (auto& v : out.params()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

}  // namespace magmine
