#include "magmine/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

namespace magmine {

StrictObject::StrictObject(const nlohmann::json& j, std::string where) : obj_(j), where_(std::move(where)) {
  if (!obj_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
}

const nlohmann::json* StrictObject::lookup(const char* key) {
  auto it = obj_.find(key);
  if (it == obj_.end()) return nullptr;
  seen_.emplace_back(key);
  return &*it;
}

void StrictObject::read(const char* key, int& out) {
  if (const auto* v = lookup(key)) {
    if (!v->is_number_integer()) throw ConfigError(where_ + "." + key + ": expected an integer");
    const auto x = v->get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
      throw ConfigError(where_ + "." + key + ": integer out of range");
    }
    out = static_cast<int>(x);
  }
}

void StrictObject::read(const char* key, double& out) {
  if (const auto* v = lookup(key)) {
    if (!v->is_number()) throw ConfigError(where_ + "." + key + ": expected a number");
    out = v->get<double>();
  }
}

void StrictObject::read(const char* key, bool& out) {
  if (const auto* v = lookup(key)) {
    if (!v->is_boolean()) throw ConfigError(where_ + "." + key + ": expected a boolean");
    out = v->get<bool>();
  }
}

void StrictObject::read(const char* key, std::string& out) {
  if (const auto* v = lookup(key)) {
    if (!v->is_string()) throw ConfigError(where_ + "." + key + ": expected a string");
    out = v->get<std::string>();
  }
}

void StrictObject::read(const char* key, std::uint64_t& out) {
  if (const auto* v = lookup(key)) {
    if (v->is_number_unsigned()) {
      out = v->get<std::uint64_t>();
    } else if (v->is_number_integer() && v->get<std::int64_t>() >= 0) {
      out = static_cast<std::uint64_t>(v->get<std::int64_t>());
    } else {
      throw ConfigError(where_ + "." + key + ": expected a non-negative integer");
    }
  }
}

const nlohmann::json& StrictObject::raw(const char* key) {
  const auto* v = lookup(key);
  if (!v) throw ConfigError(where_ + "." + key + ": missing");
  return *v;
}

void StrictObject::finish() const {
  for (auto it = obj_.begin(); it != obj_.end(); ++it) {
    if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
      throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }
  }
}

nlohmann::json mil_config_to_json(const MilConfig& c) {
  return {{"k", c.k},
          {"margin", c.margin},
          {"lambda_smooth", c.lambda_smooth},
          {"lambda_sparse", c.lambda_sparse},
          {"num_segments", c.num_segments},
          {"batch_pairs", c.batch_pairs},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"use_neck", c.use_neck},
          {"hidden1", c.hidden1},
          {"hidden2", c.hidden2},
          {"dropout_rate", c.dropout_rate},
          {"zero_init", c.zero_init},
          {"seed", c.seed}};
}

MilConfig mil_config_from_json(const nlohmann::json& j, MilConfig c) {
  StrictObject obj(j, "mil");
  obj.read("k", c.k);
  obj.read("margin", c.margin);
  obj.read("lambda_smooth", c.lambda_smooth);
  obj.read("lambda_sparse", c.lambda_sparse);
  obj.read("num_segments", c.num_segments);
  obj.read("batch_pairs", c.batch_pairs);
  obj.read("epochs", c.epochs);
  obj.read("lr", c.lr);
  obj.read("weight_decay", c.weight_decay);
  obj.read("use_neck", c.use_neck);
  obj.read("hidden1", c.hidden1);
  obj.read("hidden2", c.hidden2);
  obj.read("dropout_rate", c.dropout_rate);
  obj.read("zero_init", c.zero_init);
  obj.read("seed", c.seed);
  obj.finish();
  return c;
}

nlohmann::json sup_config_to_json(const SupConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"selection", to_string(c.selection)},
          {"use_neck", c.use_neck},
          {"multiset_sets", c.multiset_sets},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"batch_size", c.batch_size},
          {"num_segments", c.num_segments},
          {"single_snippet_segments", c.single_snippet_segments},
          {"weight_decay", c.weight_decay},
          {"hidden1", c.hidden1},
          {"hidden2", c.hidden2},
          {"dropout_rate", c.dropout_rate},
          {"seed", c.seed}};
}

SupConfig sup_config_from_json(const nlohmann::json& j, SupConfig c) {
  StrictObject obj(j, "sup");
  std::string mode = to_string(c.mode);
  std::string selection = to_string(c.selection);
  obj.read("mode", mode);
  obj.read("selection", selection);
  try {
    c.mode = parse_sup_mode(mode);
    c.selection = parse_selection(selection);
  } catch (const Error& e) {
    throw ConfigError(std::string("sup: ") + e.what());
  }
  obj.read("use_neck", c.use_neck);
  obj.read("multiset_sets", c.multiset_sets);
  obj.read("epochs", c.epochs);
  obj.read("lr", c.lr);
  obj.read("plateau_factor", c.plateau_factor);
  obj.read("plateau_patience", c.plateau_patience);
  obj.read("batch_size", c.batch_size);
  obj.read("num_segments", c.num_segments);
  obj.read("single_snippet_segments", c.single_snippet_segments);
  obj.read("weight_decay", c.weight_decay);
  obj.read("hidden1", c.hidden1);
  obj.read("hidden2", c.hidden2);
  obj.read("dropout_rate", c.dropout_rate);
  obj.read("seed", c.seed);
  obj.finish();
  return c;
}

nlohmann::json mining_config_to_json(const MiningConfig& c) {
  return {{"pos_threshold", c.pos_threshold}, {"neg_threshold", c.neg_threshold},
          {"balance_ratio", c.balance_ratio}, {"decay_step", c.decay_step},
          {"decay_floor", c.decay_floor},     {"seed", c.seed}};
}

MiningConfig mining_config_from_json(const nlohmann::json& j, MiningConfig c) {
  StrictObject obj(j, "mining");
  obj.read("pos_threshold", c.pos_threshold);
  obj.read("neg_threshold", c.neg_threshold);
  obj.read("balance_ratio", c.balance_ratio);
  obj.read("decay_step", c.decay_step);
  obj.read("decay_floor", c.decay_floor);
  obj.read("seed", c.seed);
  obj.finish();
  return c;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return {{"seed", cfg.seed},
          {"synth", synth_config_to_json(cfg.synth)},
          {"mil", mil_config_to_json(cfg.mil)},
          {"sup", sup_config_to_json(cfg.sup)},
          {"mining", mining_config_to_json(cfg.mining)},
          {"experiment", {{"iters", cfg.experiment.iters}, {"split", cfg.experiment.split}}}};
}

namespace {

void apply_override(nlohmann::json& doc, const std::string& path, const std::string& text) {
  if (path.empty()) throw ConfigError("empty override key");
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed override key '" + path + "'");
    if (!node->is_object()) throw ConfigError("override '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

const nlohmann::json& section(const nlohmann::json& doc, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  auto it = doc.find(key);
  return it == doc.end() ? empty : *it;
}

}  // namespace

RunConfig resolve_run_config(const nlohmann::json& input,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
  nlohmann::json doc = input.is_null() ? nlohmann::json::object() : input;
  for (const auto& [key, value] : overrides) apply_override(doc, key, value);

  RunConfig cfg;
  StrictObject top(doc, "config");
  top.read("seed", cfg.seed);
  const auto& synth = section(doc, "synth");
  const auto& mil = section(doc, "mil");
  const auto& sup = section(doc, "sup");
  const auto& mining = section(doc, "mining");
  const auto& exp = section(doc, "experiment");
  for (const char* key : {"synth", "mil", "sup", "mining", "experiment"}) {
    if (top.has(key)) top.raw(key);
  }
  top.finish();

  cfg.synth.seed = derive_seed(cfg.seed, "synth");
  cfg.mil.seed = derive_seed(cfg.seed, "mil");
  cfg.sup.seed = derive_seed(cfg.seed, "sup");
  cfg.mining.seed = derive_seed(cfg.seed, "mining");
  cfg.synth = synth_config_from_json(synth, cfg.synth);
  cfg.mil = mil_config_from_json(mil, cfg.mil);
  cfg.sup = sup_config_from_json(sup, cfg.sup);
  cfg.mining = mining_config_from_json(mining, cfg.mining);

  StrictObject e(exp, "experiment");
  e.read("iters", cfg.experiment.iters);
  e.read("split", cfg.experiment.split);
  e.finish();
  if (cfg.experiment.iters < 1) throw ConfigError("experiment.iters must be >= 1");
  try {
    parse_split(cfg.experiment.split);
  } catch (const Error& err) {
    throw ConfigError(std::string("experiment.split: ") + err.what());
  }

  cfg.synth.validate();
  cfg.mil.validate();
  cfg.sup.validate();
  cfg.mining.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + ": invalid JSON: " + e.what());
  }
  return resolve_run_config(doc, overrides);
}

}  // namespace magmine
