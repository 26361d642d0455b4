#include "surfreg/config.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "surfreg/error.hpp"

namespace SURFREG_NAMESPACE {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool has_prefix(const std::string& key, const char* prefix) {
  return key.rfind(prefix, 0) == 0;
}

}  // namespace

KeyValues parse_key_values(std::istream& in, const std::string& name) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = name + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (!kv.emplace(key, trim(t.substr(eq + 1))).second) {
      throw ConfigError(where + "duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open configuration file");
  return parse_key_values(in, path);
}

void write_key_values(std::ostream& out, const KeyValues& kv) {
  for (const auto& [key, value] : kv) out << key << " = " << value << '\n';
}

void apply_override(KeyValues& kv, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
  kv[key] = trim(assignment.substr(eq + 1));
}

RunConfig RunConfig::from_key_values(const KeyValues& kv) {
  RunConfig cfg;
  for (const auto& [key, value] : kv) {
    if (has_prefix(key, "model.") || has_prefix(key, "train.") || has_prefix(key, "refine.") ||
        has_prefix(key, "synth.")) {
      continue;
    }
    try {
      if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "paths.data_dir") cfg.data_dir = value;
      else if (key == "paths.output_dir") cfg.output_dir = value;
      else throw ConfigError("unknown configuration key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("invalid value '" + value + "' for " + key);
    }
  }
  KeyValues seeded = kv;
  if (kv.count("seed")) {
    for (const char* k : {"model.init_seed", "train.seed", "synth.seed"}) {
      seeded.emplace(k, kv.at("seed"));
    }
  }
  cfg.model.apply(seeded);
  cfg.train.apply(seeded);
  cfg.refine.apply(seeded);
  cfg.synth.apply(seeded);
  cfg.model.validate();
  cfg.train.validate();
  cfg.refine.validate();
  cfg.synth.validate();
  return cfg;
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv = model.to_key_values();
  kv.merge(train.to_key_values());
  kv.merge(refine.to_key_values());
  kv.merge(synth.to_key_values());
  kv["seed"] = std::to_string(seed);
  kv["paths.data_dir"] = data_dir;
  kv["paths.output_dir"] = output_dir;
  return kv;
}

RunConfig load_run_config(const std::string& path) {
  return RunConfig::from_key_values(load_key_values(path));
}

}  // namespace SURFREG_NAMESPACE
