#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "surfreg/model.hpp"
#include "surfreg/refine.hpp"
#include "surfreg/synth.hpp"
#include "surfreg/training.hpp"

namespace SURFREG_NAMESPACE {

/// "key = value" lines; "#" starts a comment line. Throws ConfigError naming
/// the line for malformed or duplicate keys.
KeyValues parse_key_values(std::istream& in, const std::string& name = "<stream>");
KeyValues load_key_values(const std::string& path);
void write_key_values(std::ostream& out, const KeyValues& kv);

/// Applies one "key=value" override.
void apply_override(KeyValues& kv, const std::string& assignment);

/// Everything a run needs: the sections of the model, training, refinement
/// and synthetic data, plus paths and a seed.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  RefineConfig refine;
  SynthFamilyConfig synth;
  /// Folder of training clouds; empty means a synthetic family from synth.*.
  std::string data_dir;
  /// Where train writes the final checkpoint and metrics log.
  std::string output_dir = ".";
  /// Fallback for model.init_seed, train.seed and synth.seed when unset.
  std::uint64_t seed = 0;

  /// Unknown keys throw ConfigError.
  static RunConfig from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
};

RunConfig load_run_config(const std::string& path);

}  // namespace SURFREG_NAMESPACE
