#pragma once

#include "srkd/experiments.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace srkd {

// Everything a command needs. Every field has a default.
struct RunConfig {
  std::uint64_t seed = 0;
  ExperimentConfig experiment;
  NoiseConfig noise;
  std::size_t sweep_seeds = 5;
  std::vector<double> fractions{0.05, 0.10, 0.125, 0.25, 0.5, 1.0};
  std::vector<std::size_t> batch_sizes{2, 4, 8};
  std::vector<std::size_t> dims{32, 64, 128, 256};
  std::string data_dir;  // empty: scenes are generated in memory
  std::string teacher_checkpoint;
  std::string student_checkpoint;

  RunConfig();

  // Pushes `seed` into every seeded component and rebuilds the paired seed
  // list; called after parsing and after command-line overrides.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

// Grammar, one statement per line:
//   line    := blank | comment | key '=' value [comment]
//   comment := '#' anything
//   key     := section '.' name | name   (e.g. loss.lambda_c)
//   value   := scalar | scalar (',' scalar)*
// Later assignments win. Unknown keys and malformed values are Config errors
// naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Every key with its effective value, in a fixed order; parse_config of the
// result reproduces the same RunConfig.
std::string format_config(const RunConfig& cfg);

// FNV-1a 64 of format_config, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace srkd
