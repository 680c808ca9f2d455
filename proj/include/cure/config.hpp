#pragma once

// Experiment configuration: a sectioned key=value file, command-line
// overrides, and a snapshot writer whose output parses back to the same
// configuration.
//
// Precedence, lowest first: built-in defaults, config file, `--set
// section.key=value` overrides, dedicated command-line flags.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cure/engine.hpp"
#include "cure/metrics.hpp"
#include "cure/synth.hpp"

namespace cure {

enum class SplitMode { random, quality };

std::string to_string(SplitMode mode);
SplitMode split_mode_from_string(const std::string& s);

struct ExperimentConfig {
  std::uint64_t seed = 0;
  SplitMode split = SplitMode::random;
  double forget_fraction = 0.2;     // random mode: fraction of identities forgotten
  double quality_percentile = 35.0; // quality mode
  double holdout_fraction = 0.1;
  int verification_pairs = 400;
  std::vector<std::string> baselines = {"neggrad", "badteacher", "oracle"};
  std::vector<std::string> report_formats = {"json", "csv"};
  std::string output_dir;  // empty: $CURE_OUTPUT_ROOT, else ./runs

  GeneratorSpec data;
  TeacherConfig teacher;
  UnlearnConfig unlearn;
  EvalOptions eval;

  void validate() const;

  // Pushes the root seed into every component seed. Called by the loaders;
  // call again after editing `seed` by hand.
  void propagate_seed();
};

// Every accepted key, as "section.key", in snapshot order.
std::vector<std::string> config_keys();

// Throws ConfigError for unknown keys or unparseable values.
void apply_override(ExperimentConfig& config, const std::string& key, const std::string& value);
// Accepts "section.key=value".
void apply_override(ExperimentConfig& config, const std::string& assignment);

std::string get_value(const ExperimentConfig& config, const std::string& key);

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string to_config_text(const ExperimentConfig& config);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

}  // namespace cure
