#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "softmine/trainer.hpp"

namespace softmine {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A training run as read from a key=value file plus command-line overrides.
struct ExperimentConfig {
  TrainConfig train;
  std::filesystem::path image;
  std::filesystem::path out_dir = "run";
  bool dump_images = false;
  bool dump_walkers = false;
  /// Write measured wall time into the CSV log (0 otherwise, which makes
  /// logs byte-comparable across runs).
  bool log_wall_time = true;

  /// Applies one key; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Every key with its resolved value, in schema order.
  std::vector<std::pair<std::string, std::string>> resolved() const;
  /// Throws ConfigError naming the offending key.
  void validate() const;
};

const std::vector<std::string>& config_keys();

/// Parsed "key = value" lines; '#' starts a comment. Section headers
/// "[name]" are reported with key "[" and the section name as value.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& origin);
std::string read_text_file(const std::filesystem::path& path);

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Named variants sharing base settings; each runs once per seed.
struct BenchPlan {
  struct Variant {
    std::string name;
    ExperimentConfig config;
  };
  std::vector<Variant> variants;
  int seeds = 3;
  std::vector<std::int64_t> checkpoints;
  std::string baseline;  // defaults to the first uniform variant
  std::filesystem::path out_dir = "bench";

  void validate() const;
};

/// Plan file: shared keys, then "[variant]" sections with per-variant
/// overrides. Plan-only keys: seeds, checkpoints, baseline.
BenchPlan parse_bench_plan(const std::string& text, const std::string& origin = "<plan>");
BenchPlan load_bench_plan(const std::filesystem::path& path);

}  // namespace softmine
