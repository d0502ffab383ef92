#pragma once

// Run configuration: presets, a TOML-like file format and flag overrides.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "pathseek/bench.hpp"
#include "pathseek/params.hpp"
#include "pathseek/pyramid.hpp"
#include "pathseek/reasoner.hpp"
#include "pathseek/training.hpp"

namespace pathseek {

struct DataConfig {
  std::size_t count = 500;
  double train_fraction = 0.6;
  double val_fraction = 0.1;
};

struct BenchConfig {
  std::vector<int> k_grid = {2, 5, 10, 20};
  std::vector<double> delta_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  int workers = 1;
  PyramidConfig pyramid;
  ModelConfig model;
  ReasonerConfig reasoner;
  TrainConfig train;
  BaselineConfig baseline;
  DataConfig data;
  BenchConfig bench;

  // Cross-module consistency; throws std::invalid_argument naming the field.
  void validate() const;
  // Derives every module seed from `seed`.
  void apply_seed(std::uint64_t s);
};

RunConfig desk_preset();
RunConfig paper_preset();
RunConfig preset(const std::string& name);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unsigned integer literals stay exact so 64-bit seeds round-trip.
using ConfigValue = std::variant<bool, double, std::uint64_t, std::string, std::vector<double>>;
// Keys are "section.key"; top-level keys have no section prefix.
using ConfigTable = std::map<std::string, ConfigValue>;

ConfigTable parse_config(const std::string& text);
ConfigTable load_config_file(const std::filesystem::path& path);

// Applies a parsed table on top of `config`.  A `seed` key is applied first,
// so explicit module seeds override the derived ones.  Unknown keys throw
// ConfigError.
void apply_config(RunConfig& config, const ConfigTable& table);

// Serialises back to the file format (all keys).
std::string dump_config(const RunConfig& config);

}  // namespace pathseek
