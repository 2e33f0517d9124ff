#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "unfmri/data.hpp"
#include "unfmri/train_eval.hpp"
#include "unfmri/unfold.hpp"

namespace unfmri {

/// Where samples come from: generated phantoms (explicit per-split counts) or a manifest
/// split by ratio.
struct DataSpec {
  std::string source = "phantom";  // phantom | manifest
  PhantomKind phantom = PhantomKind::RandomEllipses;
  int size = 64;
  int train_count = 20;
  int val_count = 5;
  int test_count = 0;
  std::uint64_t phantom_seed = 1000;
  std::string manifest;
  std::array<double, 3> split{7.0, 1.0, 2.0};
  std::uint64_t split_seed = 0;
};

struct RunConfig {
  UnfoldConfig model;
  MaskSpec mask;
  TrainConfig train;
  DataSpec data;
  std::string out_dir = "run";
  std::vector<Variant> ablate_variants{Variant::Gahqs, Variant::Baseline1, Variant::Baseline2, Variant::Baseline3};

  RunConfig();
};

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& key, const std::string& message);
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// INI-style text: `[section]` headers, `key = value` lines, `#` or `;` comments.
RunConfig parse_run_config(const std::string& text);
RunConfig read_run_config(const std::filesystem::path& path);
/// Canonical text listing every key; parsing it back reproduces the config.
std::string format_run_config(const RunConfig& config);

struct RunData {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

/// Materializes the data section; relative manifest paths resolve against base_dir.
RunData load_run_data(const DataSpec& spec, const std::filesystem::path& base_dir);

}  // namespace unfmri
