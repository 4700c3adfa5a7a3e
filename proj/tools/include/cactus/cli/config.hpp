#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cactus/train.hpp"

namespace cactus::cli {

/// `[section]` headers and `key = value` lines; '#' starts a comment. Keys
/// are flattened to "section.key". Duplicate keys are rejected.
std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin = "config");

struct RunConfig {
  // [data]
  std::string dataset = "blobs";
  std::filesystem::path data_path = "data/mnist-subset";
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::size_t synthetic_train = 2000;
  std::size_t synthetic_test = 1000;
  double noise = 0.05;
  std::uint64_t data_seed = 0;
  // [model]
  std::string arch = "mlp_blobs";
  // [train], [attack], [awp]
  TrainConfig train;
  AwpConfig awp;
  // [compression]
  std::string set = "identity";
  std::string method = "GUl1";
  double ratio_lo = 0.25;
  double ratio_hi = 0.75;
  std::size_t count = 1;
  std::vector<double> ratios{0.25, 0.5, 0.75};
  bool quant_proxy = false;
  // [eval]
  std::vector<double> eval_eps{0.05};
  std::vector<std::string> variants{"none"};
  // [run]
  std::uint64_t seed = 0;
  std::filesystem::path out = "runs/default";

  RunConfig();
  /// Applies one flattened key; unknown keys and malformed values throw ConfigError.
  void set_value(const std::string& key, const std::string& value);
  void apply(const std::map<std::string, std::string>& values);

  CompressionSet compression_set() const;
  /// Training configuration with seed and output directory filled in.
  TrainConfig train_config() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

/// "section.key  default  description" for every accepted key.
std::vector<std::vector<std::string>> config_reference();

}  // namespace cactus::cli
