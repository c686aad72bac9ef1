#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stereosed/features.hpp"
#include "stereosed/metrics.hpp"
#include "stereosed/model.hpp"

namespace stereosed {

/// Everything a CLI run needs. Loaded from a JSON file, then overridden by flags.
struct RunConfig {
  std::vector<std::string> contexts{"home", "residential_area"};
  std::filesystem::path data_root = "data";
  std::string features = "mel_2;tdoa;pitch_2";
  std::vector<std::string> combinations;  // ablate; empty means the full table
  std::uint64_t seed = 1;
  int folds = 4;
  double validation_fraction = 0.2;
  std::filesystem::path output = "out";
  Aggregation aggregation = Aggregation::Micro;
  FeatureConfig extraction;
  TrainConfig training;

  /// Throws UsageError describing the first invalid field.
  void validate() const;
};

std::string to_json_text(const RunConfig& config);
RunConfig run_config_from_json_text(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

std::string to_json_text(const FeatureConfig& config);
FeatureConfig feature_config_from_json_text(const std::string& text);

}  // namespace stereosed
