#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "kneeatt/data.hpp"
#include "kneeatt/model_zoo.hpp"
#include "kneeatt/train.hpp"

namespace kneeatt {

struct GridConfig {
  std::vector<double> w0_values = default_grid_axis();
  std::vector<double> w1_values = default_grid_axis();
  std::size_t max_epochs = 15;
};

/// Everything one run needs. Defaults describe a small desk-scale model that
/// matches the default dataset's image size.
struct RunConfig {
  ModelSpec model;
  TrainConfig train;
  DatasetManifest data;
  GridConfig grid;
  std::string output_dir = "runs/default";

  RunConfig();
  std::vector<std::string> problems() const;
};

/// Carries every problem found, one per line in what().
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Parses JSON text on top of the defaults. Unknown keys, wrong types and
/// invalid values are all collected and reported together.
RunConfig parse_run_config(const std::string& text);
std::string run_config_to_text(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

std::string manifest_to_text(const DatasetManifest& manifest);
DatasetManifest parse_manifest(const std::string& text);

}  // namespace kneeatt
