#pragma once

// Experiment configuration: one JSON document with sections model, loss,
// augment, train, eval and io. Unknown keys and constraint violations are
// rejected with the JSON path of the offending value.

#include "amcl/augment.hpp"
#include "amcl/losses.hpp"
#include "amcl/nets.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace amcl {

/// Invalid configuration; `path()` is the JSON path such as "loss.kappa".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::runtime_error(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct ModelSection {
  std::size_t hidden = 128;           // encoder hidden width
  std::size_t feature_width = 64;     // d
  std::size_t projection_width = 16;  // d'
  std::size_t heads = 1;              // C
};

struct TrainSection {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double grad_clip = 0.0;        // global-norm clip; 0 disables
  std::uint64_t seed = 42;
  std::size_t eval_every = 0;    // epochs between evaluations; 0 = final epoch only
};

struct EvalSection {
  std::size_t knn_k = 20;
  std::vector<std::size_t> probe_subsets{10, 20, 50};
  std::size_t probe_iterations = 500;
  double probe_lr = 0.1;
  double probe_l2 = 1e-4;
  std::size_t positive_pairs = 500;
  std::size_t negative_pairs = 500;
  double held_out = 0.2;
};

struct IoSection {
  std::string dataset;
  std::string output_dir = "out";
  SyntheticSpec synthetic;  // used by gen-data
};

struct ExperimentConfig {
  ModelSection model;
  AmclConfig loss;
  std::size_t augment_prefix = 5;
  AugParams augment;
  TrainSection train;
  EvalSection eval;
  IoSection io;

  /// ModelConfig for images of the given flattened width.
  ModelConfig model_config(std::size_t input_width) const;
  AugPipeline pipeline(std::size_t image_size) const;
  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
};

/// Parses and validates; missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// Writes `<io.output_dir>/config.resolved.json`.
void write_resolved_config(const ExperimentConfig& cfg);

}  // namespace amcl
