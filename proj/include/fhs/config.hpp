#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "fhs/datasets.hpp"
#include "fhs/divergence.hpp"
#include "fhs/federation.hpp"
#include "fhs/optim.hpp"

namespace fhs::harness {

// invalid or unknown fields raise this, with `field` naming the dotted path
struct ConfigError : std::runtime_error {
  std::string field;
  ConfigError(std::string field_path, const std::string& message)
      : std::runtime_error(field_path + ": " + message), field(std::move(field_path)) {}
};

struct DatasetConfig {
  enum class Type { toy, idx, synthetic };
  Type type = Type::toy;
  // toy
  int n_per_class = 150;
  // idx
  std::string images, labels, test_images, test_labels;
  // synthetic
  int n_classes = 10;
  int input_dim = 16;
  int n_train = 10000;
  int n_test = 2000;
  double center_scale = 3.0;
};

struct ModelConfig {
  int hidden = 64;
  int latent_dim = 32;
  int gen_hidden = 128;
  int gen_embed = 32;
};

struct BoundConfig {
  bool enabled = false;
  std::string hypothesis = "linear";
  int steps = 300;
  double lr = 0.1;
  int hidden = 16;
  int batch_size = 32;
  double delta = 0.05;
  int lambda_budget = 300;
  std::string m_mode = "min";  // or "per_pair"

  divergence::BoundEvalConfig to_eval_config(std::uint64_t seed) const;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DatasetConfig dataset;
  struct {
    double alpha = 1.0;
    double train_fraction = 1.0;
  } partition;
  fed::FederationConfig federation;
  ModelConfig model;
  SgdConfig sgd;
  BoundConfig bound_eval;
};

// Parses and validates. Accepts either a plain config object or a run
// manifest (an object with a "config" member), so a manifest replays
// directly. Unknown fields are rejected with their dotted path.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path);

// canonical serialization (sorted keys, fixed layout); parse(serialize(c))
// is field-wise identical to c
std::string serialize_config(const ExperimentConfig& cfg);

// FNV-1a over the canonical serialization
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

}  // namespace fhs::harness
