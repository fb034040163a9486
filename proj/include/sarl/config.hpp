#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "sarl/model.hpp"
#include "sarl/train.hpp"

namespace sarl::config {

using nlohmann::json;

struct PhantomConfig {
  std::size_t size = 32;
  std::size_t slices = 9;
  std::size_t n_dirs = 15;
  double bval = 1000.0;
  std::size_t n_b0 = 1;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

struct DegradeConfig {
  double scale = 2.0;
  double q_subset = 3.0;  // angular undersampling factor
  double noise = 0.0;
  std::uint64_t seed = 0;
};

struct EvalConfig {
  double scale = 2.0;
  double q_factor = 3.0;
  double baseline_lambda = train::kBaselineLambda;
};

struct RunConfig {
  PhantomConfig phantom;
  DegradeConfig degrade;
  model::ModelConfig model;
  train::TrainConfig train;
  EvalConfig eval;
};

// Every section is optional and missing keys keep their defaults; unknown
// keys and type mismatches throw ConfigError naming the JSON path.
RunConfig parse_run_config(const json& j);
RunConfig load_run_config(const std::string& path);
json to_json(const RunConfig& c);

json to_json(const model::ModelConfig& c);
model::ModelConfig model_from_json(const json& j);
json to_json(const train::TrainConfig& c);
train::TrainConfig train_from_json(const json& j);

}  // namespace sarl::config
