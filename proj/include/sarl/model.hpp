#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sarl/autodiff.hpp"
#include "sarl/core.hpp"
#include "sarl/sampling.hpp"
#include "sarl/sh.hpp"

namespace sarl::model {

struct ExtractorConfig {
  std::size_t base_channels = 16;
  std::size_t num_blocks = 2;
  std::size_t growth = 8;
  std::size_t layers_per_block = 3;

  void validate() const;
};

struct CFNConfig {
  static constexpr std::size_t kNumLayers = 8;
  static constexpr std::size_t kResidualFrom = 1;  // pre-activation of this layer
  static constexpr std::size_t kResidualTo = 4;    // added after this layer's ReLU
  std::size_t hidden = 64;

  void validate() const;
};

struct FrameworkConfig {
  std::size_t n_iters = 2;
  bool shared_weights = false;
  int sh_order = sh::kDefaultOrder;

  void validate() const;
};

struct ModelConfig {
  std::size_t in_channels = 0;  // N1, number of sampled directions
  ExtractorConfig extractor;
  CFNConfig cfn;
  FrameworkConfig framework;

  void validate() const;
  std::size_t num_stages() const {
    return framework.shared_weights ? 1 : framework.n_iters + 1;
  }
};

struct ParamTensor {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

// Ordered collection of named parameter arrays.
class ParameterSet {
 public:
  ParamTensor& add(std::string name, ad::Shape shape);
  std::size_t size() const { return tensors_.size(); }
  ParamTensor& operator[](std::size_t i) { return tensors_[i]; }
  const ParamTensor& operator[](std::size_t i) const { return tensors_[i]; }
  std::size_t find(const std::string& name) const;  // throws ConfigError
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t total_values() const;

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.tensors_.size() == b.tensors_.size() &&
           std::equal(a.tensors_.begin(), a.tensors_.end(), b.tensors_.begin(),
                      [](const ParamTensor& x, const ParamTensor& y) {
                        return x.name == y.name && x.shape == y.shape && x.values == y.values;
                      });
  }

 private:
  std::vector<ParamTensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

// Parameter layout for a configuration, every value zero.
ParameterSet make_parameters(const ModelConfig& cfg);
// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases alike.
void init_parameters(ParameterSet& params, std::uint64_t seed);
// Throws ConfigError unless `params` has exactly the layout of `cfg`.
void check_layout(const ParameterSet& params, const ModelConfig& cfg);

// Parameters placed on a tape, one Var per ParameterSet entry.
class Bound {
 public:
  Bound(ad::Tape& tape, const ParameterSet& params, bool trainable);
  ad::Var operator()(const std::string& name) const { return vars_[params_->find(name)]; }
  ad::Var at(std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }
  ad::Tape& tape() const { return *tape_; }

 private:
  ad::Tape* tape_;
  const ParameterSet* params_;
  std::vector<ad::Var> vars_;
};

std::string stage_prefix(const ModelConfig& cfg, std::size_t stage);

// input: H x W x 3 x N1 -> feature map H x W x 3 x N1.
ad::Var extract_features(const Bound& p, const std::string& prefix, ad::Var input,
                         const ExtractorConfig& cfg, std::size_t channels);

// Bilinear lookup of the middle-slice plane at every grid point: P x N1.
ad::Var sample_features(ad::Var fmap, const CoordGrid& grid);

// coords: P x 2, features: P x N1 -> P x num_coeffs.
ad::Var cfn_forward(const Bound& p, const std::string& prefix, ad::Var coords, ad::Var features);

// SH coefficients (H2*W2) x 28 decoded on `grid` from a 3-slice input.
ad::Var sarl_forward(const Bound& p, const ModelConfig& cfg, std::size_t stage, ad::Var input,
                     const CoordGrid& grid);

// Differentiable data-fidelity projection of an H2 x W2 x C prediction
// against measured H1 x W1 x C data (a constant); mirrors
// sampling::fidelity_project.
ad::Var fidelity_forward(ad::Var pred, std::span<const double> measured, std::size_t h1,
                         std::size_t w1);

struct FrameworkResult {
  ad::Var coeffs;                      // (H2*W2) x 28, row-major over the grid
  std::vector<ad::Var> intermediates;  // H2 x W2 x N1 after each fidelity step
};

// i_lr: H1 x W1 x 3 x N1 slice triple (middle slice 1). `sampled_dirs` are
// the gradient directions of the N1 channels.
FrameworkResult framework_forward(const Bound& p, const ModelConfig& cfg, const Volume4D& i_lr,
                                  std::size_t h2, std::size_t w2,
                                  std::span<const Vec3> sampled_dirs);

// Gradient-free evaluation of the framework on one slice triple. Returns an
// H2 x W2 x 1 x 28 coefficient map.
Volume4D infer_coefficients(const ParameterSet& params, const ModelConfig& cfg,
                            const Volume4D& i_lr, std::size_t h2, std::size_t w2,
                            std::span<const Vec3> sampled_dirs);

}  // namespace sarl::model
