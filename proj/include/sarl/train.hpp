#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sarl/autodiff.hpp"
#include "sarl/core.hpp"
#include "sarl/metrics.hpp"
#include "sarl/model.hpp"
#include "sarl/sampling.hpp"

namespace sarl::train {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t steps_per_epoch = 1;
  std::size_t lr_drop_epoch = 100;
  double lr_initial = 1e-4;
  double lr_after_drop = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
  double lambda_d = 0.1;
  std::array<double, 2> scale_range{2.0, 3.0};
  // Angular undersampling factors; each keeps round(N2 / q) directions and
  // all of them must keep the same count.
  std::vector<double> q_factors{3.0};
  std::size_t batch_size = 1;
  std::size_t patch_hr = 32;
  double noise_sigma = 0.0;  // k-space noise added by the on-the-fly degradation
  double val_scale = 2.0;
  std::size_t val_interval = 1;
  std::size_t val_stride = 3;  // see make_dataset
  std::size_t wavelet_levels = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

double lr_schedule(std::size_t epoch, const TrainConfig& cfg);

// Number of directions kept by undersampling factor q out of n.
std::size_t subset_size(std::size_t n, double q);

using Gradients = std::vector<std::vector<double>>;

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

// Decoupled weight decay:
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p
void adamw_step(model::ParameterSet& params, const Gradients& grads, AdamState& state, double lr,
                const TrainConfig& cfg);

struct LossTerms {
  ad::Var total;
  ad::Var recon;  // mean absolute error
  ad::Var freq;   // wavelet detail loss
};

// coeffs: (H*W) x 28 on the H x W grid; target: H x W x N2 middle slice
// measured along `dirs`.
LossTerms total_loss(ad::Var coeffs, std::span<const double> target, std::size_t h,
                     std::size_t w, std::span<const Vec3> dirs, double lambda_d,
                     std::size_t levels);

struct LossValues {
  double total = 0.0, recon = 0.0, freq = 0.0;
};

// Same quantities for a coefficient map H x W x 1 x 28, without gradients.
LossValues evaluate_loss(const Volume4D& coeffs, std::span<const double> target,
                         std::span<const Vec3> dirs, double lambda_d, std::size_t levels);

// b0-normalized HR slice triples split into training and held-out sets.
struct Dataset {
  std::vector<SliceTriple> train;
  std::vector<SliceTriple> val;
  GradientTable table;  // diffusion-weighted rows only
};

// Triples whose middle slice index is congruent to 2 modulo `val_stride` are
// held out (val_stride 0 disables the split).
Dataset make_dataset(const Volume4D& normalized, const GradientTable& dwi_table,
                     std::size_t val_stride = 3);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0, recon = 0.0, freq = 0.0;
  bool validated = false;
  double val_loss = 0.0, val_recon = 0.0, val_freq = 0.0;
  double val_psnr = 0.0, val_ssim = 0.0;
  double seconds = 0.0;
};

struct TrainRecord {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  model::ModelConfig model_cfg;     // with in_channels resolved
  model::ParameterSet params;       // after the last step
  model::ParameterSet best_params;  // lowest validation loss
  TrainRecord record;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// model_cfg.in_channels is filled in from the scenario list.
TrainResult train_loop(const Dataset& data, model::ModelConfig model_cfg, const TrainConfig& cfg,
                       std::size_t threads = 1, const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Evaluation on held-out triples at a fixed scale and undersampling factor.

struct EvalCase {
  Volume4D i_lr;                    // H1 x W1 x 3 x N1
  std::vector<double> target;       // H2 x W2 x N2 middle slice
  std::size_t h2 = 0, w2 = 0;
  sampling::QSubset q;
};

EvalCase make_case(const SliceTriple& hr, const GradientTable& table, double scale,
                   double q_factor, double noise_sigma = 0.0, std::uint64_t noise_seed = 0);

// Synthesized H2 x W2 x N2 middle slice from the model.
std::vector<double> predict(const model::ParameterSet& params, const model::ModelConfig& cfg,
                            const EvalCase& c, const GradientTable& table);

inline constexpr double kBaselineLambda = 0.006;

// Zero-filled LR middle slice, per-voxel SH fit over the sampled directions,
// synthesized at every direction of `table`.
std::vector<double> baseline_predict(const EvalCase& c, const GradientTable& table,
                                     double lb_lambda = kBaselineLambda);

struct Comparison {
  metrics::MetricReport model;
  metrics::MetricReport baseline;
  double model_recon = 0.0;  // validation reconstruction loss
};

Comparison compare_on(const std::vector<SliceTriple>& triples, const model::ParameterSet& params,
                      const model::ModelConfig& cfg, const GradientTable& table, double scale,
                      double q_factor, std::size_t threads = 1,
                      double baseline_lambda = kBaselineLambda);

}  // namespace sarl::train
