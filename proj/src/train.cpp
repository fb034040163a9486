#include "sarl/train.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "sarl/errors.hpp"
#include "sarl/parallel.hpp"
#include "sarl/random.hpp"
#include "sarl/sh.hpp"
#include "sarl/wavelet.hpp"

namespace sarl::train {
namespace {

constexpr std::size_t kMiddle = 1;

std::vector<Vec3> pick_dirs(const GradientTable& table, std::span<const std::size_t> idx) {
  std::vector<Vec3> out;
  for (std::size_t i : idx) out.push_back(table.dir(i));
  return out;
}

std::vector<double> transposed_basis(std::span<const Vec3> dirs) {
  const sh::BasisMatrix b = sh::eval_basis(dirs);
  const std::size_t n = dirs.size(), nc = static_cast<std::size_t>(b.cols());
  std::vector<double> bt(nc * n);
  for (std::size_t j = 0; j < nc; ++j)
    for (std::size_t k = 0; k < n; ++k)
      bt[j * n + k] = b(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
  return bt;
}

Volume4D crop_hw(const Volume4D& v, std::size_t r0, std::size_t c0, std::size_t ph,
                 std::size_t pw) {
  if (r0 == 0 && c0 == 0 && ph == v.height() && pw == v.width()) return v;
  Volume4D out(ph, pw, v.slices(), v.channels(), v.spacing());
  for (std::size_t i = 0; i < ph; ++i)
    for (std::size_t j = 0; j < pw; ++j)
      for (std::size_t z = 0; z < v.slices(); ++z)
        for (std::size_t n = 0; n < v.channels(); ++n)
          out(i, j, z, n) = v(r0 + i, c0 + j, z, n);
  return out;
}

struct Draw {
  std::size_t triple = 0;
  double scale = 2.0;
  std::size_t scenario = 0;
  std::size_t r0 = 0, c0 = 0;
  std::uint64_t noise_seed = 0;
};

struct SampleOut {
  Gradients grads;
  LossValues loss;
};

SampleOut run_sample(const model::ParameterSet& params, const model::ModelConfig& mcfg,
                     const TrainConfig& cfg, const EvalCase& c, const GradientTable& table) {
  ad::Tape tape;
  const model::Bound p(tape, params, true);
  const auto sampled = pick_dirs(table, c.q.indices);
  const auto fr = model::framework_forward(p, mcfg, c.i_lr, c.h2, c.w2, sampled);
  const LossTerms l = total_loss(fr.coeffs, c.target, c.h2, c.w2, table.dirs(), cfg.lambda_d,
                                 cfg.wavelet_levels);
  tape.backward(l.total);
  SampleOut out;
  out.loss = {l.total.value()[0], l.recon.value()[0], l.freq.value()[0]};
  out.grads.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = p.at(i).grad();
    out.grads[i] = g.empty() ? std::vector<double>(params[i].values.size(), 0.0)
                             : std::vector<double>(g.begin(), g.end());
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void TrainConfig::validate() const {
  auto req = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("train config: " + msg);
  };
  req(epochs >= 1, "epochs must be >= 1");
  req(steps_per_epoch >= 1, "steps_per_epoch must be >= 1");
  req(lr_initial >= 0.0 && lr_after_drop >= 0.0, "learning rates must be >= 0");
  req(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
  req(eps > 0.0, "eps must be > 0");
  req(weight_decay >= 0.0, "weight_decay must be >= 0");
  req(lambda_d >= 0.0, "lambda_d must be >= 0");
  req(scale_range[0] >= 1.0 && scale_range[1] <= 8.0 && scale_range[0] <= scale_range[1],
      "scale_range must satisfy 1 <= lo <= hi <= 8");
  req(!q_factors.empty(), "q_factors must not be empty");
  for (double q : q_factors) req(q >= 1.0, "q factors must be >= 1");
  req(batch_size >= 1, "batch_size must be >= 1");
  req(patch_hr >= 8, "patch_hr must be >= 8");
  req(noise_sigma >= 0.0, "noise_sigma must be >= 0");
  req(val_scale >= 1.0, "val_scale must be >= 1");
  req(val_interval >= 1, "val_interval must be >= 1");
  req(wavelet_levels >= 1, "wavelet_levels must be >= 1");
}

double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  return epoch < cfg.lr_drop_epoch ? cfg.lr_initial : cfg.lr_after_drop;
}

std::size_t subset_size(std::size_t n, double q) {
  if (q < 1.0) throw ConfigError("undersampling factor must be >= 1");
  const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) / q + 0.5));
  return std::max<std::size_t>(k, 1);
}

void adamw_step(model::ParameterSet& params, const Gradients& grads, AdamState& state, double lr,
                const TrainConfig& cfg) {
  if (grads.size() != params.size()) throw UsageError("adamw: gradient count mismatch");
  if (state.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m.emplace_back(params[i].values.size(), 0.0);
      state.v.emplace_back(params[i].values.size(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].values;
    const auto& g = grads[i];
    if (g.size() != p.size()) throw UsageError("adamw: gradient shape mismatch for " + params[i].name);
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mh = m[k] / bc1, vh = v[k] / bc2;
      p[k] = p[k] - lr * (mh / (std::sqrt(vh) + cfg.eps)) - lr * cfg.weight_decay * p[k];
    }
  }
}

LossTerms total_loss(ad::Var coeffs, std::span<const double> target, std::size_t h,
                     std::size_t w, std::span<const Vec3> dirs, double lambda_d,
                     std::size_t levels) {
  ad::Tape& tape = *coeffs.tape();
  const std::size_t n2 = dirs.size();
  if (coeffs.shape().size() != 2 || coeffs.shape()[0] != h * w)
    throw DataError("loss: coefficient map does not match the " + std::to_string(h) + "x" +
                    std::to_string(w) + " grid");
  if (target.size() != h * w * n2) throw DataError("loss: target size mismatch");
  const ad::Var bt = tape.constant({coeffs.shape()[1], n2}, transposed_basis(dirs));
  const ad::Var pred = ad::reshape(ad::matmul(coeffs, bt), {h, w, n2});

  const ad::Var recon = ad::l1_loss(pred, target);
  const auto wt_target = wavelet::dwt2_packed(target, h, w, n2, levels);
  const auto dw = wavelet::detail_weights(h, w, levels);
  std::vector<double> weights(h * w * n2);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t k = 0; k < n2; ++k) weights[i * n2 + k] = dw[i] / static_cast<double>(n2);
  const ad::Var freq = ad::weighted_l1(ad::dwt2(pred, levels), wt_target, weights);
  const ad::Var total = ad::add(recon, ad::scale(freq, lambda_d));
  for (const ad::Var& v : {total, recon, freq})
    if (!std::isfinite(v.value()[0]))
      throw NumericalError("loss is not finite (recon " + std::to_string(recon.value()[0]) +
                           ", freq " + std::to_string(freq.value()[0]) + ")");
  return {total, recon, freq};
}

LossValues evaluate_loss(const Volume4D& coeffs, std::span<const double> target,
                         std::span<const Vec3> dirs, double lambda_d, std::size_t levels) {
  ad::Tape tape;
  const std::size_t h = coeffs.height(), w = coeffs.width();
  const ad::Var c = tape.constant({h * w, coeffs.channels()},
                                  {coeffs.data().begin(), coeffs.data().end()});
  const LossTerms l = total_loss(c, target, h, w, dirs, lambda_d, levels);
  return {l.total.value()[0], l.recon.value()[0], l.freq.value()[0]};
}

Dataset make_dataset(const Volume4D& normalized, const GradientTable& dwi_table,
                     std::size_t val_stride) {
  if (normalized.channels() != dwi_table.size())
    throw DataError("dataset: volume channels do not match the gradient table");
  if (!dwi_table.b0_indices().empty())
    throw DataError("dataset: expects b0-normalized data without b0 rows");
  Dataset d;
  d.table = dwi_table;
  for (auto& t : extract_slice_triples(normalized)) {
    if (val_stride > 0 && t.middle % val_stride == 2 % val_stride)
      d.val.push_back(std::move(t));
    else
      d.train.push_back(std::move(t));
  }
  if (d.train.empty()) throw DataError("dataset: no training slices left after the split");
  return d;
}

EvalCase make_case(const SliceTriple& hr, const GradientTable& table, double scale,
                   double q_factor, double noise_sigma, std::uint64_t noise_seed) {
  EvalCase c;
  c.h2 = hr.volume.height();
  c.w2 = hr.volume.width();
  c.q = sampling::select_subset(table, subset_size(table.size(), q_factor));
  c.i_lr = sampling::degrade(hr.volume, c.q, sampling::ScaleFactor(scale),
                             {noise_sigma, noise_seed});
  c.target = hr.volume.slice(kMiddle);
  return c;
}

std::vector<double> predict(const model::ParameterSet& params, const model::ModelConfig& cfg,
                            const EvalCase& c, const GradientTable& table) {
  const auto sampled = pick_dirs(table, c.q.indices);
  const Volume4D coeffs = model::infer_coefficients(params, cfg, c.i_lr, c.h2, c.w2, sampled);
  return sh::synth_volume(coeffs, table.dirs()).slice(0);
}

std::vector<double> baseline_predict(const EvalCase& c, const GradientTable& table,
                                     double lb_lambda) {
  const std::size_t n1 = c.q.size();
  const auto zf = sampling::zero_fill(c.i_lr.slice(kMiddle), c.i_lr.height(), c.i_lr.width(), n1,
                                      c.h2, c.w2);
  const Volume4D zf_vol(c.h2, c.w2, 1, n1, zf);
  const auto sampled = pick_dirs(table, c.q.indices);
  const Volume4D coeffs = sh::fit_volume(zf_vol, sampled, lb_lambda);
  return sh::synth_volume(coeffs, table.dirs()).slice(0);
}

Comparison compare_on(const std::vector<SliceTriple>& triples, const model::ParameterSet& params,
                      const model::ModelConfig& cfg, const GradientTable& table, double scale,
                      double q_factor, std::size_t threads, double baseline_lambda) {
  if (triples.empty()) throw DataError("comparison needs at least one slice triple");
  struct One {
    metrics::MetricReport model, baseline;
    double recon = 0.0;
  };
  std::vector<One> res(triples.size());
  parallel_for(triples.size(), threads, [&](std::size_t i) {
    const EvalCase c = make_case(triples[i], table, scale, q_factor);
    const auto pm = predict(params, cfg, c, table);
    const auto pb = baseline_predict(c, table, baseline_lambda);
    res[i].model = metrics::evaluate_stack(pm, c.target, c.h2, c.w2, table.size());
    res[i].baseline = metrics::evaluate_stack(pb, c.target, c.h2, c.w2, table.size());
    double s = 0.0;
    for (std::size_t k = 0; k < pm.size(); ++k) s += std::abs(pm[k] - c.target[k]);
    res[i].recon = s / static_cast<double>(pm.size());
  });
  Comparison out;
  auto accumulate = [](metrics::MetricReport& dst, const metrics::MetricReport& src,
                       std::size_t slice) {
    dst.psnr_db += src.psnr_db;
    dst.ssim += src.ssim;
    dst.nrmse += src.nrmse;
    for (auto m : src.per_channel) {
      m.slice = slice;
      dst.per_channel.push_back(m);
    }
  };
  for (std::size_t i = 0; i < res.size(); ++i) {
    accumulate(out.model, res[i].model, triples[i].middle);
    accumulate(out.baseline, res[i].baseline, triples[i].middle);
    out.model_recon += res[i].recon;
  }
  const double n = static_cast<double>(res.size());
  for (auto* r : {&out.model, &out.baseline}) {
    r->psnr_db /= n;
    r->ssim /= n;
    r->nrmse /= n;
  }
  out.model_recon /= n;
  return out;
}

TrainResult train_loop(const Dataset& data, model::ModelConfig model_cfg, const TrainConfig& cfg,
                       std::size_t threads, const EpochCallback& on_epoch) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const GradientTable& table = data.table;
  const std::size_t n2 = table.size();
  const std::size_t k = subset_size(n2, cfg.q_factors.front());
  for (double q : cfg.q_factors)
    if (subset_size(n2, q) != k)
      throw ConfigError("all q factors must keep the same number of directions (" +
                        std::to_string(k) + ")");
  model_cfg.in_channels = k;
  model_cfg.validate();

  Rng rng(cfg.seed);
  TrainResult out;
  out.model_cfg = model_cfg;
  out.params = model::make_parameters(model_cfg);
  model::init_parameters(out.params, rng.bits());
  out.best_params = out.params;
  out.record.best_val_loss = std::numeric_limits<double>::infinity();

  const std::size_t h = data.train.front().volume.height(), w = data.train.front().volume.width();
  const std::size_t ph = std::min(cfg.patch_hr, h), pw = std::min(cfg.patch_hr, w);
  std::vector<std::size_t> order(data.train.size());
  std::size_t cursor = order.size();

  AdamState adam;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_schedule(epoch, cfg);
    std::size_t seen = 0;
    for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
      // Every random draw happens here, on one thread, in a fixed order.
      std::vector<Draw> draws(cfg.batch_size);
      for (auto& d : draws) {
        if (cursor == order.size()) {
          for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
          rng.shuffle(order.begin(), order.end());
          cursor = 0;
        }
        d.triple = order[cursor++];
        d.scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1]);
        d.scenario = rng.index(cfg.q_factors.size());
        d.r0 = rng.index(h - ph + 1);
        d.c0 = rng.index(w - pw + 1);
        d.noise_seed = rng.bits();
      }
      std::vector<SampleOut> outs(draws.size());
      try {
        parallel_for(draws.size(), threads, [&](std::size_t i) {
          const Draw& d = draws[i];
          const SliceTriple& src = data.train[d.triple];
          const SliceTriple patch{crop_hw(src.volume, d.r0, d.c0, ph, pw), src.middle};
          const EvalCase c = make_case(patch, table, d.scale, cfg.q_factors[d.scenario],
                                       cfg.noise_sigma, d.noise_seed);
          outs[i] = run_sample(out.params, model_cfg, cfg, c, table);
        });
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                             ": " + e.what());
      }
      // Fixed-order reduction keeps the result independent of thread count.
      Gradients g = std::move(outs[0].grads);
      for (std::size_t i = 1; i < outs.size(); ++i)
        for (std::size_t p = 0; p < g.size(); ++p)
          for (std::size_t e = 0; e < g[p].size(); ++e) g[p][e] += outs[i].grads[p][e];
      const double inv = 1.0 / static_cast<double>(outs.size());
      for (auto& gp : g)
        for (double& v : gp) v *= inv;
      for (const auto& o : outs) {
        rec.loss += o.loss.total;
        rec.recon += o.loss.recon;
        rec.freq += o.loss.freq;
        ++seen;
      }
      adamw_step(out.params, g, adam, rec.lr, cfg);
    }
    rec.loss /= static_cast<double>(seen);
    rec.recon /= static_cast<double>(seen);
    rec.freq /= static_cast<double>(seen);

    const bool last = epoch + 1 == cfg.epochs;
    if (!data.val.empty() && (epoch % cfg.val_interval == 0 || last)) {
      struct Val {
        LossValues loss;
        metrics::MetricReport m;
      };
      std::vector<Val> vals(data.val.size());
      parallel_for(data.val.size(), threads, [&](std::size_t i) {
        const EvalCase c = make_case(data.val[i], table, cfg.val_scale, cfg.q_factors.front());
        const auto sampled = pick_dirs(table, c.q.indices);
        const Volume4D coeffs =
            model::infer_coefficients(out.params, model_cfg, c.i_lr, c.h2, c.w2, sampled);
        vals[i].loss = evaluate_loss(coeffs, c.target, table.dirs(), cfg.lambda_d,
                                     cfg.wavelet_levels);
        const auto pred = sh::synth_volume(coeffs, table.dirs()).slice(0);
        vals[i].m = metrics::evaluate_stack(pred, c.target, c.h2, c.w2, n2);
      });
      rec.validated = true;
      for (const auto& v : vals) {
        rec.val_loss += v.loss.total;
        rec.val_recon += v.loss.recon;
        rec.val_freq += v.loss.freq;
        rec.val_psnr += v.m.psnr_db;
        rec.val_ssim += v.m.ssim;
      }
      const double n = static_cast<double>(vals.size());
      rec.val_loss /= n;
      rec.val_recon /= n;
      rec.val_freq /= n;
      rec.val_psnr /= n;
      rec.val_ssim /= n;
      if (rec.val_loss < out.record.best_val_loss) {
        out.record.best_val_loss = rec.val_loss;
        out.record.best_epoch = epoch;
        out.best_params = out.params;
      }
    }
    rec.seconds = seconds_since(t_epoch);
    out.record.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (data.val.empty()) {
    out.best_params = out.params;
    out.record.best_epoch = cfg.epochs - 1;
    out.record.best_val_loss = 0.0;
  }
  out.record.wall_seconds = seconds_since(t_start);
  return out;
}

}  // namespace sarl::train
