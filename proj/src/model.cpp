#include "sarl/model.hpp"

#include <cmath>
#include <string>

#include "sarl/errors.hpp"
#include "sarl/fft.hpp"
#include "sarl/random.hpp"

namespace sarl::model {
namespace {

constexpr std::size_t kSlices = 3;
constexpr std::size_t kMiddle = 1;

void add_conv(ParameterSet& ps, const std::string& name, std::size_t k, std::size_t cin,
              std::size_t cout) {
  ps.add(name + ".w", {k, k, k, cin, cout});
  ps.add(name + ".b", {cout});
}

void add_linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out) {
  ps.add(name + ".w", {in, out});
  ps.add(name + ".b", {out});
}

ad::Var conv(const Bound& p, const std::string& name, ad::Var x) {
  return ad::conv3d(x, p(name + ".w"), p(name + ".b"));
}

ad::Var dense(const Bound& p, const std::string& name, ad::Var x) {
  return ad::linear(x, p(name + ".w"), p(name + ".b"));
}

std::string block_name(const std::string& prefix, std::size_t b) {
  return prefix + "rdb" + std::to_string(b);
}

std::string fc_name(const std::string& prefix, std::size_t i) {
  return prefix + "cfn.fc" + std::to_string(i);
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

void ExtractorConfig::validate() const {
  require(base_channels >= 1 && num_blocks >= 1 && growth >= 1 && layers_per_block >= 1,
          "extractor sizes must all be >= 1");
}

void CFNConfig::validate() const { require(hidden >= 1, "cfn hidden width must be >= 1"); }

void FrameworkConfig::validate() const {
  require(sh_order == sh::kDefaultOrder, "only SH order 6 is supported by the model");
}

void ModelConfig::validate() const {
  require(in_channels >= 1, "model needs at least one input direction");
  extractor.validate();
  cfn.validate();
  framework.validate();
}

ParamTensor& ParameterSet::add(std::string name, ad::Shape shape) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_.emplace(name, tensors_.size());
  const std::size_t n = ad::numel(shape);
  tensors_.push_back({std::move(name), std::move(shape), std::vector<double>(n, 0.0)});
  return tensors_.back();
}

std::size_t ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::total_values() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.values.size();
  return n;
}

std::string stage_prefix(const ModelConfig& cfg, std::size_t stage) {
  return "stage" + std::to_string(cfg.framework.shared_weights ? 0 : stage) + ".";
}

ParameterSet make_parameters(const ModelConfig& cfg) {
  cfg.validate();
  const auto& e = cfg.extractor;
  const std::size_t n1 = cfg.in_channels, g0 = e.base_channels, g = e.growth;
  ParameterSet ps;
  for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
    const std::string pre = stage_prefix(cfg, s);
    add_conv(ps, pre + "sfe1", 3, n1, g0);
    add_conv(ps, pre + "sfe2", 3, g0, g0);
    for (std::size_t b = 0; b < e.num_blocks; ++b) {
      const std::string bn = block_name(pre, b);
      for (std::size_t l = 0; l < e.layers_per_block; ++l)
        add_conv(ps, bn + ".conv" + std::to_string(l), 3, g0 + l * g, g);
      add_conv(ps, bn + ".lff", 1, g0 + e.layers_per_block * g, g0);
    }
    add_conv(ps, pre + "gff1", 1, e.num_blocks * g0, g0);
    add_conv(ps, pre + "gff2", 3, g0, g0);
    add_conv(ps, pre + "out", 3, g0, n1);

    const std::size_t h = cfg.cfn.hidden;
    add_linear(ps, fc_name(pre, 1), 2 + n1, h);
    for (std::size_t i = 2; i < CFNConfig::kNumLayers; ++i) add_linear(ps, fc_name(pre, i), h, h);
    add_linear(ps, fc_name(pre, CFNConfig::kNumLayers), h,
               sh::num_coeffs(cfg.framework.sh_order));
  }
  return ps;
}

void init_parameters(ParameterSet& params, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamTensor& t = params[i];
    // Biases share the fan-in of the weight they belong to.
    const ad::Shape& ws = (t.shape.size() == 1 && i > 0) ? params[i - 1].shape : t.shape;
    const std::size_t fan_in = ad::numel(ws) / ws.back();
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.values) v = rng.uniform(-bound, bound);
  }
}

void check_layout(const ParameterSet& params, const ModelConfig& cfg) {
  const ParameterSet want = make_parameters(cfg);
  if (want.size() != params.size())
    throw ConfigError("parameter count " + std::to_string(params.size()) +
                      " does not match the model configuration (" + std::to_string(want.size()) +
                      ")");
  for (std::size_t i = 0; i < want.size(); ++i)
    if (want[i].name != params[i].name || want[i].shape != params[i].shape ||
        want[i].values.size() != params[i].values.size())
      throw ConfigError("parameter '" + params[i].name + "' " + ad::shape_str(params[i].shape) +
                        " does not match expected '" + want[i].name + "' " +
                        ad::shape_str(want[i].shape));
}

Bound::Bound(ad::Tape& tape, const ParameterSet& params, bool trainable)
    : tape_(&tape), params_(&params) {
  vars_.reserve(params.size());
  for (const auto& t : params)
    vars_.push_back(trainable ? tape.variable(t.shape, t.values) : tape.constant(t.shape, t.values));
}

ad::Var extract_features(const Bound& p, const std::string& prefix, ad::Var input,
                         const ExtractorConfig& cfg, std::size_t channels) {
  const ad::Shape& s = input.shape();
  if (s.size() != 4 || s[2] != kSlices || s[3] != channels)
    throw ConfigError("extractor expects H x W x 3 x " + std::to_string(channels) + " input, got " +
                      ad::shape_str(s));
  const ad::Var shallow = conv(p, prefix + "sfe1", input);
  ad::Var x = conv(p, prefix + "sfe2", shallow);
  ad::Var blocks;
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    const std::string bn = block_name(prefix, b);
    ad::Var cat = x;
    for (std::size_t l = 0; l < cfg.layers_per_block; ++l)
      cat = ad::concat_last(cat, ad::relu(conv(p, bn + ".conv" + std::to_string(l), cat)));
    x = ad::add(x, conv(p, bn + ".lff", cat));
    blocks = b == 0 ? x : ad::concat_last(blocks, x);
  }
  ad::Var fused = conv(p, prefix + "gff2", conv(p, prefix + "gff1", blocks));
  return conv(p, prefix + "out", ad::add(fused, shallow));
}

ad::Var sample_features(ad::Var fmap, const CoordGrid& grid) {
  const auto coords = grid.flat();
  return ad::bilinear_sample(fmap, coords, fmap.shape()[2] / 2);
}

ad::Var cfn_forward(const Bound& p, const std::string& prefix, ad::Var coords,
                    ad::Var features) {
  ad::Var x = ad::concat_last(coords, features);
  ad::Var skip;
  for (std::size_t i = 1; i < CFNConfig::kNumLayers; ++i) {
    const ad::Var a = dense(p, fc_name(prefix, i), x);
    if (i == CFNConfig::kResidualFrom) skip = a;
    x = ad::relu(a);
    if (i == CFNConfig::kResidualTo) x = ad::add(x, skip);
  }
  return dense(p, fc_name(prefix, CFNConfig::kNumLayers), x);
}

ad::Var sarl_forward(const Bound& p, const ModelConfig& cfg, std::size_t stage, ad::Var input,
                     const CoordGrid& grid) {
  const std::string pre = stage_prefix(cfg, stage);
  const ad::Var fmap = extract_features(p, pre, input, cfg.extractor, cfg.in_channels);
  const ad::Var v = sample_features(fmap, grid);
  const ad::Var c = p.tape().constant({grid.size(), 2}, grid.flat());
  return cfn_forward(p, pre, c, v);
}

ad::Var fidelity_forward(ad::Var pred, std::span<const double> measured, std::size_t h1,
                         std::size_t w1) {
  const ad::Shape& s = pred.shape();
  if (s.size() != 3 || measured.size() != h1 * w1 * s[2])
    throw DataError("data fidelity: image sizes do not match the declared grids");
  const std::size_t h2 = s[0], w2 = s[1], c = s[2];
  auto y = fft::to_complex(measured);
  fft::forward2(y, h1, w1, c);
  const auto yre = fft::real_part(y), yim = fft::imag_part(y);

  const double a = static_cast<double>(h1 * w1) / static_cast<double>(h2 * w2);
  const ad::CVar spec = ad::fft2(ad::complex_from_real(pred));
  const ad::CVar crop = ad::spectral_crop(spec, h1, w1, a);
  const ad::CVar resid{ad::add_constant(ad::scale(crop.re, -1.0), yre),
                       ad::add_constant(ad::scale(crop.im, -1.0), yim)};
  const ad::CVar upd = ad::spectral_embed(resid, h2, w2, 1.0 / a);
  const ad::CVar out = ad::ifft2({ad::add(spec.re, upd.re), ad::add(spec.im, upd.im)});
  return out.re;
}

FrameworkResult framework_forward(const Bound& p, const ModelConfig& cfg, const Volume4D& i_lr,
                                  std::size_t h2, std::size_t w2,
                                  std::span<const Vec3> sampled_dirs) {
  const std::size_t n1 = cfg.in_channels;
  if (i_lr.slices() != kSlices || i_lr.channels() != n1)
    throw ConfigError("framework input must be H1 x W1 x 3 x " + std::to_string(n1) + ", got " +
                      std::to_string(i_lr.slices()) + " slices and " +
                      std::to_string(i_lr.channels()) + " channels");
  if (sampled_dirs.size() != n1)
    throw ConfigError("framework needs one direction per input channel");
  const std::size_t h1 = i_lr.height(), w1 = i_lr.width();
  if (h1 > h2 || w1 > w2) throw ConfigError("framework output grid is smaller than its input");

  ad::Tape& tape = p.tape();
  const CoordGrid grid = make_coord_grid(h2, w2);
  const sh::BasisMatrix bq = sh::eval_basis(sampled_dirs, cfg.framework.sh_order);
  const std::size_t nc = static_cast<std::size_t>(bq.cols());
  std::vector<double> bqt(nc * n1);
  for (std::size_t j = 0; j < nc; ++j)
    for (std::size_t k = 0; k < n1; ++k) bqt[j * n1 + k] = bq(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
  const ad::Var basis_t = tape.constant({nc, n1}, std::move(bqt));
  const std::vector<double> measured = i_lr.slice(kMiddle);

  FrameworkResult r;
  ad::Var input = tape.constant({h1, w1, kSlices, n1}, {i_lr.data().begin(), i_lr.data().end()});
  for (std::size_t it = 0;; ++it) {
    r.coeffs = sarl_forward(p, cfg, it, input, grid);
    if (it == cfg.framework.n_iters) break;
    const ad::Var dw = ad::reshape(ad::matmul(r.coeffs, basis_t), {h2, w2, n1});
    const ad::Var fixed = fidelity_forward(dw, measured, h1, w1);
    r.intermediates.push_back(fixed);
    input = ad::repeat_axis(fixed, 2, kSlices);
  }
  return r;
}

Volume4D infer_coefficients(const ParameterSet& params, const ModelConfig& cfg,
                            const Volume4D& i_lr, std::size_t h2, std::size_t w2,
                            std::span<const Vec3> sampled_dirs) {
  ad::Tape tape;
  const Bound p(tape, params, false);
  const FrameworkResult r = framework_forward(p, cfg, i_lr, h2, w2, sampled_dirs);
  const auto v = r.coeffs.value();
  return Volume4D(h2, w2, 1, r.coeffs.shape()[1], std::vector<double>(v.begin(), v.end()));
}

}  // namespace sarl::model
