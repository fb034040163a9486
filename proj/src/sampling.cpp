#include "sarl/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "sarl/random.hpp"

namespace sarl::sampling {
namespace {

using fft::cplx;

double antipodal_angle(const Vec3& a, const Vec3& b) {
  return std::acos(std::min(1.0, std::abs(a.dot(b))));
}

std::size_t mod(long f, std::size_t n) {
  const long m = static_cast<long>(n);
  return static_cast<std::size_t>(((f % m) + m) % m);
}

void check_lr(std::size_t h1, std::size_t w1) {
  if (h1 < kMinLrSize || w1 < kMinLrSize)
    throw ConfigError("low-resolution grid " + std::to_string(h1) + "x" + std::to_string(w1) +
                      " is below the 8x8 minimum");
}

}  // namespace

std::vector<std::size_t> QSubset::complement(std::size_t total) const {
  std::vector<std::size_t> out;
  std::size_t k = 0;
  for (std::size_t i = 0; i < total; ++i) {
    if (k < indices.size() && indices[k] == i) {
      ++k;
      continue;
    }
    out.push_back(i);
  }
  return out;
}

ScaleFactor::ScaleFactor(double value) : s(value) {
  if (!(value >= 1.0) || !std::isfinite(value))
    throw ConfigError("scale factor must be >= 1, got " + std::to_string(value));
}

std::size_t ScaleFactor::lr_size(std::size_t n) const {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) / s + 0.5));
}

QSubset select_subset(const GradientTable& table, std::size_t k) {
  const std::size_t n = table.size();
  if (k < 1 || k > n)
    throw ConfigError("subset size " + std::to_string(k) + " outside [1, " + std::to_string(n) +
                      "]");
  std::vector<bool> chosen(n, false);
  std::vector<std::size_t> picked;

  std::size_t first = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (table.dir(i).z() > best) {
      best = table.dir(i).z();
      first = i;
    }
  }
  chosen[first] = true;
  picked.push_back(first);

  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t last = first;
  while (picked.size() < k) {
    std::size_t arg = n;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (chosen[i]) continue;
      nearest[i] = std::min(nearest[i], antipodal_angle(table.dir(i), table.dir(last)));
      if (nearest[i] > far) {
        far = nearest[i];
        arg = i;
      }
    }
    chosen[arg] = true;
    picked.push_back(arg);
    last = arg;
  }
  std::sort(picked.begin(), picked.end());
  return {picked};
}

double min_antipodal_angle(const GradientTable& table, std::span<const std::size_t> indices) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < indices.size(); ++a)
    for (std::size_t b = a + 1; b < indices.size(); ++b)
      best = std::min(best, antipodal_angle(table.dir(indices[a]), table.dir(indices[b])));
  return best;
}

AxisMap spectral_axis_map(std::size_t n_lr, std::size_t n_hr) {
  if (n_lr == 0 || n_lr > n_hr) throw ConfigError("spectral map needs 0 < n_lr <= n_hr");
  AxisMap map(n_lr);
  const long half = static_cast<long>(n_lr / 2);
  const bool split_nyquist = (n_lr % 2 == 0) && n_lr < n_hr;
  for (long f = -half; f < static_cast<long>(n_lr) - half; ++f) {
    auto& terms = map[mod(f, n_lr)];
    if (split_nyquist && f == -half) {
      terms.push_back({mod(f, n_hr), std::numbers::sqrt2 / 2.0});
      terms.push_back({mod(-f, n_hr), std::numbers::sqrt2 / 2.0});
    } else {
      terms.push_back({mod(f, n_hr), 1.0});
    }
  }
  return map;
}

std::vector<cplx> spectral_crop(std::span<const cplx> hr, std::size_t h2, std::size_t w2,
                                std::size_t c, std::size_t h1, std::size_t w1, double scale) {
  if (hr.size() != h2 * w2 * c) throw DataError("spectral_crop: buffer size mismatch");
  const auto mh = spectral_axis_map(h1, h2);
  const auto mw = spectral_axis_map(w1, w2);
  std::vector<cplx> lr(h1 * w1 * c, cplx{});
  for (std::size_t u = 0; u < h1; ++u)
    for (std::size_t v = 0; v < w1; ++v) {
      cplx* dst = &lr[(u * w1 + v) * c];
      for (const auto& th : mh[u])
        for (const auto& tw : mw[v]) {
          const double wgt = scale * th.weight * tw.weight;
          const cplx* src = &hr[(th.hr * w2 + tw.hr) * c];
          for (std::size_t k = 0; k < c; ++k) dst[k] += wgt * src[k];
        }
    }
  return lr;
}

std::vector<cplx> spectral_embed(std::span<const cplx> lr, std::size_t h1, std::size_t w1,
                                 std::size_t c, std::size_t h2, std::size_t w2, double scale) {
  if (lr.size() != h1 * w1 * c) throw DataError("spectral_embed: buffer size mismatch");
  const auto mh = spectral_axis_map(h1, h2);
  const auto mw = spectral_axis_map(w1, w2);
  std::vector<cplx> hr(h2 * w2 * c, cplx{});
  for (std::size_t u = 0; u < h1; ++u)
    for (std::size_t v = 0; v < w1; ++v) {
      const cplx* src = &lr[(u * w1 + v) * c];
      for (const auto& th : mh[u])
        for (const auto& tw : mw[v]) {
          const double wgt = scale * th.weight * tw.weight;
          cplx* dst = &hr[(th.hr * w2 + tw.hr) * c];
          for (std::size_t k = 0; k < c; ++k) dst[k] += wgt * src[k];
        }
    }
  return hr;
}

std::vector<double> downsample_x(std::span<const double> img, std::size_t h2, std::size_t w2,
                                 std::size_t c, std::size_t h1, std::size_t w1) {
  check_lr(h1, w1);
  if (h1 > h2 || w1 > w2) throw ConfigError("downsample_x: target grid larger than source");
  if (img.size() != h2 * w2 * c) throw DataError("downsample_x: image size mismatch");
  auto spec = fft::to_complex(img);
  fft::forward2(spec, h2, w2, c);
  const double a = static_cast<double>(h1 * w1) / static_cast<double>(h2 * w2);
  auto lr = spectral_crop(spec, h2, w2, c, h1, w1, a);
  fft::inverse2(lr, h1, w1, c);
  return fft::real_part(lr);
}

std::vector<double> downsample_x(std::span<const double> img, std::size_t h2, std::size_t w2,
                                 std::size_t c, ScaleFactor s) {
  return downsample_x(img, h2, w2, c, s.lr_size(h2), s.lr_size(w2));
}

std::vector<double> zero_fill(std::span<const double> img_lr, std::size_t h1, std::size_t w1,
                              std::size_t c, std::size_t h2, std::size_t w2) {
  if (h1 > h2 || w1 > w2) throw ConfigError("zero_fill: target grid smaller than source");
  if (img_lr.size() != h1 * w1 * c) throw DataError("zero_fill: image size mismatch");
  auto spec = fft::to_complex(img_lr);
  fft::forward2(spec, h1, w1, c);
  const double b = static_cast<double>(h2 * w2) / static_cast<double>(h1 * w1);
  auto hr = spectral_embed(spec, h1, w1, c, h2, w2, b);
  fft::inverse2(hr, h2, w2, c);
  return fft::real_part(hr);
}

std::vector<double> fidelity_project(std::span<const double> pred, std::size_t h2, std::size_t w2,
                                     std::span<const double> measured, std::size_t h1,
                                     std::size_t w1, std::size_t c) {
  if (pred.size() != h2 * w2 * c || measured.size() != h1 * w1 * c)
    throw DataError("data fidelity: image sizes do not match the declared grids");
  auto p = fft::to_complex(pred);
  fft::forward2(p, h2, w2, c);
  auto y = fft::to_complex(measured);
  fft::forward2(y, h1, w1, c);
  const double a = static_cast<double>(h1 * w1) / static_cast<double>(h2 * w2);
  const auto cropped = spectral_crop(p, h2, w2, c, h1, w1, a);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= cropped[i];
  const auto update = spectral_embed(y, h1, w1, c, h2, w2, 1.0 / a);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += update[i];
  fft::inverse2(p, h2, w2, c);
  return fft::real_part(p);
}

Volume4D degrade(const Volume4D& hr, const QSubset& q, ScaleFactor s,
                 const DegradeOptions& opts) {
  if (opts.noise_sigma < 0.0) throw ConfigError("noise sigma must be >= 0");
  const std::size_t h2 = hr.height(), w2 = hr.width();
  const std::size_t h1 = s.lr_size(h2), w1 = s.lr_size(w2);
  check_lr(h1, w1);
  const Volume4D sampled = hr.select_channels(q.indices);
  const std::size_t c = sampled.channels();
  const std::array<double, 3> sp = hr.spacing();
  Volume4D out(h1, w1, hr.slices(), c,
               std::array<double, 3>{sp[0] * static_cast<double>(h2) / static_cast<double>(h1),
                sp[1] * static_cast<double>(w2) / static_cast<double>(w1), sp[2]});
  const double a = static_cast<double>(h1 * w1) / static_cast<double>(h2 * w2);
  for (std::size_t z = 0; z < hr.slices(); ++z) {
    const auto img = sampled.slice(z);
    if (opts.noise_sigma == 0.0) {
      out.set_slice(z, downsample_x(img, h2, w2, c, h1, w1));
      continue;
    }
    auto spec = fft::to_complex(img);
    fft::forward2(spec, h2, w2, c);
    auto lr = spectral_crop(spec, h2, w2, c, h1, w1, a);
    const double sigma = opts.noise_sigma * std::sqrt(static_cast<double>(h1 * w1));
    for (std::size_t i = 0; i < lr.size(); ++i) {
      const std::uint64_t key = (static_cast<std::uint64_t>(z) * lr.size() + i) * 2;
      lr[i] += fft::cplx(sigma * counter_normal(opts.seed, key),
                         sigma * counter_normal(opts.seed, key + 1));
    }
    fft::inverse2(lr, h1, w1, c);
    out.set_slice(z, fft::real_part(lr));
  }
  return out;
}

Volume4D zero_fill_volume(const Volume4D& lr, std::size_t h2, std::size_t w2) {
  const std::size_t c = lr.channels();
  const std::array<double, 3> sp = lr.spacing();
  Volume4D out(h2, w2, lr.slices(), c,
               std::array<double, 3>{sp[0] * static_cast<double>(lr.height()) / static_cast<double>(h2),
                sp[1] * static_cast<double>(lr.width()) / static_cast<double>(w2), sp[2]});
  for (std::size_t z = 0; z < lr.slices(); ++z)
    out.set_slice(z, zero_fill(lr.slice(z), lr.height(), lr.width(), c, h2, w2));
  return out;
}

Volume4D data_fidelity(const Volume4D& pred_hr, const Volume4D& i_lr, const QSubset& q,
                       ScaleFactor s) {
  if (i_lr.channels() != q.size())
    throw DataError("data fidelity: LR volume has " + std::to_string(i_lr.channels()) +
                    " channels but the subset selects " + std::to_string(q.size()));
  if (!q.indices.empty() && q.indices.back() >= pred_hr.channels())
    throw DataError("data fidelity: subset index exceeds prediction channels");
  if (pred_hr.slices() != i_lr.slices()) throw DataError("data fidelity: slice count mismatch");
  const std::size_t h2 = pred_hr.height(), w2 = pred_hr.width();
  const std::size_t h1 = i_lr.height(), w1 = i_lr.width();
  if (s.lr_size(h2) != h1 || s.lr_size(w2) != w1)
    throw DataError("data fidelity: LR grid is inconsistent with the scale factor");

  Volume4D out = pred_hr;
  const std::size_t c = q.size();
  for (std::size_t z = 0; z < pred_hr.slices(); ++z) {
    const auto sampled = pred_hr.select_channels(q.indices).slice(z);
    const auto fixed = fidelity_project(sampled, h2, w2, i_lr.slice(z), h1, w1, c);
    for (std::size_t h = 0; h < h2; ++h)
      for (std::size_t w = 0; w < w2; ++w)
        for (std::size_t k = 0; k < c; ++k) out(h, w, z, q.indices[k]) = fixed[(h * w2 + w) * c + k];
  }
  return out;
}

}  // namespace sarl::sampling
