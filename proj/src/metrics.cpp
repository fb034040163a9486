#include "sarl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sarl/errors.hpp"

namespace sarl::metrics {
namespace {

void check_pair(std::span<const double> test, std::span<const double> ref) {
  if (test.size() != ref.size())
    throw DataError("metric inputs differ in size: " + std::to_string(test.size()) + " vs " +
                    std::to_string(ref.size()));
  if (ref.empty()) throw DataError("metric inputs are empty");
}

std::vector<double> gaussian_window() {
  std::vector<double> g(kSsimWindow);
  const double c = static_cast<double>(kSsimWindow / 2);
  double s = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - c;
    s += g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
  }
  for (double& v : g) v /= s;
  return g;
}

std::vector<double> channel(std::span<const double> stack, std::size_t hw, std::size_t c,
                            std::size_t k) {
  std::vector<double> out(hw);
  for (std::size_t i = 0; i < hw; ++i) out[i] = stack[i * c + k];
  return out;
}

}  // namespace

double psnr(std::span<const double> test, std::span<const double> ref) {
  check_pair(test, ref);
  double mse = 0.0;
  bool nonzero = false;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = test[i] - ref[i];
    mse += d * d;
    nonzero = nonzero || ref[i] != 0.0;
  }
  if (!nonzero) throw DataError("psnr: reference image is all zero");
  mse /= static_cast<double>(ref.size());
  if (mse == 0.0) return kPsnrCap;
  const double peak = *std::max_element(ref.begin(), ref.end());
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(std::span<const double> test, std::span<const double> ref, std::size_t h,
            std::size_t w) {
  check_pair(test, ref);
  if (ref.size() != h * w) throw DataError("ssim: image size does not match H x W");
  if (h < kSsimWindow || w < kSsimWindow)
    throw ConfigError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                      " is smaller than the 11x11 window");
  const auto [lo, hi] = std::minmax_element(ref.begin(), ref.end());
  double range = *hi - *lo;
  // A constant reference has no dynamic range; fall back to its magnitude.
  if (range == 0.0) range = std::abs(*hi) > 0.0 ? std::abs(*hi) : 1.0;
  const double c1 = (kSsimK1 * range) * (kSsimK1 * range);
  const double c2 = (kSsimK2 * range) * (kSsimK2 * range);
  const auto g = gaussian_window();

  double total = 0.0;
  const std::size_t nh = h - kSsimWindow + 1, nw = w - kSsimWindow + 1;
  for (std::size_t i = 0; i < nh; ++i)
    for (std::size_t j = 0; j < nw; ++j) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t a = 0; a < kSsimWindow; ++a)
        for (std::size_t b = 0; b < kSsimWindow; ++b) {
          const double wt = g[a] * g[b];
          const double x = test[(i + a) * w + j + b], y = ref[(i + a) * w + j + b];
          mx += wt * x;
          my += wt * y;
          sxx += wt * x * x;
          syy += wt * y * y;
          sxy += wt * x * y;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  return total / static_cast<double>(nh * nw);
}

double nrmse(std::span<const double> test, std::span<const double> ref) {
  check_pair(test, ref);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    num += (test[i] - ref[i]) * (test[i] - ref[i]);
    den += ref[i] * ref[i];
  }
  if (den == 0.0) throw DataError("nrmse: reference has zero norm");
  return std::sqrt(num / den);
}

MetricReport evaluate_stack(std::span<const double> test, std::span<const double> ref,
                            std::size_t h, std::size_t w, std::size_t c) {
  check_pair(test, ref);
  if (ref.size() != h * w * c) throw DataError("metrics: stack size does not match H x W x C");
  MetricReport r;
  for (std::size_t k = 0; k < c; ++k) {
    const auto t = channel(test, h * w, c, k), f = channel(ref, h * w, c, k);
    r.per_channel.push_back({0, k, psnr(t, f), ssim(t, f, h, w), nrmse(t, f)});
  }
  for (const auto& m : r.per_channel) {
    r.psnr_db += m.psnr;
    r.ssim += m.ssim;
    r.nrmse += m.nrmse;
  }
  const double n = static_cast<double>(c);
  r.psnr_db /= n;
  r.ssim /= n;
  r.nrmse /= n;
  return r;
}

MetricReport evaluate(const Volume4D& test, const Volume4D& ref) {
  if (test.height() != ref.height() || test.width() != ref.width() ||
      test.slices() != ref.slices() || test.channels() != ref.channels())
    throw DataError("metrics: volume shapes differ");
  MetricReport r;
  for (std::size_t z = 0; z < ref.slices(); ++z) {
    auto s = evaluate_stack(test.slice(z), ref.slice(z), ref.height(), ref.width(),
                            ref.channels());
    for (auto& m : s.per_channel) {
      m.slice = z;
      r.per_channel.push_back(m);
    }
  }
  for (const auto& m : r.per_channel) {
    r.psnr_db += m.psnr;
    r.ssim += m.ssim;
    r.nrmse += m.nrmse;
  }
  const double n = static_cast<double>(r.per_channel.size());
  r.psnr_db /= n;
  r.ssim /= n;
  r.nrmse /= n;
  return r;
}

}  // namespace sarl::metrics
