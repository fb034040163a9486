#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sarl/core.hpp"

namespace sarl::metrics {

inline constexpr double kPsnrCap = 100.0;
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

// 10 log10(max(ref)^2 / MSE), capped at kPsnrCap.
double psnr(std::span<const double> test, std::span<const double> ref);
// Mean SSIM over all fully contained 11 x 11 Gaussian windows of an H x W image.
double ssim(std::span<const double> test, std::span<const double> ref, std::size_t h,
            std::size_t w);
// ||test - ref|| / ||ref||
double nrmse(std::span<const double> test, std::span<const double> ref);

struct ChannelMetrics {
  std::size_t slice = 0;
  std::size_t channel = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double nrmse = 0.0;
};

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double nrmse = 0.0;
  std::vector<ChannelMetrics> per_channel;
};

// Mean of the 2-D metrics over every channel of an H x W x C stack.
MetricReport evaluate_stack(std::span<const double> test, std::span<const double> ref,
                            std::size_t h, std::size_t w, std::size_t c);
// Mean over every (slice, direction) image.
MetricReport evaluate(const Volume4D& test, const Volume4D& ref);

}  // namespace sarl::metrics
