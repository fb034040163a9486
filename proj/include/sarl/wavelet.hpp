#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace sarl::wavelet {

// Daubechies filter with 4 vanishing moments (8 taps), orthonormal analysis
// low-pass. The high-pass is g[k] = (-1)^k h[7-k].
const std::array<double, 8>& db4_lowpass();
std::array<double, 8> db4_highpass();

inline constexpr std::size_t kDefaultLevels = 3;

struct Band {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;  // row-major
};

struct DetailLevel {
  Band lh;  // low-pass along rows (height), high-pass along columns (width)
  Band hl;  // high-pass along height, low-pass along width
  Band hh;
};

struct Pyramid {
  Band approx;
  std::vector<DetailLevel> details;  // details[0] is the finest level

  std::size_t coefficient_count() const;
};

// Separable 2-D periodic DWT of a single H x W image.
Pyramid dwt2(std::span<const double> img, std::size_t h, std::size_t w,
             std::size_t levels = kDefaultLevels);
std::vector<double> idwt2(const Pyramid& pyr);

// Packed (Mallat) layout: the transform is written in place with the
// coarsest approximation in the top-left corner. Operates on every channel
// of an H x W x C channels-last stack. Orthonormal, so the inverse is the
// transpose.
std::vector<double> dwt2_packed(std::span<const double> stack, std::size_t h, std::size_t w,
                                std::size_t c, std::size_t levels = kDefaultLevels);
std::vector<double> idwt2_packed(std::span<const double> packed, std::size_t h, std::size_t w,
                                 std::size_t c, std::size_t levels = kDefaultLevels);

// Per-coefficient weight of the detail loss in packed layout (H x W):
// 1 / band size for detail coefficients, 0 for the approximation band.
std::vector<double> detail_weights(std::size_t h, std::size_t w,
                                   std::size_t levels = kDefaultLevels);

// Sum over levels and LH/HL/HH bands of the mean absolute difference of
// detail coefficients, averaged over channels.
double freq_loss(std::span<const double> pred, std::span<const double> ref, std::size_t h,
                 std::size_t w, std::size_t c, std::size_t levels = kDefaultLevels);

}  // namespace sarl::wavelet
