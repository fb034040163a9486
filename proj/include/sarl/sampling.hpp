#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "sarl/core.hpp"
#include "sarl/fft.hpp"

namespace sarl::sampling {

// Sorted indices of the sampled q-space directions.
struct QSubset {
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
  std::vector<std::size_t> complement(std::size_t total) const;
};

struct ScaleFactor {
  double s = 1.0;

  explicit ScaleFactor(double value);
  // round-half-up(n / s)
  std::size_t lr_size(std::size_t n) const;
};

inline constexpr std::size_t kMinLrSize = 8;

// Greedy antipodal farthest-point selection of k directions, seeded by the
// direction closest to +z; ties go to the lower index.
QSubset select_subset(const GradientTable& table, std::size_t k);

// Minimum pairwise antipodal angle (radians) among the chosen directions.
double min_antipodal_angle(const GradientTable& table, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// Centered spectrum cropping and embedding.
//
// An LR axis of length n1 keeps the frequencies [-floor(n1/2), n1 - floor(n1/2)).
// When n1 is even and smaller than the HR length, its Nyquist bin aliases two
// HR bins (+-n1/2); it is formed as their sum / sqrt(2) and embedded back as
// value / sqrt(2) into both. With that convention crop and embed are exact
// adjoints, crop o embed is the identity, and real images stay real.

struct AxisTerm {
  std::size_t hr;
  double weight;
};
using AxisMap = std::vector<std::vector<AxisTerm>>;  // per LR index

AxisMap spectral_axis_map(std::size_t n_lr, std::size_t n_hr);

// HR spectrum (h2 x w2 x c) -> LR spectrum (h1 x w1 x c), multiplied by `scale`.
std::vector<fft::cplx> spectral_crop(std::span<const fft::cplx> hr, std::size_t h2, std::size_t w2,
                                     std::size_t c, std::size_t h1, std::size_t w1, double scale);
// LR spectrum -> HR spectrum with zeros outside the central block, times `scale`.
std::vector<fft::cplx> spectral_embed(std::span<const fft::cplx> lr, std::size_t h1,
                                      std::size_t w1, std::size_t c, std::size_t h2,
                                      std::size_t w2, double scale);

// Image stacks below are H x W x C, channels last.

std::vector<double> downsample_x(std::span<const double> img, std::size_t h2, std::size_t w2,
                                 std::size_t c, std::size_t h1, std::size_t w1);
std::vector<double> downsample_x(std::span<const double> img, std::size_t h2, std::size_t w2,
                                 std::size_t c, ScaleFactor s);

std::vector<double> zero_fill(std::span<const double> img_lr, std::size_t h1, std::size_t w1,
                              std::size_t c, std::size_t h2, std::size_t w2);

// Replace the measured part of the HR spectrum of `pred` with the spectrum of
// `measured`; afterwards downsample_x(result) == measured.
std::vector<double> fidelity_project(std::span<const double> pred, std::size_t h2, std::size_t w2,
                                     std::span<const double> measured, std::size_t h1,
                                     std::size_t w1, std::size_t c);

// ---------------------------------------------------------------------------
// Volume-level operators.

struct DegradeOptions {
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

// I_lr = D Q I_hr (+ optional complex Gaussian k-space noise).
Volume4D degrade(const Volume4D& hr, const QSubset& q, ScaleFactor s,
                 const DegradeOptions& opts = {});

Volume4D zero_fill_volume(const Volume4D& lr, std::size_t h2, std::size_t w2);

// Sampled directions of pred_hr are made consistent with i_lr; the others
// pass through untouched.
Volume4D data_fidelity(const Volume4D& pred_hr, const Volume4D& i_lr, const QSubset& q,
                       ScaleFactor s);

}  // namespace sarl::sampling
