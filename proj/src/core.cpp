#include "sarl/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace sarl {

Volume4D::Volume4D(std::size_t h, std::size_t w, std::size_t z, std::size_t n,
                   std::array<double, 3> spacing)
    : Volume4D(h, w, z, n, std::vector<double>(h * w * z * n, 0.0), spacing) {}

Volume4D::Volume4D(std::size_t h, std::size_t w, std::size_t z, std::size_t n,
                   std::vector<double> data, std::array<double, 3> spacing)
    : h_(h), w_(w), z_(z), n_(n), data_(std::move(data)) {
  if (h == 0 || w == 0 || z == 0 || n == 0)
    throw DataError("Volume4D dimensions must be >= 1");
  if (data_.size() != h * w * z * n)
    throw DataError("Volume4D data size " + std::to_string(data_.size()) +
                    " does not match dimensions");
  set_spacing(spacing);
}

void Volume4D::set_spacing(std::array<double, 3> s) {
  for (double v : s)
    if (!(v > 0.0) || !std::isfinite(v)) throw DataError("voxel spacing must be positive");
  spacing_ = s;
}

bool Volume4D::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> Volume4D::slice(std::size_t z) const {
  std::vector<double> out(h_ * w_ * n_);
  for (std::size_t h = 0; h < h_; ++h)
    for (std::size_t w = 0; w < w_; ++w)
      for (std::size_t n = 0; n < n_; ++n) out[(h * w_ + w) * n_ + n] = (*this)(h, w, z, n);
  return out;
}

void Volume4D::set_slice(std::size_t z, std::span<const double> img) {
  if (img.size() != h_ * w_ * n_) throw DataError("slice size mismatch");
  for (std::size_t h = 0; h < h_; ++h)
    for (std::size_t w = 0; w < w_; ++w)
      for (std::size_t n = 0; n < n_; ++n) (*this)(h, w, z, n) = img[(h * w_ + w) * n_ + n];
}

Volume4D Volume4D::select_channels(std::span<const std::size_t> channels) const {
  Volume4D out(h_, w_, z_, channels.size(), spacing_);
  for (std::size_t c : channels)
    if (c >= n_) throw DataError("channel index out of range");
  for (std::size_t v = 0; v < h_ * w_ * z_; ++v)
    for (std::size_t k = 0; k < channels.size(); ++k)
      out.data_[v * channels.size() + k] = data_[v * n_ + channels[k]];
  return out;
}

GradientTable::GradientTable(std::vector<double> bvals, std::vector<Vec3> dirs)
    : bvals_(std::move(bvals)), dirs_(std::move(dirs)) {
  if (bvals_.size() != dirs_.size())
    throw DataError("gradient table: " + std::to_string(bvals_.size()) + " b-values but " +
                    std::to_string(dirs_.size()) + " directions");
  for (std::size_t i = 0; i < bvals_.size(); ++i) {
    if (!(bvals_[i] >= 0.0) || !std::isfinite(bvals_[i]))
      throw DataError("gradient table: negative or non-finite b-value at entry " +
                      std::to_string(i));
    if (!is_b0(i) && std::abs(dirs_[i].norm() - 1.0) > 1e-9)
      throw DataError("gradient table: direction " + std::to_string(i) + " is not unit length");
  }
}

std::vector<std::size_t> GradientTable::b0_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (is_b0(i)) out.push_back(i);
  return out;
}

std::vector<std::size_t> GradientTable::dwi_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (!is_b0(i)) out.push_back(i);
  return out;
}

GradientTable GradientTable::subset(std::span<const std::size_t> indices) const {
  std::vector<double> b;
  std::vector<Vec3> d;
  for (std::size_t i : indices) {
    if (i >= size()) throw DataError("gradient table subset index out of range");
    b.push_back(bvals_[i]);
    d.push_back(dirs_[i]);
  }
  return {std::move(b), std::move(d)};
}

std::vector<double> CoordGrid::flat() const {
  std::vector<double> out;
  out.reserve(coords.size() * 2);
  for (const auto& c : coords) {
    out.push_back(c[0]);
    out.push_back(c[1]);
  }
  return out;
}

CoordGrid make_coord_grid(std::size_t h2, std::size_t w2) {
  if (h2 < 2 || w2 < 2) throw ConfigError("coordinate grid needs at least 2 x 2 points");
  CoordGrid g{h2, w2, {}};
  g.coords.reserve(h2 * w2);
  for (std::size_t i = 0; i < h2; ++i)
    for (std::size_t j = 0; j < w2; ++j)
      g.coords.push_back({index_to_coord(static_cast<double>(i), h2),
                          index_to_coord(static_cast<double>(j), w2)});
  return g;
}

Spherical cart_to_sph(const Vec3& v) {
  const double r = v.norm();
  if (r == 0.0 || !std::isfinite(r)) throw DataError("cart_to_sph: zero or non-finite vector");
  if (std::abs(r - 1.0) > 1e-9) throw DataError("cart_to_sph: vector is not unit length");
  const double theta = std::atan2(std::hypot(v.x(), v.y()), v.z());
  double phi = std::atan2(v.y(), v.x());
  if (phi < 0.0) phi += 2.0 * std::numbers::pi;
  if (phi >= 2.0 * std::numbers::pi) phi = 0.0;
  return {theta, phi};
}

Vec3 sph_to_cart(const Spherical& s) {
  const double st = std::sin(s.theta);
  return {st * std::cos(s.phi), st * std::sin(s.phi), std::cos(s.theta)};
}

B0Normalized normalize_b0(const Volume4D& vol, const GradientTable& table) {
  if (vol.channels() != table.size())
    throw DataError("normalize_b0: volume has " + std::to_string(vol.channels()) +
                    " channels, gradient table has " + std::to_string(table.size()));
  const auto b0 = table.b0_indices();
  if (b0.empty()) throw ConfigError("normalize_b0: gradient table has no b=0 entry");
  if (!vol.all_finite()) throw DataError("normalize_b0: input contains non-finite values");
  const auto dwi = table.dwi_indices();

  const std::size_t nvox = vol.height() * vol.width() * vol.slices();
  const std::size_t nch = vol.channels();
  std::vector<double> mean_b0(nvox, 0.0);
  double global = 0.0;
  const auto src = vol.data();
  for (std::size_t v = 0; v < nvox; ++v) {
    double s = 0.0;
    for (std::size_t i : b0) s += src[v * nch + i];
    mean_b0[v] = s / static_cast<double>(b0.size());
    global += mean_b0[v];
  }
  global /= static_cast<double>(nvox);
  const double eps = 1e-8 * global;

  B0Normalized out{Volume4D(vol.height(), vol.width(), vol.slices(), dwi.size(), vol.spacing()),
                   table.subset(dwi), {}};
  auto dst = out.volume.data();
  for (std::size_t v = 0; v < nvox; ++v) {
    if (mean_b0[v] <= eps) {
      mean_b0[v] = 0.0;
      continue;
    }
    for (std::size_t k = 0; k < dwi.size(); ++k)
      dst[v * dwi.size() + k] = src[v * nch + dwi[k]] / mean_b0[v];
  }
  out.mean_b0 = std::move(mean_b0);
  return out;
}

std::vector<SliceTriple> extract_slice_triples(const Volume4D& vol) {
  if (vol.slices() < 3)
    throw DataError("extract_slice_triples: need at least 3 slices, got " +
                    std::to_string(vol.slices()));
  std::vector<SliceTriple> out;
  for (std::size_t mid = 1; mid + 1 < vol.slices(); ++mid) {
    Volume4D t(vol.height(), vol.width(), 3, vol.channels(), vol.spacing());
    for (std::size_t dz = 0; dz < 3; ++dz) t.set_slice(dz, vol.slice(mid - 1 + dz));
    out.push_back({std::move(t), mid});
  }
  return out;
}

}  // namespace sarl
