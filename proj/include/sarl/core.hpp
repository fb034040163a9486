#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sarl/errors.hpp"

namespace sarl {

using Vec3 = Eigen::Vector3d;

// Dense H x W x Z x N stack of diffusion-weighted images. Storage is
// row-major with the direction axis fastest: ((h*W + w)*Z + z)*N + n.
class Volume4D {
 public:
  Volume4D() = default;
  Volume4D(std::size_t h, std::size_t w, std::size_t z, std::size_t n,
           std::array<double, 3> spacing = {1.0, 1.0, 1.0});
  Volume4D(std::size_t h, std::size_t w, std::size_t z, std::size_t n,
           std::vector<double> data, std::array<double, 3> spacing = {1.0, 1.0, 1.0});

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t slices() const { return z_; }
  std::size_t channels() const { return n_; }
  std::size_t size() const { return data_.size(); }
  const std::array<double, 3>& spacing() const { return spacing_; }
  void set_spacing(std::array<double, 3> s);

  std::size_t index(std::size_t h, std::size_t w, std::size_t z, std::size_t n) const {
    return ((h * w_ + w) * z_ + z) * n_ + n;
  }
  double& operator()(std::size_t h, std::size_t w, std::size_t z, std::size_t n) {
    return data_[index(h, w, z, n)];
  }
  double operator()(std::size_t h, std::size_t w, std::size_t z, std::size_t n) const {
    return data_[index(h, w, z, n)];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  bool all_finite() const;

  // One slice as an H x W x N image stack (channels last).
  std::vector<double> slice(std::size_t z) const;
  void set_slice(std::size_t z, std::span<const double> img);

  // Keep only the listed direction channels, in order.
  Volume4D select_channels(std::span<const std::size_t> channels) const;

  friend bool operator==(const Volume4D&, const Volume4D&) = default;

 private:
  std::size_t h_ = 0, w_ = 0, z_ = 0, n_ = 0;
  std::array<double, 3> spacing_{1.0, 1.0, 1.0};
  std::vector<double> data_;
};

class GradientTable {
 public:
  GradientTable() = default;
  GradientTable(std::vector<double> bvals, std::vector<Vec3> dirs);

  std::size_t size() const { return bvals_.size(); }
  const std::vector<double>& bvals() const { return bvals_; }
  const std::vector<Vec3>& dirs() const { return dirs_; }
  double bval(std::size_t i) const { return bvals_[i]; }
  const Vec3& dir(std::size_t i) const { return dirs_[i]; }

  static constexpr double kB0Threshold = 1e-6;
  bool is_b0(std::size_t i) const { return bvals_[i] <= kB0Threshold; }
  std::vector<std::size_t> b0_indices() const;
  std::vector<std::size_t> dwi_indices() const;

  GradientTable subset(std::span<const std::size_t> indices) const;

 private:
  std::vector<double> bvals_;
  std::vector<Vec3> dirs_;
};

// Pixel-center coordinates of an H2 x W2 lattice in [-1, 1]^2, row-major.
struct CoordGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::array<double, 2>> coords;

  std::size_t size() const { return coords.size(); }
  // Flattened (P x 2) row-major copy.
  std::vector<double> flat() const;
};

CoordGrid make_coord_grid(std::size_t h2, std::size_t w2);

// Continuous lattice position of a normalized coordinate along an axis of
// length n; pixel centers map to integers.
inline double coord_to_index(double c, std::size_t n) {
  return (c + 1.0) * static_cast<double>(n) / 2.0 - 0.5;
}
inline double index_to_coord(double i, std::size_t n) {
  return -1.0 + (2.0 * i + 1.0) / static_cast<double>(n);
}

struct Spherical {
  double theta;  // polar angle from +z, [0, pi]
  double phi;    // azimuth, [0, 2 pi)
};

Spherical cart_to_sph(const Vec3& v);
Vec3 sph_to_cart(const Spherical& s);

struct B0Normalized {
  Volume4D volume;
  GradientTable table;
  std::vector<double> mean_b0;  // H x W x Z, zero outside the foreground
};

// Divide every DWI channel by the voxelwise mean of the b0 channels and drop
// the b0 channels. Voxels whose mean b0 is at or below 1e-8 x the global
// mean b0 are treated as background and set to zero.
B0Normalized normalize_b0(const Volume4D& vol, const GradientTable& table);

struct SliceTriple {
  Volume4D volume;  // H x W x 3 x N
  std::size_t middle = 0;
};

std::vector<SliceTriple> extract_slice_triples(const Volume4D& vol);

}  // namespace sarl
