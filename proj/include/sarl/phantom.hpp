#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "sarl/core.hpp"
#include "sarl/dti.hpp"

namespace sarl::phantom {

enum class RegionShape { Sphere, Box, Annulus };

// Geometry is given in normalized voxel-center coordinates, [-1, 1] along
// every axis. Later regions override earlier ones where they overlap.
struct Region {
  RegionShape shape = RegionShape::Sphere;
  Vec3 center = Vec3::Zero();
  // Sphere: (radius, -, -). Box: half extents. Annulus (axis along z):
  // (inner radius, outer radius, half height).
  Vec3 size = Vec3::Zero();
  Eigen::Matrix3d tensor = Eigen::Matrix3d::Zero();  // mm^2/s
  // Annulus only: when set, the principal eigenvector follows the ring
  // tangent and `eigenvalues` = (along tangent, radial, z).
  bool tangential = false;
  Vec3 eigenvalues = Vec3::Zero();
  double s0 = 1.0;

  bool contains(const Vec3& p) const;
  Eigen::Matrix3d tensor_at(const Vec3& p) const;
};

struct PhantomSpec {
  std::size_t h = 0, w = 0, z = 0;
  std::vector<Region> regions;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Truth {
  Volume4D tensors;  // H x W x Z x 6 (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz)
  Volume4D fa;       // H x W x Z x 1
  Volume4D md;
  Volume4D s0;
};

struct Phantom {
  Volume4D signal;  // H x W x Z x table.size()
  Truth truth;
};

Phantom generate(const PhantomSpec& spec, const GradientTable& table);

// Sphere, ring with tangential fibres and two crossing slabs on a
// size x size x slices grid (slices = size when zero).
PhantomSpec default_phantom(std::size_t size, std::size_t slices = 0);

// `n_dirs` antipodally symmetric directions from electrostatic repulsion,
// preceded by `n_b0` b = 0 rows.
GradientTable repulsion_table(std::size_t n_dirs, double bval = 1000.0, std::size_t n_b0 = 1,
                              std::uint64_t seed = 0);

}  // namespace sarl::phantom
