#pragma once

#include <array>
#include <cstddef>
#include <span>

#include <Eigen/Dense>

#include "sarl/core.hpp"

namespace sarl::dti {

// Unique elements (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz) in mm^2/s.
struct DiffTensor {
  std::array<double, 6> d{};

  Eigen::Matrix3d matrix() const;
  static DiffTensor from_matrix(const Eigen::Matrix3d& m);
};

// Ascending eigenvalues.
Eigen::Vector3d eigenvalues(const DiffTensor& t);
// Negative eigenvalues are clamped to zero before evaluation.
double fa(const DiffTensor& t);
double fa_from_eigenvalues(Eigen::Vector3d ev);
double md(const DiffTensor& t);

// S = s0 exp(-b g^T D g)
double signal(const DiffTensor& t, const Vec3& g, double b, double s0);

// Log-linear least-squares tensor fit; the pseudo-inverse of the design is
// computed once per gradient table.
class TensorFitter {
 public:
  static constexpr double kMaxCondition = 1e10;
  static constexpr double kSignalFloor = 1e-10;  // relative to s0

  explicit TensorFitter(const GradientTable& table);

  // `signals` has one entry per table row (b0 rows are ignored).
  DiffTensor fit(std::span<const double> signals, double s0) const;
  double condition() const { return condition_; }

 private:
  std::vector<std::size_t> dwi_;
  std::vector<double> bvals_;
  Eigen::MatrixXd pinv_;  // 6 x M
  double condition_ = 0.0;
};

struct DtiMaps {
  Volume4D tensors;  // H x W x Z x 6
  Volume4D fa;       // H x W x Z x 1
  Volume4D md;
  Volume4D qc;       // 1 where a negative eigenvalue was clamped
};

// Voxels with s0 <= 0 (or, for tables without b0 rows, whose mean signal is
// at or below `mask_threshold`) are left zero. Tables without b0 rows are
// taken as already b0-normalized (s0 = 1).
DtiMaps fit_volume(const Volume4D& vol, const GradientTable& table, double mask_threshold = 1e-2);

}  // namespace sarl::dti
