#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sarl/core.hpp"

namespace sarl::sh {

// Real, antipodally symmetric spherical harmonics of even order. Column
// index for (l, m) is l(l+1)/2 + m; order 6 gives 28 columns:
//   m = 0  ->  Y_l^0
//   m > 0  ->  sqrt(2) Re Y_l^m
//   m < 0  ->  sqrt(2) Im Y_l^|m|
// with the Condon-Shortley phase kept in P_l^m.

inline constexpr int kDefaultOrder = 6;
inline constexpr std::size_t kNumCoeffs = 28;

constexpr std::size_t num_coeffs(int order) {
  return static_cast<std::size_t>((order + 1) * (order + 2) / 2);
}
constexpr std::size_t index(int l, int m) {
  return static_cast<std::size_t>(l * (l + 1) / 2 + m);
}
// Degree l of each column.
std::vector<int> degrees(int order = kDefaultOrder);

using BasisMatrix = Eigen::MatrixXd;  // M x num_coeffs(order)

BasisMatrix eval_basis(std::span<const Vec3> dirs, int order = kDefaultOrder);
BasisMatrix eval_basis(std::span<const Spherical> angles, int order = kDefaultOrder);

// s = B c
Eigen::VectorXd synth(const Eigen::VectorXd& c, const BasisMatrix& basis);

// Least-squares fit with Laplace-Beltrami penalty lambda * ||diag(l(l+1)) c||^2,
// factorized once and reused across voxels.
class Fitter {
 public:
  Fitter(const BasisMatrix& basis, double lb_lambda = 0.0);

  Eigen::VectorXd fit(const Eigen::VectorXd& signal) const;
  // signals: M x V (one column per voxel) -> coeffs: C x V
  Eigen::MatrixXd fit_many(const Eigen::MatrixXd& signals) const;

  double condition() const { return condition_; }
  const Eigen::MatrixXd& solve_matrix() const { return solve_; }

 private:
  Eigen::MatrixXd solve_;  // C x M
  double condition_ = 0.0;
};

Eigen::VectorXd fit(const Eigen::VectorXd& signal, const BasisMatrix& basis,
                    double lb_lambda = 0.0);

// Per-voxel fit of every voxel of a volume whose channels match `dirs`.
// Output volume has num_coeffs(order) channels.
Volume4D fit_volume(const Volume4D& vol, std::span<const Vec3> dirs, double lb_lambda = 0.0,
                    int order = kDefaultOrder);
// Synthesize a coefficient volume at arbitrary directions.
Volume4D synth_volume(const Volume4D& coeffs, std::span<const Vec3> dirs,
                      int order = kDefaultOrder);

}  // namespace sarl::sh
