#include "sarl/dti.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sarl/errors.hpp"

namespace sarl::dti {

Eigen::Matrix3d DiffTensor::matrix() const {
  Eigen::Matrix3d m;
  m << d[0], d[3], d[4], d[3], d[1], d[5], d[4], d[5], d[2];
  return m;
}

DiffTensor DiffTensor::from_matrix(const Eigen::Matrix3d& m) {
  return {{m(0, 0), m(1, 1), m(2, 2), 0.5 * (m(0, 1) + m(1, 0)), 0.5 * (m(0, 2) + m(2, 0)),
           0.5 * (m(1, 2) + m(2, 1))}};
}

Eigen::Vector3d eigenvalues(const DiffTensor& t) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(t.matrix(), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

double fa_from_eigenvalues(Eigen::Vector3d ev) {
  ev = ev.cwiseMax(0.0);
  const double norm2 = ev.squaredNorm();
  if (norm2 == 0.0) return 0.0;
  const double a = ev(0) - ev(1), b = ev(1) - ev(2), c = ev(2) - ev(0);
  return std::min(1.0, std::sqrt(0.5 * (a * a + b * b + c * c) / norm2));
}

double fa(const DiffTensor& t) { return fa_from_eigenvalues(eigenvalues(t)); }

double md(const DiffTensor& t) { return (t.d[0] + t.d[1] + t.d[2]) / 3.0; }

double signal(const DiffTensor& t, const Vec3& g, double b, double s0) {
  const double q = g.x() * g.x() * t.d[0] + g.y() * g.y() * t.d[1] + g.z() * g.z() * t.d[2] +
                   2.0 * (g.x() * g.y() * t.d[3] + g.x() * g.z() * t.d[4] + g.y() * g.z() * t.d[5]);
  return s0 * std::exp(-b * q);
}

TensorFitter::TensorFitter(const GradientTable& table) : dwi_(table.dwi_indices()) {
  const std::size_t m = dwi_.size();
  if (m < 6)
    throw NumericalError("tensor fit needs at least 6 diffusion-weighted directions, got " +
                         std::to_string(m) + " (rank-deficient design)");
  Eigen::MatrixXd a(m, 6);
  for (std::size_t r = 0; r < m; ++r) {
    const Vec3& g = table.dir(dwi_[r]);
    const double b = table.bval(dwi_[r]);
    bvals_.push_back(b);
    const auto i = static_cast<Eigen::Index>(r);
    a.row(i) << g.x() * g.x(), g.y() * g.y(), g.z() * g.z(), 2 * g.x() * g.y(), 2 * g.x() * g.z(),
        2 * g.y() * g.z();
    a.row(i) *= b;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  condition_ = sv(5) > 0.0 ? sv(0) / sv(5) : std::numeric_limits<double>::infinity();
  if (!(condition_ < kMaxCondition))
    throw NumericalError("tensor design matrix is rank-deficient (condition estimate " +
                         std::to_string(condition_) + ")");
  pinv_ = svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
}

DiffTensor TensorFitter::fit(std::span<const double> signals, double s0) const {
  Eigen::VectorXd y(static_cast<Eigen::Index>(dwi_.size()));
  const double floor = kSignalFloor * s0;
  for (std::size_t r = 0; r < dwi_.size(); ++r) {
    const double s = std::max(signals[dwi_[r]], floor);
    y(static_cast<Eigen::Index>(r)) = -std::log(s / s0);
  }
  const Eigen::VectorXd x = pinv_ * y;
  DiffTensor t;
  for (int k = 0; k < 6; ++k) t.d[static_cast<std::size_t>(k)] = x(k);
  return t;
}

DtiMaps fit_volume(const Volume4D& vol, const GradientTable& table, double mask_threshold) {
  if (vol.channels() != table.size())
    throw DataError("dti: volume has " + std::to_string(vol.channels()) +
                    " channels but the gradient table has " + std::to_string(table.size()));
  const TensorFitter fitter(table);
  const auto b0 = table.b0_indices();
  const auto dwi = table.dwi_indices();
  const std::size_t h = vol.height(), w = vol.width(), z = vol.slices(), n = vol.channels();
  DtiMaps out{Volume4D(h, w, z, 6, vol.spacing()), Volume4D(h, w, z, 1, vol.spacing()),
              Volume4D(h, w, z, 1, vol.spacing()), Volume4D(h, w, z, 1, vol.spacing())};
  std::vector<double> sig(n);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < z; ++k) {
        for (std::size_t c = 0; c < n; ++c) sig[c] = vol(i, j, k, c);
        double s0 = 1.0;
        if (!b0.empty()) {
          s0 = 0.0;
          for (std::size_t c : b0) s0 += sig[c];
          s0 /= static_cast<double>(b0.size());
          if (!(s0 > 0.0)) continue;
        } else {
          double mean = 0.0;
          for (std::size_t c : dwi) mean += sig[c];
          if (mean / static_cast<double>(dwi.size()) <= mask_threshold) continue;
        }
        const DiffTensor t = fitter.fit(sig, s0);
        for (std::size_t e = 0; e < 6; ++e) out.tensors(i, j, k, e) = t.d[e];
        const Eigen::Vector3d ev = eigenvalues(t);
        out.fa(i, j, k, 0) = fa_from_eigenvalues(ev);
        out.md(i, j, k, 0) = md(t);
        out.qc(i, j, k, 0) = ev(0) < 0.0 ? 1.0 : 0.0;
      }
  return out;
}

}  // namespace sarl::dti
