#include "sarl/sh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace sarl::sh {
namespace {

void check_order(int order) {
  if (order < 0 || order % 2 != 0 || order > kDefaultOrder)
    throw ConfigError("SH order must be even and <= 6, got " + std::to_string(order));
}

// Normalized associated Legendre values K(l,m) P_l^m(x) for m >= 0,
// Condon-Shortley phase included. Upward recurrence in l, normalization
// folded in so no factorials appear.
void legendre_normalized(int order, double x, std::vector<double>& out) {
  const int n = order + 1;
  out.assign(static_cast<std::size_t>(n * n), 0.0);
  auto at = [&](int l, int m) -> double& { return out[static_cast<std::size_t>(l * n + m)]; };
  const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
  double pmm = std::sqrt(1.0 / (4.0 * std::numbers::pi));
  for (int m = 0; m <= order; ++m) {
    if (m > 0) pmm *= -s * std::sqrt((2.0 * m + 1.0) / (2.0 * m));
    at(m, m) = pmm;
    if (m + 1 <= order) at(m + 1, m) = x * std::sqrt(2.0 * m + 3.0) * pmm;
    for (int l = m + 2; l <= order; ++l) {
      const double a = std::sqrt((4.0 * l * l - 1.0) / (static_cast<double>(l * l - m * m)));
      const double b = std::sqrt((static_cast<double>((l - 1) * (l - 1) - m * m)) /
                                 (4.0 * (l - 1) * (l - 1) - 1.0));
      at(l, m) = a * (x * at(l - 1, m) - b * at(l - 2, m));
    }
  }
}

}  // namespace

std::vector<int> degrees(int order) {
  check_order(order);
  std::vector<int> out(num_coeffs(order));
  for (int l = 0; l <= order; l += 2)
    for (int m = -l; m <= l; ++m) out[index(l, m)] = l;
  return out;
}

BasisMatrix eval_basis(std::span<const Spherical> angles, int order) {
  check_order(order);
  BasisMatrix B(static_cast<Eigen::Index>(angles.size()),
                static_cast<Eigen::Index>(num_coeffs(order)));
  std::vector<double> p;
  const int n = order + 1;
  for (std::size_t i = 0; i < angles.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    legendre_normalized(order, std::cos(angles[i].theta), p);
    for (int l = 0; l <= order; l += 2) {
      B(r, static_cast<Eigen::Index>(index(l, 0))) = p[static_cast<std::size_t>(l * n)];
      for (int m = 1; m <= l; ++m) {
        const double plm = std::numbers::sqrt2 * p[static_cast<std::size_t>(l * n + m)];
        B(r, static_cast<Eigen::Index>(index(l, m))) = plm * std::cos(m * angles[i].phi);
        B(r, static_cast<Eigen::Index>(index(l, -m))) = plm * std::sin(m * angles[i].phi);
      }
    }
  }
  return B;
}

BasisMatrix eval_basis(std::span<const Vec3> dirs, int order) {
  std::vector<Spherical> angles;
  angles.reserve(dirs.size());
  for (const auto& d : dirs) angles.push_back(cart_to_sph(d));
  return eval_basis(std::span<const Spherical>(angles), order);
}

Eigen::VectorXd synth(const Eigen::VectorXd& c, const BasisMatrix& basis) {
  if (c.size() != basis.cols()) throw DataError("synth: coefficient count does not match basis");
  return basis * c;
}

Fitter::Fitter(const BasisMatrix& basis, double lb_lambda) {
  if (lb_lambda < 0.0) throw ConfigError("Laplace-Beltrami weight must be >= 0");
  const auto ncoef = basis.cols();
  Eigen::VectorXd penalty(ncoef);
  {
    // Recover the degree of every column from the column count.
    int order = 0;
    while (static_cast<Eigen::Index>(num_coeffs(order)) < ncoef) order += 2;
    if (static_cast<Eigen::Index>(num_coeffs(order)) != ncoef)
      throw ConfigError("basis column count is not a valid even-order SH size");
    const auto deg = degrees(order);
    for (Eigen::Index j = 0; j < ncoef; ++j) {
      const double ll = deg[static_cast<std::size_t>(j)] * (deg[static_cast<std::size_t>(j)] + 1.0);
      penalty(j) = ll * ll;
    }
  }
  Eigen::MatrixXd normal = basis.transpose() * basis;
  normal.diagonal() += lb_lambda * penalty;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  condition_ = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();

  Eigen::LLT<Eigen::MatrixXd> llt(normal);
  if (llt.info() != Eigen::Success || !(condition_ < 1e12)) {
    std::ostringstream msg;
    msg << "SH fit is rank deficient: " << basis.rows() << " directions for " << ncoef
        << " coefficients, condition estimate " << condition_;
    throw NumericalError(msg.str());
  }
  solve_ = llt.solve(basis.transpose());
}

Eigen::VectorXd Fitter::fit(const Eigen::VectorXd& signal) const {
  if (signal.size() != solve_.cols()) throw DataError("fit: signal length does not match basis");
  return solve_ * signal;
}

Eigen::MatrixXd Fitter::fit_many(const Eigen::MatrixXd& signals) const {
  if (signals.rows() != solve_.cols()) throw DataError("fit: signal length does not match basis");
  return solve_ * signals;
}

Eigen::VectorXd fit(const Eigen::VectorXd& signal, const BasisMatrix& basis, double lb_lambda) {
  return Fitter(basis, lb_lambda).fit(signal);
}

Volume4D fit_volume(const Volume4D& vol, std::span<const Vec3> dirs, double lb_lambda,
                    int order) {
  if (vol.channels() != dirs.size())
    throw DataError("fit_volume: " + std::to_string(vol.channels()) + " channels but " +
                    std::to_string(dirs.size()) + " directions");
  const Fitter fitter(eval_basis(dirs, order), lb_lambda);
  const std::size_t nvox = vol.height() * vol.width() * vol.slices();
  const auto m = static_cast<Eigen::Index>(vol.channels());
  Eigen::Map<const Eigen::MatrixXd> signals(vol.data().data(), m, static_cast<Eigen::Index>(nvox));
  const Eigen::MatrixXd c = fitter.fit_many(signals);
  Volume4D out(vol.height(), vol.width(), vol.slices(), static_cast<std::size_t>(c.rows()),
               vol.spacing());
  Eigen::Map<Eigen::MatrixXd>(out.data().data(), c.rows(), c.cols()) = c;
  return out;
}

Volume4D synth_volume(const Volume4D& coeffs, std::span<const Vec3> dirs, int order) {
  const BasisMatrix B = eval_basis(dirs, order);
  if (static_cast<Eigen::Index>(coeffs.channels()) != B.cols())
    throw DataError("synth_volume: coefficient volume has " + std::to_string(coeffs.channels()) +
                    " channels, expected " + std::to_string(B.cols()));
  const std::size_t nvox = coeffs.height() * coeffs.width() * coeffs.slices();
  Eigen::Map<const Eigen::MatrixXd> c(coeffs.data().data(), B.cols(),
                                      static_cast<Eigen::Index>(nvox));
  Volume4D out(coeffs.height(), coeffs.width(), coeffs.slices(), dirs.size(), coeffs.spacing());
  Eigen::Map<Eigen::MatrixXd>(out.data().data(), B.rows(), static_cast<Eigen::Index>(nvox)) =
      B * c;
  return out;
}

}  // namespace sarl::sh
