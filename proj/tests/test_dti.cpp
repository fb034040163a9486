#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sarl/dti.hpp"
#include "sarl/errors.hpp"
#include "sarl/phantom.hpp"

using namespace sarl;
using namespace sarl::dti;

namespace {

Eigen::Matrix3d rotation(double a, double b, double c) {
  return (Eigen::AngleAxisd(a, Vec3::UnitZ()) * Eigen::AngleAxisd(b, Vec3::UnitY()) *
          Eigen::AngleAxisd(c, Vec3::UnitX()))
      .toRotationMatrix();
}

std::vector<double> signals_for(const Eigen::Matrix3d& d, const GradientTable& t, double s0) {
  std::vector<double> s(t.size());
  for (std::size_t i = 0; i < t.size(); ++i)
    s[i] = t.is_b0(i) ? s0 : s0 * std::exp(-t.bval(i) * t.dir(i).dot(d * t.dir(i)));
  return s;
}

double max_diff(const DiffTensor& a, const Eigen::Matrix3d& b) {
  return (a.matrix() - b).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_SUITE("dti") {

TEST_CASE("tensor element layout") {
  Eigen::Matrix3d m;
  m << 1, 4, 5, 4, 2, 6, 5, 6, 3;
  const DiffTensor t = DiffTensor::from_matrix(m);
  CHECK(t.d == std::array<double, 6>{1, 2, 3, 4, 5, 6});
  CHECK(t.matrix() == m);
}

TEST_CASE("isotropic tensor is recovered") {
  const GradientTable table = phantom::repulsion_table(15, 1000.0, 1, 0);
  const TensorFitter fit(table);
  const Eigen::Matrix3d d = 0.9e-3 * Eigen::Matrix3d::Identity();
  const DiffTensor t = fit.fit(signals_for(d, table, 2.5), 2.5);
  CHECK(max_diff(t, d) < 1e-12);
  CHECK(fa(t) < 1e-9);
  CHECK(std::abs(md(t) - 0.9e-3) < 1e-12);
}

TEST_CASE("random positive-definite tensors with 90 directions") {
  const GradientTable table = phantom::repulsion_table(90, 1000.0, 1, 0);
  const TensorFitter fit(table);
  CHECK(fit.condition() < 10.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = oracle::random_vector(6, seed, 0.0, 1.0);
    const Eigen::Matrix3d rot = rotation(6.28 * r[0], 3.14 * r[1], 6.28 * r[2]);
    const Vec3 ev(0.1e-3 + 2.9e-3 * r[3], 0.1e-3 + 2.9e-3 * r[4], 0.1e-3 + 2.9e-3 * r[5]);
    const Eigen::Matrix3d d = rot * ev.asDiagonal() * rot.transpose();
    const DiffTensor t = fit.fit(signals_for(d, table, 1.0), 1.0);
    CAPTURE(seed);
    CHECK(max_diff(t, d) < 1e-10);
    Vec3 sorted = ev;
    std::sort(sorted.data(), sorted.data() + 3);
    CHECK((eigenvalues(t) - sorted).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("too few directions") {
  CHECK_THROWS_AS(TensorFitter(phantom::repulsion_table(5, 1000.0, 1, 0)), NumericalError);
  // Six coplanar directions leave the z components undetermined.
  std::vector<double> b(7, 1000.0);
  b[0] = 0.0;
  std::vector<Vec3> dirs{Vec3::Zero()};
  for (int i = 0; i < 6; ++i) dirs.emplace_back(std::cos(0.5 * i), std::sin(0.5 * i), 0.0);
  CHECK_THROWS_AS(TensorFitter(GradientTable(b, dirs)), NumericalError);
}

TEST_CASE("fractional anisotropy and mean diffusivity") {
  CHECK(fa_from_eigenvalues(Vec3(1e-3, 1e-3, 1e-3)) == 0.0);
  CHECK(std::abs(fa_from_eigenvalues(Vec3(0.0, 0.0, 1e-3)) - 1.0) < 1e-15);
  CHECK(fa_from_eigenvalues(Vec3::Zero()) == 0.0);
  // sqrt(3/2) |lambda - mean| / |lambda|
  const Vec3 l(0.2e-3, 0.5e-3, 1.7e-3);
  const double oracle_fa = std::sqrt(1.5) * (l.array() - l.mean()).matrix().norm() / l.norm();
  CHECK(std::abs(fa_from_eigenvalues(l) - oracle_fa) < 1e-14);
  // Negative eigenvalues are clamped before evaluation.
  CHECK(fa_from_eigenvalues(Vec3(-1e-4, 0.0, 1e-3)) == fa_from_eigenvalues(Vec3(0.0, 0.0, 1e-3)));
  DiffTensor t;
  t.d = {1e-3, 2e-3, 3e-3, 1e-4, 0, 0};
  CHECK(std::abs(md(t) - 2e-3) < 1e-18);
}

TEST_CASE("rotation invariance") {
  const Eigen::Matrix3d d0 = Vec3(1.7e-3, 0.3e-3, 0.2e-3).asDiagonal();
  const DiffTensor base = DiffTensor::from_matrix(d0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = oracle::random_vector(3, seed, -3.0, 3.0);
    const Eigen::Matrix3d rot = rotation(r[0], r[1], r[2]);
    const DiffTensor t = DiffTensor::from_matrix(rot * d0 * rot.transpose());
    CHECK(std::abs(fa(t) - fa(base)) < 1e-12);
    CHECK(std::abs(md(t) - md(base)) < 1e-15);
    CHECK((eigenvalues(t) - eigenvalues(base)).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("phantom truth round-trips through the volume fit") {
  const GradientTable table = phantom::repulsion_table(30, 1000.0, 1, 0);
  const phantom::Phantom p = phantom::generate(phantom::default_phantom(16, 4), table);
  const DtiMaps m = fit_volume(p.signal, table);
  double err_t = 0.0, err_fa = 0.0, err_md = 0.0;
  for (std::size_t i = 0; i < p.truth.tensors.data().size(); ++i)
    err_t = std::max(err_t, std::abs(m.tensors.data()[i] - p.truth.tensors.data()[i]));
  for (std::size_t i = 0; i < p.truth.fa.data().size(); ++i) {
    err_fa = std::max(err_fa, std::abs(m.fa.data()[i] - p.truth.fa.data()[i]));
    err_md = std::max(err_md, std::abs(m.md.data()[i] - p.truth.md.data()[i]));
    CHECK(m.qc.data()[i] == 0.0);
  }
  CHECK(err_t < 1e-12);
  CHECK(err_fa < 1e-9);
  CHECK(err_md < 1e-12);
}

TEST_CASE("clamped eigenvalues are flagged") {
  const GradientTable table = phantom::repulsion_table(15, 1000.0, 1, 0);
  const Eigen::Matrix3d d = Vec3(1e-3, 1e-3, -0.2e-3).asDiagonal();
  Volume4D vol(1, 1, 1, table.size(), signals_for(d, table, 1.0));
  const DtiMaps m = fit_volume(vol, table);
  CHECK(m.qc(0, 0, 0, 0) == 1.0);
  CHECK(std::abs(m.fa(0, 0, 0, 0) - fa_from_eigenvalues(Vec3(0.0, 1e-3, 1e-3))) < 1e-9);
  // MD is reported from the unclamped trace.
  CHECK(std::abs(m.md(0, 0, 0, 0) - 0.6e-3) < 1e-12);
}

TEST_CASE("masking") {
  const GradientTable table = phantom::repulsion_table(15, 1000.0, 1, 0);
  Volume4D vol(2, 1, 1, table.size());
  const auto s = signals_for(Eigen::Matrix3d::Identity() * 1e-3, table, 1.0);
  for (std::size_t c = 0; c < table.size(); ++c) vol(1, 0, 0, c) = s[c];
  const DtiMaps m = fit_volume(vol, table);
  CHECK(m.md(0, 0, 0, 0) == 0.0);
  CHECK(std::abs(m.md(1, 0, 0, 0) - 1e-3) < 1e-12);

  // Without b0 rows the input is taken as normalized and the mean is masked.
  const auto dwi = table.dwi_indices();
  const GradientTable t2 = table.subset(dwi);
  Volume4D v2(2, 1, 1, t2.size());
  for (std::size_t c = 0; c < t2.size(); ++c) {
    v2(0, 0, 0, c) = 1e-3;
    v2(1, 0, 0, c) = s[dwi[c]];
  }
  const DtiMaps m2 = fit_volume(v2, t2);
  CHECK(m2.md(0, 0, 0, 0) == 0.0);
  CHECK(std::abs(m2.md(1, 0, 0, 0) - 1e-3) < 1e-12);
}

}  // TEST_SUITE
