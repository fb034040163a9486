#include "sarl/phantom.hpp"

#include <cmath>
#include <string>

#include "sarl/errors.hpp"
#include "sarl/random.hpp"

namespace sarl::phantom {
namespace {

constexpr double kMaxEigenvalue = 3e-3;
constexpr double kEigenTolerance = 1e-15;

void check_tensor(const Eigen::Matrix3d& t, std::size_t region) {
  if ((t - t.transpose()).cwiseAbs().maxCoeff() > 0.0)
    throw ConfigError("region " + std::to_string(region) + ": tensor is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(t, Eigen::EigenvaluesOnly);
  const auto ev = es.eigenvalues();
  if (ev(0) < -kEigenTolerance || ev(2) > kMaxEigenvalue + kEigenTolerance)
    throw ConfigError("region " + std::to_string(region) +
                      ": tensor eigenvalues must lie in [0, 3e-3] mm^2/s (got " +
                      std::to_string(ev(0)) + " .. " + std::to_string(ev(2)) + ")");
}

Eigen::Matrix3d principal_tensor(const Vec3& e1, double l1, double l2) {
  return l2 * Eigen::Matrix3d::Identity() + (l1 - l2) * e1 * e1.transpose();
}

}  // namespace

bool Region::contains(const Vec3& p) const {
  const Vec3 d = p - center;
  switch (shape) {
    case RegionShape::Sphere:
      return d.squaredNorm() <= size.x() * size.x();
    case RegionShape::Box:
      return std::abs(d.x()) <= size.x() && std::abs(d.y()) <= size.y() &&
             std::abs(d.z()) <= size.z();
    case RegionShape::Annulus: {
      const double r2 = d.x() * d.x() + d.y() * d.y();
      return r2 >= size.x() * size.x() && r2 <= size.y() * size.y() && std::abs(d.z()) <= size.z();
    }
  }
  return false;
}

Eigen::Matrix3d Region::tensor_at(const Vec3& p) const {
  if (!tangential) return tensor;
  const Vec3 d = p - center;
  const double r = std::hypot(d.x(), d.y());
  const Vec3 t = r > 0.0 ? Vec3(-d.y() / r, d.x() / r, 0.0) : Vec3(1.0, 0.0, 0.0);
  const Vec3 radial = r > 0.0 ? Vec3(d.x() / r, d.y() / r, 0.0) : Vec3(0.0, 1.0, 0.0);
  const Vec3 ez(0.0, 0.0, 1.0);
  return eigenvalues.x() * t * t.transpose() + eigenvalues.y() * radial * radial.transpose() +
         eigenvalues.z() * ez * ez.transpose();
}

void PhantomSpec::validate() const {
  if (h == 0 || w == 0 || z == 0) throw ConfigError("phantom grid must be non-empty");
  if (noise_sigma < 0.0) throw ConfigError("phantom noise sigma must be >= 0");
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const Region& g = regions[r];
    if (g.s0 < 0.0) throw ConfigError("region " + std::to_string(r) + ": S0 must be >= 0");
    if (g.tangential) {
      if (g.shape != RegionShape::Annulus)
        throw ConfigError("region " + std::to_string(r) + ": tangential tensors need an annulus");
      check_tensor(Eigen::Matrix3d(g.eigenvalues.asDiagonal()), r);
    } else {
      check_tensor(g.tensor, r);
    }
  }
}

Phantom generate(const PhantomSpec& spec, const GradientTable& table) {
  spec.validate();
  if (table.b0_indices().empty() || table.dwi_indices().size() < 6)
    throw ConfigError("phantom gradient table needs >= 1 b0 and >= 6 diffusion directions");
  const std::size_t h = spec.h, w = spec.w, z = spec.z, n = table.size();
  Phantom out{Volume4D(h, w, z, n),
              {Volume4D(h, w, z, 6), Volume4D(h, w, z, 1), Volume4D(h, w, z, 1),
               Volume4D(h, w, z, 1)}};
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < z; ++k) {
        const Vec3 p(index_to_coord(static_cast<double>(i), h),
                     index_to_coord(static_cast<double>(j), w),
                     index_to_coord(static_cast<double>(k), z));
        const Region* hit = nullptr;
        for (const Region& r : spec.regions)
          if (r.contains(p)) hit = &r;
        if (hit == nullptr || hit->s0 == 0.0) continue;
        const dti::DiffTensor t = dti::DiffTensor::from_matrix(hit->tensor_at(p));
        for (std::size_t e = 0; e < 6; ++e) out.truth.tensors(i, j, k, e) = t.d[e];
        out.truth.fa(i, j, k, 0) = dti::fa(t);
        out.truth.md(i, j, k, 0) = dti::md(t);
        out.truth.s0(i, j, k, 0) = hit->s0;
        for (std::size_t c = 0; c < n; ++c)
          out.signal(i, j, k, c) =
              table.is_b0(c) ? hit->s0 : dti::signal(t, table.dir(c), table.bval(c), hit->s0);
      }
  if (spec.noise_sigma > 0.0) {
    // Rician magnitude noise; the stream is keyed by the flat voxel index.
    auto data = out.signal.data();
    for (std::size_t idx = 0; idx < data.size(); ++idx) {
      const double n1 = spec.noise_sigma * counter_normal(spec.seed, 2 * idx);
      const double n2 = spec.noise_sigma * counter_normal(spec.seed, 2 * idx + 1);
      data[idx] = std::hypot(data[idx] + n1, n2);
    }
  }
  return out;
}

PhantomSpec default_phantom(std::size_t size, std::size_t slices) {
  if (size < 16) throw ConfigError("default phantom needs size >= 16");
  PhantomSpec spec;
  spec.h = spec.w = size;
  spec.z = slices == 0 ? size : slices;
  const Vec3 stick(1.7e-3, 0.2e-3, 0.2e-3);

  Region ring;
  ring.shape = RegionShape::Annulus;
  ring.size = Vec3(0.35, 0.62, 1.0);
  ring.tangential = true;
  ring.eigenvalues = stick;
  spec.regions.push_back(ring);

  Region ball;
  ball.shape = RegionShape::Sphere;
  ball.size = Vec3(0.3, 0.0, 0.0);
  ball.tensor = 0.7e-3 * Eigen::Matrix3d::Identity();
  spec.regions.push_back(ball);

  Region slab_x;
  slab_x.shape = RegionShape::Box;
  slab_x.center = Vec3(0.0, 0.78, 0.0);
  slab_x.size = Vec3(0.9, 0.12, 1.0);
  slab_x.tensor = principal_tensor(Vec3::UnitX(), stick.x(), stick.y());
  spec.regions.push_back(slab_x);

  Region slab_y = slab_x;
  slab_y.center = Vec3(0.78, 0.0, 0.0);
  slab_y.size = Vec3(0.12, 0.9, 1.0);
  slab_y.tensor = principal_tensor(Vec3::UnitY(), stick.x(), stick.y());
  spec.regions.push_back(slab_y);
  return spec;
}

GradientTable repulsion_table(std::size_t n_dirs, double bval, std::size_t n_b0,
                              std::uint64_t seed) {
  if (n_dirs == 0) throw ConfigError("gradient table needs at least one direction");
  Rng rng(seed);
  std::vector<Vec3> p(n_dirs);
  for (auto& v : p) {
    do v = Vec3(rng.normal(), rng.normal(), rng.normal());
    while (v.norm() < 1e-6);
    v.normalize();
  }
  // Projected gradient descent on sum 1/|pi - pj| + 1/|pi + pj|.
  double step = 0.1 / static_cast<double>(n_dirs);
  auto energy = [&](const std::vector<Vec3>& q) {
    double e = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i)
      for (std::size_t j = i + 1; j < q.size(); ++j)
        e += 1.0 / (q[i] - q[j]).norm() + 1.0 / (q[i] + q[j]).norm();
    return e;
  };
  double e = energy(p);
  std::vector<Vec3> force(n_dirs), trial(n_dirs);
  for (int it = 0; it < 2000 && n_dirs > 1; ++it) {
    for (std::size_t i = 0; i < n_dirs; ++i) {
      Vec3 f = Vec3::Zero();
      for (std::size_t j = 0; j < n_dirs; ++j) {
        if (j == i) continue;
        const Vec3 a = p[i] - p[j], b = p[i] + p[j];
        f += a / std::pow(a.norm(), 3) + b / std::pow(b.norm(), 3);
      }
      force[i] = f - f.dot(p[i]) * p[i];
    }
    for (std::size_t i = 0; i < n_dirs; ++i) trial[i] = (p[i] + step * force[i]).normalized();
    const double et = energy(trial);
    if (et < e) {
      p.swap(trial);
      e = et;
      step *= 1.1;
    } else {
      step *= 0.5;
      if (step < 1e-12) break;
    }
  }
  // Canonical hemisphere: z >= 0 (ties broken on y, then x).
  for (auto& v : p)
    if (v.z() < 0 || (v.z() == 0 && (v.y() < 0 || (v.y() == 0 && v.x() < 0)))) v = -v;

  std::vector<double> bvals(n_b0, 0.0);
  std::vector<Vec3> dirs(n_b0, Vec3::Zero());
  for (const auto& v : p) {
    bvals.push_back(bval);
    dirs.push_back(v);
  }
  return GradientTable(std::move(bvals), std::move(dirs));
}

}  // namespace sarl::phantom
