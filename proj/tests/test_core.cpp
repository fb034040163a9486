#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "sarl/core.hpp"
#include "sarl/random.hpp"

using namespace sarl;

TEST_SUITE("core") {

TEST_CASE("volume indexing and slices") {
  Volume4D v(2, 3, 4, 5);
  CHECK(v.size() == 120);
  v(1, 2, 3, 4) = 7.0;
  CHECK(v.data()[v.size() - 1] == 7.0);
  CHECK(v.index(0, 0, 1, 0) == 5);
  const auto s = v.slice(3);
  CHECK(s.size() == 2 * 3 * 5);
  CHECK(s.back() == 7.0);
  Volume4D u(2, 3, 4, 5);
  u.set_slice(3, s);
  CHECK(u == v);
  CHECK_THROWS_AS(Volume4D(0, 1, 1, 1), DataError);
  CHECK_THROWS_AS(Volume4D(2, 2, 1, 1, std::vector<double>(3)), DataError);
}

TEST_CASE("select_channels keeps order") {
  Volume4D v(2, 2, 1, 3);
  for (std::size_t i = 0; i < v.size(); ++i) v.storage()[i] = static_cast<double>(i);
  const std::size_t ch[] = {2, 0};
  const Volume4D s = v.select_channels(ch);
  CHECK(s.channels() == 2);
  CHECK(s(1, 1, 0, 0) == v(1, 1, 0, 2));
  CHECK(s(1, 1, 0, 1) == v(1, 1, 0, 0));
}

TEST_CASE("gradient table validation and subsets") {
  GradientTable t({0.0, 1000.0, 1000.0}, {Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY()});
  CHECK(t.b0_indices() == std::vector<std::size_t>{0});
  CHECK(t.dwi_indices() == std::vector<std::size_t>{1, 2});
  const std::size_t idx[] = {2};
  CHECK(t.subset(idx).dir(0) == Vec3::UnitY());
  CHECK_THROWS_AS(GradientTable({1000.0}, {Vec3(2, 0, 0)}), DataError);
  CHECK_THROWS_AS(GradientTable({-1.0}, {Vec3::UnitX()}), DataError);
  CHECK_THROWS_AS(GradientTable({0.0, 1.0}, {Vec3::UnitX()}), DataError);
}

TEST_CASE("normalize_b0 divides by the b0 mean") {
  GradientTable t({0.0, 0.0, 1000.0}, {Vec3::Zero(), Vec3::Zero(), Vec3::UnitZ()});
  Volume4D v(3, 3, 2, 3);
  for (std::size_t i = 0; i < v.size(); i += 3) {
    v.storage()[i] = 2.0;
    v.storage()[i + 1] = 2.0;
    v.storage()[i + 2] = 1.0;
  }
  const auto n = normalize_b0(v, t);
  CHECK(n.volume.channels() == 1);
  CHECK(n.table.size() == 1);
  for (double x : n.volume.data()) CHECK(x == 0.5);

  SUBCASE("unit b0 leaves DWI unchanged") {
    Volume4D u = v;
    for (std::size_t i = 0; i < u.size(); i += 3) u.storage()[i] = u.storage()[i + 1] = 1.0;
    const auto nu = normalize_b0(u, t);
    for (double x : nu.volume.data()) CHECK(x == 1.0);
  }
  SUBCASE("multiply back reproduces the input") {
    Volume4D r(4, 4, 3, 3);
    const auto vals = oracle::random_vector(r.size(), 3, 0.5, 2.0);
    std::copy(vals.begin(), vals.end(), r.storage().begin());
    const auto nr = normalize_b0(r, t);
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t w = 0; w < 4; ++w)
        for (std::size_t z = 0; z < 3; ++z) {
          const double b0 = 0.5 * (r(h, w, z, 0) + r(h, w, z, 1));
          CHECK(std::abs(nr.volume(h, w, z, 0) * b0 - r(h, w, z, 2)) < 1e-12);
        }
  }
  SUBCASE("background voxels are zeroed") {
    Volume4D b = v;
    b(0, 0, 0, 0) = b(0, 0, 0, 1) = 0.0;
    const auto nb = normalize_b0(b, t);
    CHECK(nb.volume(0, 0, 0, 0) == 0.0);
    CHECK(nb.mean_b0[0] == 0.0);
  }
  CHECK_THROWS_AS(normalize_b0(v, t.subset(std::vector<std::size_t>{2})), DataError);
}

TEST_CASE("spherical coordinates") {
  auto s = cart_to_sph(Vec3(0, 0, 1));
  CHECK(s.theta == 0.0);
  CHECK(s.phi == 0.0);
  s = cart_to_sph(Vec3(1, 0, 0));
  CHECK(s.theta == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
  CHECK(s.phi == 0.0);
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    v.normalize();
    const auto sp = cart_to_sph(v);
    CHECK(sp.phi >= 0.0);
    CHECK(sp.phi < 2 * std::numbers::pi);
    CHECK((sph_to_cart(sp) - v).norm() < 1e-12);
  }
  CHECK_THROWS_AS(cart_to_sph(Vec3::Zero()), DataError);
}

TEST_CASE("coordinate grids use pixel centers") {
  const auto g = make_coord_grid(2, 2);
  REQUIRE(g.size() == 4);
  CHECK(g.coords[0] == std::array<double, 2>{-0.5, -0.5});
  CHECK(g.coords[1] == std::array<double, 2>{-0.5, 0.5});
  CHECK(g.coords[2] == std::array<double, 2>{0.5, -0.5});
  CHECK(g.coords[3] == std::array<double, 2>{0.5, 0.5});
  for (std::size_t h2 : {3u, 7u, 64u, 100u}) {
    const auto gg = make_coord_grid(h2, 5);
    CHECK(gg.coords[0][0] == doctest::Approx(-1.0 + 1.0 / h2).epsilon(1e-15));
  }
  const auto g64 = make_coord_grid(64, 64);
  for (std::size_t i = 0; i + 1 < 64; ++i)
    CHECK(std::abs(g64.coords[(i + 1) * 64][0] - g64.coords[i * 64][0] - 2.0 / 64) < 1e-15);
  for (std::size_t i = 0; i < 64; ++i)
    CHECK(std::abs(coord_to_index(index_to_coord(double(i), 64), 64) - double(i)) < 1e-12);
}

TEST_CASE("slice triples slide over z") {
  CHECK(extract_slice_triples(Volume4D(2, 2, 5, 1)).size() == 3);
  const auto t5 = extract_slice_triples(Volume4D(2, 2, 5, 1));
  CHECK(t5[0].middle == 1);
  CHECK(t5[2].middle == 3);
  CHECK(extract_slice_triples(Volume4D(2, 2, 3, 1)).size() == 1);
  CHECK(extract_slice_triples(Volume4D(2, 2, 77, 1)).size() == 75);
  CHECK_THROWS_AS(extract_slice_triples(Volume4D(2, 2, 2, 1)), DataError);

  Volume4D v(2, 2, 4, 1);
  for (std::size_t z = 0; z < 4; ++z) v(1, 0, z, 0) = double(z);
  const auto t = extract_slice_triples(v);
  CHECK(t[1].volume(1, 0, 0, 0) == 1.0);
  CHECK(t[1].volume(1, 0, 1, 0) == 2.0);
  CHECK(t[1].volume(1, 0, 2, 0) == 3.0);
}

}  // TEST_SUITE
