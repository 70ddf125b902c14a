#include <doctest.h>

#include <cmath>
#include <map>

#include "ins/error.hpp"
#include "ins/meshing.hpp"
#include "test_support.hpp"

using namespace ins;
using namespace ins::meshing;

namespace {

const Aabb kBox{Point3(-1, -1, -1), Point3(1, 1, 1)};

BatchField sphere(Real r) {
  return [r](const Matrix& p) -> RowVector { return (0.5 + r - p.colwise().norm().array()).matrix(); };
}

// Every undirected edge used by exactly two triangles, in opposite directions.
bool closed_manifold(const TriMesh& m) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
  for (const auto& t : m.triangles)
    for (int e = 0; e < 3; ++e) ++directed[{t[e], t[(e + 1) % 3]}];
  for (const auto& [edge, count] : directed) {
    if (count != 1) return false;
    if (directed.count({edge.second, edge.first}) == 0) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("meshing") {
  TEST_CASE("case table covers every non-trivial configuration") {
    CHECK(case_table_nonempty_count() == 254);
  }

  TEST_CASE("sample_grid examples") {
    const auto g = sample_grid([](const Matrix& p) { return RowVector::Constant(p.cols(), 0.5); }, kBox, 4);
    CHECK(g.values.size() == 125);
    for (Real v : g.values) CHECK(v == 0.5);

    const Real r = 0.6;
    const auto ind = sample_grid(
        [r](const Matrix& p) -> RowVector {
          return (p.colwise().norm().array() < r).cast<Real>().matrix();
        },
        kBox, 8);
    for (std::size_t k = 0; k <= 8; ++k)
      for (std::size_t j = 0; j <= 8; ++j)
        for (std::size_t i = 0; i <= 8; ++i)
          CHECK(ind.at(i, j, k) == (ind.vertex(i, j, k).norm() < r ? 1.0 : 0.0));
    CHECK_THROWS_AS(sample_grid(sphere(0.5), kBox, 1), UsageError);
  }

  TEST_CASE("sphere area and volume converge") {
    const Real r = 0.7;
    const Real area = 4 * M_PI * r * r, volume = 4.0 / 3.0 * M_PI * r * r * r;
    const TriMesh m64 = marching_cubes(sample_grid(sphere(r), kBox, 64), 0.5);
    const TriMesh m128 = marching_cubes(sample_grid(sphere(r), kBox, 128), 0.5);
    CHECK_NOTHROW(m64.validate());
    const Real ea64 = std::abs(m64.surface_area() - area) / area;
    const Real ev64 = std::abs(m64.signed_volume() - volume) / volume;
    const Real ev128 = std::abs(m128.signed_volume() - volume) / volume;
    CHECK(ea64 <= 0.03);
    CHECK(ev64 <= 0.03);
    CHECK(ev128 < ev64);
    CHECK(m64.signed_volume() > 0);  // outward orientation
    CHECK(closed_manifold(m64));
  }

  TEST_CASE("vertices lie on the iso level") {
    const auto g = sample_grid(
        [](const Matrix& p) -> RowVector {
          return (p.row(0).array().sin() + p.row(1).array() * p.row(2).array() * 2).matrix();
        },
        kBox, 16);
    const TriMesh m = marching_cubes(g, 0.3);
    REQUIRE_FALSE(m.empty());
    for (const auto& v : m.vertices) CHECK(std::abs(g.interpolate(v) - 0.3) <= 1e-9);
  }

  TEST_CASE("all-inside and all-outside fields give empty meshes") {
    const auto inside = sample_grid([](const Matrix& p) { return RowVector::Constant(p.cols(), 1.0); }, kBox, 4);
    CHECK(marching_cubes(inside, 0.5).empty());
    const auto outside = sample_grid([](const Matrix& p) { return RowVector::Constant(p.cols(), 0.0); }, kBox, 4);
    CHECK(marching_cubes(outside, 0.5).vertices.empty());
  }

  TEST_CASE("half-space gives a plane at the iso level") {
    const Real c = 0.137;
    const auto g = sample_grid([c](const Matrix& p) -> RowVector { return (0.5 + c - p.row(0).array()).matrix(); },
                               kBox, 10);
    const TriMesh m = marching_cubes(g, 0.5);
    REQUIRE_FALSE(m.empty());
    for (const auto& v : m.vertices) CHECK(std::abs(v(0) - c) <= 1e-12);
    CHECK(m.surface_area() == doctest::Approx(4.0).epsilon(1e-12));
    // Normals point toward lower values (+x).
    for (const auto& t : m.triangles) {
      const Vec3 n = (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]);
      CHECK(n(0) > 0);
    }
  }

  TEST_CASE("every single-corner and random configuration is watertight in the interior") {
    nn::Rng rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
      // Random values on a 4^3 grid padded with an outside border.
      GridField g;
      g.cells = {5, 5, 5};
      g.box = kBox;
      g.values.assign(216, 0.0);
      for (std::size_t k = 1; k < 5; ++k)
        for (std::size_t j = 1; j < 5; ++j)
          for (std::size_t i = 1; i < 5; ++i) g.values[g.index(i, j, k)] = u(rng);
      const TriMesh m = marching_cubes(g, 0.5);
      CHECK_NOTHROW(m.validate());
      CHECK(closed_manifold(m));
      CHECK(m.signed_volume() >= 0);
    }
  }
}
