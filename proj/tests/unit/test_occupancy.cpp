#include <doctest.h>

#include <cmath>

#include "ins/occupancy.hpp"
#include "test_support.hpp"

using namespace ins;

TEST_SUITE("occupancy") {
  TEST_CASE("zero trunk is 0.5 everywhere and counts as outside") {
    OccupancyNet o("o", 8, 2);
    o.trunk().zero_all();
    nn::Rng rng(1);
    for (int k = 0; k < 20; ++k) {
      const Point3 p = testing::random_point(rng, 3);
      CHECK(o.occupancy(p) == 0.5);
      CHECK_FALSE(o.is_inside(p));
    }
  }

  TEST_CASE("logit sign decides inside") {
    OccupancyNet o("o", 4, 1);
    o.trunk().zero_all();
    auto& last = o.trunk().bias(o.trunk().layer_count() - 1);
    last.values = {10};
    CHECK(o.is_inside(Point3::Zero()));
    CHECK(o.occupancy(Point3::Zero()) == doctest::Approx(1 / (1 + std::exp(-10.0))));
    last.values = {-10};
    CHECK_FALSE(o.is_inside(Point3::Zero()));
  }

  TEST_CASE("hand forward pass and open unit interval") {
    OccupancyNet o("o", 3, 1);
    nn::Rng rng(2);
    o.initialize(rng);
    const Point3 p(0.2, -0.4, 0.9);
    const auto& w0 = o.trunk().weight(0);
    const auto& b0 = o.trunk().bias(0);
    const auto& w1 = o.trunk().weight(1);
    const auto& b1 = o.trunk().bias(1);
    double logit = b1.values[0];
    for (int h = 0; h < 3; ++h) {
      double z = b0.values[h];
      for (int i = 0; i < 3; ++i) z += w0.values[h + 3 * i] * p(i);  // column-major {3, 3}
      logit += w1.values[h] * std::log1p(std::exp(z));
    }
    CHECK(o.logit(p) == doctest::Approx(logit).epsilon(1e-13));
    const RowVector occ = o.occupancies(testing::random_points(rng, 100, 5));
    CHECK(occ.minCoeff() > 0);
    CHECK(occ.maxCoeff() < 1);
  }

  TEST_CASE("input gradient matches finite differences") {
    OccupancyNet o("o", 16, 3);
    nn::Rng rng(3);
    o.initialize(rng);
    for (int k = 0; k < 10; ++k) {
      const Point3 p = testing::random_point(rng);
      const Vec3 g = o.input_gradient(p);
      const Real eps = 1e-6;
      for (int a = 0; a < 3; ++a) {
        Point3 pp = p, pm = p;
        pp(a) += eps;
        pm(a) -= eps;
        CHECK(std::abs((o.occupancy(pp) - o.occupancy(pm)) / (2 * eps) - g(a)) <= 1e-4);
      }
    }
  }

  TEST_CASE("batch and point evaluation agree") {
    OccupancyNet o("o", 16, 2);
    nn::Rng rng(4);
    o.initialize(rng);
    const Matrix p = testing::random_points(rng, 30);
    const RowVector l = o.logits(p);
    for (Eigen::Index i = 0; i < p.cols(); ++i) CHECK(l(i) == doctest::Approx(o.logit(p.col(i))).epsilon(1e-14));
  }
}
