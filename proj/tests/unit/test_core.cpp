#include <doctest.h>

#include <cmath>

#include "ins/error.hpp"
#include "ins/geometry.hpp"
#include "test_support.hpp"

using namespace ins;

TEST_SUITE("core") {
  TEST_CASE("apply_transform examples") {
    const Point3 p(0.3, -0.2, 1.0);
    CHECK(apply_transform(BoneTransform::identity(), p) == p);
    CHECK(apply_transform(BoneTransform::translation_only(Vec3(1, 0, 0)), Point3::Zero()) ==
          Point3(1, 0, 0));
    const BoneTransform rz(axis_angle_rotation(Vec3::UnitZ(), M_PI / 2), Vec3::Zero());
    CHECK((apply_transform(rz, Point3(1, 0, 0)) - Point3(0, 1, 0)).norm() < 1e-15);
  }

  TEST_CASE("rigid transforms preserve distances") {
    nn::Rng rng(1);
    for (int k = 0; k < 200; ++k) {
      const BoneTransform b(testing::random_rotation(rng), testing::random_point(rng, 2));
      const Point3 p = testing::random_point(rng), q = testing::random_point(rng);
      CHECK(std::abs((b.apply(p) - b.apply(q)).norm() - (p - q).norm()) < 1e-6);
      CHECK((b.inverse().apply(b.apply(p)) - p).norm() < 1e-12);
      CHECK((b.compose(b.inverse()).apply(q) - q).norm() < 1e-12);
    }
  }

  TEST_CASE("bone transform rejects non-rotations") {
    Mat3 scale = Mat3::Identity() * 2;
    CHECK_THROWS_AS(BoneTransform(scale, Vec3::Zero()), UsageError);
    Mat3 reflect = Mat3::Identity();
    reflect(0, 0) = -1;
    CHECK_THROWS_AS(BoneTransform(reflect, Vec3::Zero()), UsageError);
    Mat3 nearly = Mat3::Identity();
    nearly(0, 1) = 1e-8;
    CHECK_NOTHROW(BoneTransform(nearly, Vec3::Zero()));
  }

  TEST_CASE("pose_is_identity examples") {
    CHECK(pose_is_identity(Pose::identity(3), 1e-9));
    Pose moved({BoneTransform::identity(), BoneTransform::translation_only(Vec3(0, 0, 0.1))});
    CHECK_FALSE(pose_is_identity(moved, 1e-9));
    Mat3 r = Mat3::Identity();
    r(0, 1) = 1e-12;
    Pose tiny({BoneTransform(r, Vec3(1e-12, 0, 0)), BoneTransform::identity()});
    CHECK(pose_is_identity(tiny, 1e-9));
    CHECK_THROWS_AS(Pose(std::vector<BoneTransform>{}), UsageError);
  }

  TEST_CASE("Euler XYZ round trip") {
    nn::Rng rng(3);
    for (int k = 0; k < 100; ++k) {
      const Vec3 a = testing::random_point(rng, 1.2);
      const Mat3 r = rotation_from_euler_xyz(a);
      CHECK((euler_xyz_from_rotation(r) - a).norm() < 1e-10);
    }
    // Intrinsic XYZ: R = Rx * Ry * Rz.
    const Vec3 a(0.1, 0.2, 0.3);
    const Mat3 expected = axis_angle_rotation(Vec3::UnitX(), 0.1) *
                          axis_angle_rotation(Vec3::UnitY(), 0.2) *
                          axis_angle_rotation(Vec3::UnitZ(), 0.3);
    CHECK((rotation_from_euler_xyz(a) - expected).norm() < 1e-14);
  }

  TEST_CASE("TriMesh validation and measures") {
    TriMesh m;
    m.vertices = {Point3(0, 0, 0), Point3(1, 0, 0), Point3(0, 1, 0), Point3(0, 0, 1)};
    m.triangles = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
    CHECK_NOTHROW(m.validate());
    CHECK(m.signed_volume() == doctest::Approx(1.0 / 6));
    CHECK(m.surface_area() == doctest::Approx(1.5 + std::sqrt(3.0) / 2));
    m.triangles.push_back({0, 1, 7});
    CHECK_THROWS_AS(m.validate(), DataError);
    m.triangles.back() = {2, 2, 2};
    CHECK_THROWS_AS(m.validate(), DataError);
  }

  TEST_CASE("Point3 finiteness") {
    CHECK(is_finite(Point3(1, 2, 3)));
    CHECK_FALSE(is_finite(Point3(1, NAN, 3)));
    CHECK_FALSE(is_finite(Point3(INFINITY, 0, 0)));
  }
}
