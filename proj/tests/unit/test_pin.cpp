#include <doctest.h>

#include <cmath>

#include "ins/error.hpp"
#include "ins/pin.hpp"
#include "test_support.hpp"

using namespace ins;
using namespace ins::pin;

namespace {

PinConfig small_config(std::size_t layers = 18) {
  PinConfig c;
  c.embedding_dim = 8;
  c.encoder_hidden = 8;
  c.space_hidden = 8;
  c.map_hidden = 8;
  c.layer_count = layers;
  return c;
}

Pin random_pin(const PinConfig& c, std::uint64_t seed, Real scale = 0.3) {
  Pin p("h", c);
  nn::Rng rng(seed);
  p.initialize(rng);
  testing::randomize_blocks(p.params(), rng, scale);
  return p;
}

}  // namespace

TEST_SUITE("pin") {
  TEST_CASE("default schedule cycles the six split patterns") {
    const auto s = default_schedule(18);
    REQUIRE(s.size() == 18);
    const SplitPattern cycle[] = {SplitPattern::kXY_Z, SplitPattern::kYZ_X, SplitPattern::kXZ_Y,
                                  SplitPattern::kZ_XY, SplitPattern::kX_YZ, SplitPattern::kY_XZ};
    for (std::size_t i = 0; i < 18; ++i) CHECK(s[i] == cycle[i % 6]);
    for (auto p : cycle) CHECK(parse_split_pattern(to_string(p)) == p);
    CHECK_THROWS_AS(parse_split_pattern("xyz"), UsageError);
  }

  TEST_CASE("embed_pose examples") {
    const Pin p = random_pin(small_config(3), 1);
    nn::Rng rng(2);
    CHECK(p.embed_pose(Pose::identity(2)).isZero(0));
    CHECK(p.embed_pose(Pose::identity(2)).size() == 8);
    const Pose a = testing::random_pose(rng, 2), b = testing::random_pose(rng, 2);
    CHECK((p.embed_pose(a) - p.embed_pose(b)).norm() > 1e-6);

    std::vector<BoneTransform> bones = a.bones();
    bones[1] = BoneTransform(testing::random_rotation(rng), Vec3(0.1, 0, 0));
    const Vector ea = p.embed_pose(a), ec = p.embed_pose(Pose(bones));
    CHECK((ea.head(4) - ec.head(4)).norm() == 0.0);
    CHECK((ea.tail(4) - ec.tail(4)).norm() > 1e-8);
  }

  TEST_CASE("conditioning examples") {
    const Vector e = Vector::Zero(3);
    const Matrix space = Matrix::Random(3, 4);
    CHECK(conditioning(e, space).isZero(0));

    const Vector e1 = Vector::Random(3);
    const Matrix c1 = conditioning(e1, space);
    const Matrix c2 = conditioning(Vector(2 * e1), space);
    CHECK((c2.topRows(3) - 2 * c1.topRows(3)).norm() == 0.0);

    for (Eigen::Index j = 0; j < 4; ++j)
      for (Eigen::Index i = 0; i < 3; ++i) {
        CHECK(c1(i, j) == e1(i) * space(i, j));
        CHECK(c1(3 + i, j) == e1(i));
      }
    CHECK_THROWS_AS(conditioning(Vector::Zero(2), space), UsageError);
  }

  TEST_CASE("coupling layer examples") {
    PinConfig c = small_config(1);
    c.identity_anchor = false;
    CouplingLayer layer("l", SplitPattern::kXY_Z, c);
    nn::Rng rng(3);
    layer.initialize(rng);
    const Vector e = Vector::Random(8);
    const Matrix p = testing::random_points(rng, 20);
    CHECK((layer.forward(p, e) - p).norm() == 0.0);
    CHECK((layer.inverse(p, e) - p).norm() == 0.0);

    // Force γ = π/2, t = 0 through the output biases.
    auto& rot = layer.rotation_map();
    rot.weight(rot.layer_count() - 1).values.assign(rot.weight(rot.layer_count() - 1).size(), 0);
    rot.bias(rot.layer_count() - 1).values = {M_PI / 2};
    const Matrix q = layer.forward(Matrix(Point3(1, 0, 5)), e);
    CHECK((q.col(0) - Point3(0, 1, 5)).norm() < 1e-15);
    const Matrix back = layer.inverse(Matrix(Point3(0, 1, 5)), e);
    CHECK((back.col(0) - Point3(1, 0, 5)).norm() < 1e-15);
  }

  TEST_CASE("anchored layers are the identity at zero embedding") {
    const PinConfig c = small_config(1);
    nn::Rng rng(5);
    for (const auto pattern : {SplitPattern::kXY_Z, SplitPattern::kX_YZ}) {
      CouplingLayer layer("l", pattern, c);
      layer.initialize(rng);
      testing::randomize_blocks(layer.params(), rng, 0.5);
      const Matrix p = testing::random_points(rng, 50);
      CHECK((layer.forward(p, Vector::Zero(8)) - p).norm() < 1e-14);
      CHECK((layer.forward(p, Vector::Random(8)) - p).norm() > 1e-3);
      CHECK(layer.input_jacobian(Point3(0.1, 0.2, 0.3), Vector::Zero(8)).isIdentity(1e-12));
    }
  }

  TEST_CASE("random coupling layers invert to 1e-12") {
    nn::Rng rng(4);
    const PinConfig c = small_config(1);
    for (auto pattern : default_schedule(6)) {
      CouplingLayer layer("l", pattern, c);
      layer.initialize(rng);
      testing::randomize_blocks(layer.params(), rng, 0.5);
      const Vector e = Vector::Random(8);
      const Matrix p = testing::random_points(rng, 1000);
      const Matrix q = layer.forward(p, e);
      CHECK((q - p).norm() > 1e-6);
      CHECK((layer.inverse(q, e) - p).cwiseAbs().maxCoeff() <= 1e-12);
      // Conditioning coordinates are untouched.
      const auto axes = split_axes(pattern);
      for (int i = 0; i < axes.conditioning_count; ++i)
        CHECK((q.row(axes.conditioning[i]) - p.row(axes.conditioning[i])).norm() == 0.0);
    }
  }

  TEST_CASE("pin forward is sequential layer application") {
    const Pin p = random_pin(small_config(), 5);
    nn::Rng rng(6);
    const Pose pose = testing::random_pose(rng, 2);
    const Matrix x = testing::random_points(rng, 30);
    const Vector e = p.embed_pose(pose);
    Matrix chained = x;
    for (std::size_t i = 0; i < p.layer_count(); ++i) chained = p.layer(i).forward(chained, e);
    CHECK((p.forward(x, pose) - chained).norm() == 0.0);

    const Pin single = random_pin(small_config(1), 7);
    const Vector e1 = single.embed_pose(pose);
    CHECK((single.forward(x, pose) - single.layer(0).forward(x, e1)).norm() == 0.0);
    CHECK((single.inverse(x, pose) - single.layer(0).inverse(x, e1)).norm() == 0.0);
  }

  TEST_CASE("identity at initialization") {
    Pin p("h", PinConfig{});
    nn::Rng rng(8);
    p.initialize(rng);
    const Matrix x = testing::random_points(rng, 1000);
    const Pose pose = testing::random_pose(rng, 2);
    CHECK((p.forward(x, pose) - x).norm() == 0.0);
    CHECK((p.inverse(x, pose) - x).norm() == 0.0);
    CHECK(p.input_jacobian(x.col(0), pose) == Mat3::Identity());
  }

  TEST_CASE("round trip over random points and poses") {
    const Pin p = random_pin(PinConfig{}, 9, 0.2);
    nn::Rng rng(10);
    Real worst = 0;
    for (int k = 0; k < 20; ++k) {
      const Pose pose = testing::random_pose(rng, 2);
      const Matrix x = testing::random_points(rng, 500);
      const Matrix y = p.forward(x, pose);
      worst = std::max(worst, (p.inverse(y, pose) - x).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-9);
  }

  TEST_CASE("Jacobian: determinant one, matches finite differences") {
    const Pin p = random_pin(small_config(), 11, 0.3);
    nn::Rng rng(12);
    for (int k = 0; k < 20; ++k) {
      const Pose pose = testing::random_pose(rng, 2);
      const Point3 x = testing::random_point(rng);
      const Mat3 j = p.input_jacobian(x, pose);
      CHECK(std::abs(j.determinant() - 1) <= 1e-10);
      Mat3 fd;
      const Real eps = 1e-6;
      for (int a = 0; a < 3; ++a) {
        Point3 xp = x, xm = x;
        xp(a) += eps;
        xm(a) -= eps;
        fd.col(a) = (p.forward(xp, pose) - p.forward(xm, pose)) / (2 * eps);
      }
      CHECK((fd - j).cwiseAbs().maxCoeff() <= 1e-5);
      CHECK(std::abs(fd.determinant() - 1) <= 1e-5);
    }
  }

  TEST_CASE("identity pose: operation parameters do not vary in space") {
    const Pin p = random_pin(small_config(6), 13, 0.5);
    nn::Rng rng(14);
    const Vector e = p.embed_pose(Pose::identity(2));
    const Matrix x = testing::random_points(rng, 100);
    for (std::size_t i = 0; i < p.layer_count(); ++i) {
      const auto ops = p.layer(i).operation_params(x, e);
      CHECK((ops.translation.colwise() - ops.translation.col(0)).cwiseAbs().maxCoeff() <= 1e-12);
      if (p.layer(i).two_dimensional())
        CHECK((ops.angle.array() - ops.angle(0)).abs().maxCoeff() <= 1e-12);
    }
    // A non-identity pose does vary.
    const auto ops = p.layer(0).operation_params(x, p.embed_pose(testing::random_pose(rng, 2)));
    CHECK((ops.translation.colwise() - ops.translation.col(0)).cwiseAbs().maxCoeff() > 1e-9);
  }

  TEST_CASE("pin backward matches finite differences") {
    Pin p = random_pin(small_config(6), 15, 0.3);
    nn::Rng rng(16);
    const Pose pose = testing::random_pose(rng, 2);
    const Matrix x = testing::random_points(rng, 4);
    const Matrix up = Matrix::Random(3, 4);
    auto f = [&] { return p.forward(x, pose).cwiseProduct(up).sum(); };
    Pin::Tape tape;
    for (auto* b : p.params()) b->zero_grad();
    p.forward(x, pose, tape);
    const Matrix gx = p.backward(tape, up);
    const Real eps = 1e-6;
    Real worst = 0;
    for (auto* b : p.params()) {
      for (std::size_t i = 0; i < b->size(); ++i) {
        const Real saved = b->values[i];
        b->values[i] = saved + eps;
        const Real fp = f();
        b->values[i] = saved - eps;
        const Real fm = f();
        b->values[i] = saved;
        const Real fd = (fp - fm) / (2 * eps);
        worst = std::max(worst, std::abs(fd - b->grads[i]) / (std::max(std::abs(fd), std::abs(b->grads[i])) + 1e-3));
      }
    }
    CHECK(worst <= 1e-4);
    for (int k = 0; k < 4; ++k) {
      const Mat3 j = p.input_jacobian(x.col(k), pose);
      CHECK((j.transpose() * up.col(k) - gx.col(k)).norm() <= 1e-10);
    }
  }

  TEST_CASE("configuration validation") {
    PinConfig c;
    c.embedding_dim = 25;
    CHECK_THROWS_AS(Pin("h", c), UsageError);
    const Pin p = random_pin(small_config(2), 17);
    CHECK_THROWS_AS(p.forward(Matrix(Matrix::Zero(3, 1)), Pose::identity(3)), UsageError);
  }
}
