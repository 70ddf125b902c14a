#include <doctest.h>

#include <cmath>

#include "ins/data.hpp"
#include "ins/error.hpp"
#include "ins/skinning.hpp"
#include "test_support.hpp"

using namespace ins;
using namespace ins::skinning;

namespace {

/// Position-independent weights.
class ConstantWeights final : public BlendWeights {
 public:
  explicit ConstantWeights(Vector w) : w_(std::move(w)) {}
  std::size_t bone_count() const override { return static_cast<std::size_t>(w_.size()); }
  Matrix weights(const Matrix& points) const override { return w_.replicate(1, points.cols()); }
  Matrix weights_with_jacobians(const Matrix& points, std::vector<Matrix>& jac) const override {
    jac.assign(3, Matrix::Zero(w_.size(), points.cols()));
    return weights(points);
  }

 private:
  Vector w_;
};

SkinWeightField random_field(std::uint64_t seed, std::size_t bones = 2) {
  SkinWeightField f("w", bones, 8, 2);
  nn::Rng rng(seed);
  f.initialize(rng);
  return f;
}

Real rel(Real a, Real b) { return std::abs(a - b) / (std::max(std::abs(a), std::abs(b)) + 1e-6); }

}  // namespace

TEST_SUITE("skinning") {
  TEST_CASE("weights are convex; zero trunk is uniform; matches hand softmax") {
    const SkinWeightField f = random_field(1, 3);
    nn::Rng rng(2);
    const Matrix p = testing::random_points(rng, 200);
    const Matrix w = f.weights(p);
    CHECK((w.colwise().sum().array() - 1).abs().maxCoeff() <= 1e-12);
    CHECK(w.minCoeff() >= 0);

    const Matrix logits = f.trunk().forward(Matrix(p.col(0)));
    const auto expected = nn::softmax(std::vector<Real>(logits.data(), logits.data() + 3));
    for (int i = 0; i < 3; ++i) CHECK(w(i, 0) == doctest::Approx(expected[i]).epsilon(1e-14));

    SkinWeightField z("z", 4, 8, 1);
    z.trunk().zero_all();
    const Vector u = weights(z, Point3(0.3, 0.1, -0.2));
    for (int i = 0; i < 4; ++i) CHECK(u(i) == doctest::Approx(0.25).epsilon(1e-15));
  }

  TEST_CASE("weight Jacobian and LBS Jacobian match finite differences") {
    const SkinWeightField f = random_field(3);
    nn::Rng rng(4);
    const Pose pose = testing::random_pose(rng, 2);
    for (int k = 0; k < 10; ++k) {
      const Point3 q = testing::random_point(rng);
      Matrix jac;
      f.weights_with_jacobian(q, jac);
      const Mat3 lj = lbs_jacobian(f, q, pose);
      const Real eps = 1e-6;
      for (int a = 0; a < 3; ++a) {
        Point3 qp = q, qm = q;
        qp(a) += eps;
        qm(a) -= eps;
        const Vector dw = (weights(f, qp) - weights(f, qm)) / (2 * eps);
        CHECK((dw - jac.col(a)).cwiseAbs().maxCoeff() <= 1e-4);
        const Vec3 dl = (lbs_forward(f, qp, pose) - lbs_forward(f, qm, pose)) / (2 * eps);
        CHECK((dl - lj.col(a)).cwiseAbs().maxCoeff() <= 1e-6);
      }
    }
  }

  TEST_CASE("lbs_forward examples") {
    const SkinWeightField f = random_field(5);
    nn::Rng rng(6);
    const Matrix q = testing::random_points(rng, 50);
    CHECK((lbs_forward(f, q, Pose::identity(2)) - q).norm() == 0.0);

    ConstantWeights one(Vector::Ones(1));
    const Pose shift({BoneTransform::translation_only(Vec3(0.5, -1, 2))});
    CHECK((lbs_forward(one, Point3(1, 1, 1), shift) - Point3(1.5, 0, 3)).norm() < 1e-15);

    ConstantWeights half(Vector::Constant(2, 0.5));
    const Pose two({BoneTransform::translation_only(Vec3(1, 0, 0)),
                    BoneTransform::translation_only(Vec3(0, 1, 0))});
    CHECK((lbs_forward(half, Point3(0, 0, 0), two) - Point3(0.5, 0.5, 0)).norm() < 1e-15);
    CHECK_THROWS_AS(lbs_forward(f, Point3(0, 0, 0), Pose::identity(3)), UsageError);
  }

  TEST_CASE("Broyden: closed-form one-hot cases") {
    ConstantWeights one(Vector::Ones(1));
    const Vec3 t(0.3, -0.2, 0.7);
    BroydenOptions opt;
    opt.candidates = 1;
    const Point3 qd(0.1, 0.2, 0.3);
    auto r = broyden_solve(one, Pose({BoneTransform::translation_only(t)}), qd, opt);
    REQUIRE(r.candidates.size() == 1);
    CHECK(r.candidates[0].converged);
    CHECK(r.candidates[0].iterations <= 2);
    CHECK((r.candidates[0].point - (qd - t)).norm() < 1e-12);

    nn::Rng rng(7);
    const Mat3 rot = testing::random_rotation(rng);
    const Pose rpose({BoneTransform(rot, Vec3::Zero())});
    r = broyden_solve(one, rpose, qd, opt);
    CHECK(r.candidates[0].converged);
    CHECK((r.candidates[0].point - rot.transpose() * qd).norm() < 1e-10);

    const auto g = implicit_grad_wrt_input(one, rpose, r.candidates[0].point);
    CHECK_FALSE(g.singular);
    CHECK((g.value - rot.transpose()).norm() < 1e-12);
    const auto id = implicit_grad_wrt_input(one, Pose::identity(1), qd);
    CHECK((id.value - Mat3::Identity()).norm() == 0.0);
  }

  TEST_CASE("Broyden converged roots reproduce q_d and agree with the grid oracle") {
    data::SyntheticBody body;
    const data::AnalyticSkinWeights field(body.skeleton(), body.config().weight_temperature);
    nn::Rng rng(8);
    BroydenOptions opt;
    for (std::size_t i = 0; i < body.bone_count(); ++i) opt.bone_boxes.push_back(body.skeleton().bone_box(i));
    const Aabb box = body.canonical_box().scaled(1.6);
    const std::size_t res = 64;
    const Vec3 h = box.extent() / static_cast<Real>(res);
    Matrix grid(3, static_cast<Eigen::Index>((res + 1) * (res + 1) * (res + 1)));
    Eigen::Index col = 0;
    for (std::size_t k = 0; k <= res; ++k)
      for (std::size_t j = 0; j <= res; ++j)
        for (std::size_t i = 0; i <= res; ++i)
          grid.col(col++) = box.min + Vec3(h(0) * i, h(1) * j, h(2) * k);

    std::size_t converged_points = 0, total = 0;
    for (int pk = 0; pk < 3; ++pk) {
      const Pose pose = body.sample_pose(rng);
      const Matrix lbs_grid = lbs_forward(field, grid, pose);
      for (int n = 0; n < 4; ++n) {
        const Point3 canonical = box.center() + Vec3(0.5 * (n - 1.5) / 1.5, 0.05, -0.03);
        const Point3 qd = lbs_forward(field, canonical, pose);
        const auto r = broyden_solve(field, pose, qd, opt);
        ++total;
        if (r.converged_count() > 0) ++converged_points;
        // Oracle: grid points whose residual is below the grid's resolution.
        const RowVector res_norm = (lbs_grid.colwise() - qd).colwise().norm();
        for (const auto& c : r.candidates) {
          if (!c.converged) continue;
          CHECK(c.residual <= opt.tolerance);
          CHECK((lbs_forward(field, c.point, pose) - qd).cwiseAbs().maxCoeff() <= opt.tolerance);
          Real best = 1e9;
          for (Eigen::Index g = 0; g < grid.cols(); ++g)
            if (res_norm(g) <= 2 * h.norm()) best = std::min(best, (grid.col(g) - c.point).norm());
          CHECK(best <= 2 * h.maxCoeff());
        }
      }
    }
    CHECK(converged_points == total);
  }

  TEST_CASE("Broyden batch equals per-point solve") {
    const SkinWeightField f = random_field(9);
    nn::Rng rng(10);
    const Pose pose = testing::random_pose(rng, 2, 0.5, 0.1);
    BroydenOptions opt;
    const Matrix qd = testing::random_points(rng, 20, 0.5);
    const auto batch = broyden_solve(f, pose, qd, opt);
    for (Eigen::Index i = 0; i < qd.cols(); ++i) {
      const auto single = broyden_solve(f, pose, Point3(qd.col(i)), opt);
      for (std::size_t c = 0; c < single.candidates.size(); ++c) {
        CHECK(single.candidates[c].converged == batch[static_cast<std::size_t>(i)].candidates[c].converged);
        CHECK((single.candidates[c].point - batch[static_cast<std::size_t>(i)].candidates[c].point).norm() < 1e-12);
      }
    }
    CHECK_THROWS_AS(broyden_solve(f, pose, Point3(0, 0, 0), BroydenOptions{0}), UsageError);
  }

  TEST_CASE("implicit input gradient matches finite differences of the solver") {
    const SkinWeightField f = random_field(11);
    nn::Rng rng(12);
    const Pose pose = testing::random_pose(rng, 2, 0.8, 0.2);
    BroydenOptions opt;
    opt.tolerance = 1e-13;
    opt.max_iterations = 200;
    opt.candidates = 1;
    for (int k = 0; k < 5; ++k) {
      const Point3 qd = testing::random_point(rng, 0.5);
      const auto r = broyden_solve(f, pose, qd, opt);
      if (!r.candidates[0].converged) continue;
      const auto g = implicit_grad_wrt_input(f, pose, r.candidates[0].point);
      const Real eps = 1e-6;
      for (int a = 0; a < 3; ++a) {
        Point3 qp = qd, qm = qd;
        qp(a) += eps;
        qm(a) -= eps;
        const auto rp = broyden_solve(f, pose, qp, opt), rm = broyden_solve(f, pose, qm, opt);
        const Vec3 fd = (rp.candidates[0].point - rm.candidates[0].point) / (2 * eps);
        for (int b = 0; b < 3; ++b) CHECK(rel(fd(b), g.value(b, a)) <= 1e-3);
      }
    }
  }

  TEST_CASE("implicit parameter gradient matches finite differences") {
    SkinWeightField f = random_field(13);
    nn::Rng rng(14);
    const Pose pose = testing::random_pose(rng, 2, 0.8, 0.2);
    BroydenOptions opt;
    opt.tolerance = 1e-13;
    opt.max_iterations = 200;
    opt.candidates = 1;
    const Point3 qd = testing::random_point(rng, 0.5);
    const Vec3 up(0.3, -1.1, 0.6);
    auto root = [&] { return broyden_solve(f, pose, qd, opt).candidates[0].point; };
    const Point3 r0 = root();
    for (auto* b : f.params()) b->zero_grad();
    REQUIRE(implicit_grad_wrt_params(f, pose, r0, up));
    const Real eps = 1e-6;
    Real worst = 0;
    for (auto* b : f.params()) {
      for (std::size_t i = 0; i < b->size(); ++i) {
        const Real saved = b->values[i];
        b->values[i] = saved + eps;
        const Real fp = up.dot(root());
        b->values[i] = saved - eps;
        const Real fm = up.dot(root());
        b->values[i] = saved;
        worst = std::max(worst, rel((fp - fm) / (2 * eps), b->grads[i]));
      }
    }
    CHECK(worst <= 1e-3);

    for (auto* b : f.params()) b->zero_grad();
    implicit_grad_wrt_params(f, pose, r0, Vec3::Zero());
    for (auto* b : f.params())
      for (Real v : b->grads) CHECK(v == 0.0);
  }

  TEST_CASE("implicit gradient at identity pose uses a unit system") {
    SkinWeightField f = random_field(15);
    const Point3 q(0.2, -0.1, 0.3);
    CHECK((lbs_jacobian(f, q, Pose::identity(2)) - Mat3::Identity()).norm() == 0.0);
    const auto g = implicit_grad_wrt_input(f, Pose::identity(2), q);
    CHECK((g.value - Mat3::Identity()).norm() == 0.0);
    CHECK(g.condition == doctest::Approx(1.0));
    // At the identity pose ∂lbs/∂σ vanishes (all bones agree), so the
    // contribution is zero.
    for (auto* b : f.params()) b->zero_grad();
    implicit_grad_wrt_params(f, Pose::identity(2), q, Vec3(1, 2, 3));
    for (auto* b : f.params())
      for (Real v : b->grads) CHECK(std::abs(v) < 1e-14);
  }

  TEST_CASE("batched implicit backward equals per-point accumulation") {
    SkinWeightField a = random_field(16), b = random_field(16);
    nn::Rng rng(17);
    const Pose pose = testing::random_pose(rng, 2, 0.6, 0.1);
    const Matrix roots = testing::random_points(rng, 6, 0.5);
    const Matrix up = Matrix::Random(3, 6);
    for (auto* p : a.params()) p->zero_grad();
    for (auto* p : b.params()) p->zero_grad();
    const auto ib = implicit_backward(a, pose, roots, up);
    CHECK(ib.skipped_count == 0);
    for (Eigen::Index i = 0; i < 6; ++i) {
      implicit_grad_wrt_params(b, pose, roots.col(i), up.col(i));
      const auto g = implicit_grad_wrt_input(b, pose, roots.col(i));
      CHECK((ib.deformed_grad.col(i) - g.value.transpose() * up.col(i)).norm() < 1e-12);
    }
    for (std::size_t k = 0; k < a.params().size(); ++k)
      for (std::size_t i = 0; i < a.params()[k]->size(); ++i)
        CHECK(std::abs(a.params()[k]->grads[i] - b.params()[k]->grads[i]) < 1e-12);
  }

  TEST_CASE("near-singular systems are skipped") {
    // Two bones mirrored through the yz-plane with equal weights collapse x.
    ConstantWeights half(Vector::Constant(2, 0.5));
    Mat3 flip = Mat3::Identity();
    flip(0, 0) = -1;
    flip(1, 1) = -1;  // rotation by π about z
    const Pose pose({BoneTransform::identity(), BoneTransform(flip, Vec3::Zero())});
    const auto g = implicit_grad_wrt_input(half, pose, Point3(0.1, 0.2, 0.3));
    CHECK(g.singular);
  }
}
