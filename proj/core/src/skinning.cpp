#include "ins/skinning.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "ins/error.hpp"

namespace ins::skinning {

Vector BlendWeights::weights_with_jacobian(const Point3& p, Matrix& jacobian) const {
  std::vector<Matrix> jacs;
  const Matrix w = weights_with_jacobians(Matrix(p), jacs);
  jacobian.resize(w.rows(), 3);
  for (int k = 0; k < 3; ++k) jacobian.col(k) = jacs[static_cast<std::size_t>(k)].col(0);
  return w.col(0);
}

SkinWeightField::SkinWeightField(const std::string& prefix, std::size_t bone_count,
                                 std::size_t hidden, std::size_t hidden_layers,
                                 Real softplus_beta) {
  std::vector<std::size_t> dims{3};
  for (std::size_t i = 0; i < hidden_layers; ++i) dims.push_back(hidden);
  dims.push_back(bone_count);
  trunk_ = nn::DenseNet(prefix, dims, nn::ActivationSpec::softplus(softplus_beta));
}

Matrix SkinWeightField::weights(const Matrix& points) const {
  return nn::softmax_columns(trunk_.forward(points));
}

Matrix SkinWeightField::weights_with_jacobians(const Matrix& points,
                                               std::vector<Matrix>& jacobians) const {
  std::vector<Matrix> unit(3);
  for (int k = 0; k < 3; ++k) {
    unit[static_cast<std::size_t>(k)] = Matrix::Zero(3, points.cols());
    unit[static_cast<std::size_t>(k)].row(k).setOnes();
  }
  std::vector<Matrix> dlogits;
  const Matrix w = nn::softmax_columns(trunk_.forward_tangent(points, unit, dlogits));
  jacobians.resize(3);
  for (std::size_t k = 0; k < 3; ++k) jacobians[k] = nn::softmax_backward(w, dlogits[k]);
  return w;
}

Matrix SkinWeightField::forward(const Matrix& points, nn::DenseTape& tape) const {
  return nn::softmax_columns(trunk_.forward(points, tape));
}

void SkinWeightField::backward(const nn::DenseTape& tape, const Matrix& weights,
                               const Matrix& upstream) {
  trunk_.backward(tape, nn::softmax_backward(weights, upstream));
}

Vector weights(const BlendWeights& field, const Point3& q) {
  return field.weights(Matrix(q)).col(0);
}

namespace {

void check_bones(const BlendWeights& field, const Pose& pose) {
  if (field.bone_count() != pose.bone_count()) {
    throw UsageError("weight field has " + std::to_string(field.bone_count()) +
                     " bones but pose has " + std::to_string(pose.bone_count()));
  }
}

Mat3 blended_rotation(const Vector& w, const Pose& pose) {
  Mat3 r = Mat3::Zero();
  for (std::size_t i = 0; i < pose.bone_count(); ++i) {
    r += w(static_cast<Eigen::Index>(i)) * pose.bone(i).rotation();
  }
  return r;
}

// ∂lbs/∂q = Σ w_i R_i + Σ_i (B_i q) ⊗ ∇w_i, with jac(i, k) = ∂w_i/∂q_k.
// Evaluated in displacement form (Σ w_i = 1, Σ ∇w_i = 0) so that it is
// exactly the identity at the identity pose.
Mat3 system_matrix(const Vector& w, const Matrix& jac, const Point3& q, const Pose& pose) {
  Mat3 j = Mat3::Identity();
  for (std::size_t i = 0; i < pose.bone_count(); ++i) {
    const auto& b = pose.bone(i);
    const auto r = static_cast<Eigen::Index>(i);
    j += w(r) * (b.rotation() - Mat3::Identity());
    j += (b.apply(q) - q) * jac.row(r);
  }
  return j;
}

Real condition_number(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m);
  const auto& s = svd.singularValues();
  if (!(s(2) > 0)) return std::numeric_limits<Real>::infinity();
  return s(0) / s(2);
}

}  // namespace

// Displacement form q + Σ w_i (B_i q - q): equal to Σ w_i B_i q for convex
// weights, and exactly q at the identity pose.
Point3 blend_transform(const Vector& w, const Point3& q, const Pose& pose) {
  Point3 out = q;
  for (std::size_t i = 0; i < pose.bone_count(); ++i) {
    out += w(static_cast<Eigen::Index>(i)) * (pose.bone(i).apply(q) - q);
  }
  return out;
}

Point3 lbs_forward(const BlendWeights& field, const Point3& q, const Pose& pose) {
  check_bones(field, pose);
  return blend_transform(weights(field, q), q, pose);
}

Matrix lbs_forward(const BlendWeights& field, const Matrix& points, const Pose& pose) {
  check_bones(field, pose);
  const Matrix w = field.weights(points);
  Matrix out = points;
  for (std::size_t i = 0; i < pose.bone_count(); ++i) {
    const auto& b = pose.bone(i);
    Matrix moved = b.rotation() * points - points;
    moved.colwise() += b.translation();
    out.array() += moved.array().rowwise() * w.row(static_cast<Eigen::Index>(i)).array();
  }
  return out;
}

Mat3 lbs_jacobian(const BlendWeights& field, const Point3& q, const Pose& pose) {
  check_bones(field, pose);
  Matrix jac;
  const Vector w = field.weights_with_jacobian(q, jac);
  return system_matrix(w, jac, q, pose);
}

std::size_t CorrespondenceResult::converged_count() const {
  return static_cast<std::size_t>(std::count_if(
      candidates.begin(), candidates.end(), [](const Candidate& c) { return c.converged; }));
}

std::vector<std::size_t> seed_bones(const Pose& pose, const Point3& q_d,
                                    const BroydenOptions& options) {
  const std::size_t nb = pose.bone_count();
  std::vector<std::size_t> order(nb);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t k = std::min(std::max<std::size_t>(options.candidates, 1), nb);
  if (k < nb && options.bone_boxes.size() == nb) {
    std::vector<Real> dist(nb);
    for (std::size_t i = 0; i < nb; ++i) {
      dist[i] = options.bone_boxes[i].distance(pose.bone(i).inverse().apply(q_d));
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  }
  order.resize(k);
  return order;
}

namespace {

struct SolverState {
  std::size_t point = 0;
  std::size_t slot = 0;
  Point3 q;
  Point3 q_prev;
  Vec3 g_prev;
  Mat3 jac;
  std::size_t iterations = 0;
  bool restarted = false;
  bool has_prev = false;
};

Point3 jitter(std::uint64_t seed, std::size_t point, std::size_t slot, Real scale) {
  nn::Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * (point + 1)) ^ (0xbf58476d1ce4e5b9ULL * (slot + 1)));
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  return Point3(static_cast<Real>(dist(rng)), static_cast<Real>(dist(rng)),
                static_cast<Real>(dist(rng))) *
         scale;
}

}  // namespace

std::vector<CorrespondenceResult> broyden_solve(const BlendWeights& field, const Pose& pose,
                                                const Matrix& q_d,
                                                const BroydenOptions& options) {
  check_bones(field, pose);
  if (options.candidates < 1) throw UsageError("Broyden needs K >= 1");
  if (!(options.tolerance > 0)) throw UsageError("Broyden tolerance must be positive");
  if (q_d.rows() != 3) throw UsageError("deformed points must be 3 x N");

  const auto n = static_cast<std::size_t>(q_d.cols());
  std::vector<CorrespondenceResult> results(n);
  std::vector<SolverState> active;
  for (std::size_t p = 0; p < n; ++p) {
    const Point3 target = q_d.col(static_cast<Eigen::Index>(p));
    const auto bones = seed_bones(pose, target, options);
    results[p].candidates.resize(bones.size());
    for (std::size_t s = 0; s < bones.size(); ++s) {
      SolverState st;
      st.point = p;
      st.slot = s;
      st.q = pose.bone(bones[s]).inverse().apply(target);
      results[p].candidates[s].seed_bone = bones[s];
      active.push_back(st);
    }
  }

  while (!active.empty()) {
    Matrix qs(3, static_cast<Eigen::Index>(active.size()));
    for (std::size_t a = 0; a < active.size(); ++a) qs.col(static_cast<Eigen::Index>(a)) = active[a].q;
    const Matrix w = field.weights(qs);

    std::vector<SolverState> next;
    next.reserve(active.size());
    for (std::size_t a = 0; a < active.size(); ++a) {
      auto& st = active[a];
      const auto col = static_cast<Eigen::Index>(a);
      const Vec3 g = blend_transform(w.col(col), st.q, pose) - q_d.col(static_cast<Eigen::Index>(st.point));
      auto& cand = results[st.point].candidates[st.slot];
      cand.point = st.q;
      cand.residual = g.cwiseAbs().maxCoeff();
      cand.iterations = st.iterations;
      cand.restarted = st.restarted;
      if (!g.allFinite() || !st.q.allFinite()) {
        cand.converged = false;
        continue;
      }
      if (cand.residual <= options.tolerance) {
        cand.converged = true;
        continue;
      }
      if (st.iterations >= options.max_iterations) continue;

      if (!st.has_prev) {
        st.jac = blended_rotation(w.col(col), pose);
      } else {
        const Vec3 dq = st.q - st.q_prev;
        const Real dq2 = dq.squaredNorm();
        if (dq2 > 0) st.jac += ((g - st.g_prev) - st.jac * dq) * dq.transpose() / dq2;
      }
      const Real det = st.jac.determinant();
      if (!std::isfinite(det) || std::abs(det) < options.singular_determinant) {
        if (st.restarted) continue;  // flagged as non-converged
        const Point3 seed = pose.bone(cand.seed_bone).inverse().apply(
            q_d.col(static_cast<Eigen::Index>(st.point)));
        st = SolverState{st.point, st.slot,
                         seed + jitter(options.seed, st.point, st.slot, options.restart_jitter),
                         Point3::Zero(), Vec3::Zero(), Mat3::Identity(), 0, true, false};
        next.push_back(st);
        continue;
      }
      const Vec3 step = -st.jac.inverse() * g;
      st.q_prev = st.q;
      st.g_prev = g;
      st.has_prev = true;
      st.q += options.damping * step;
      ++st.iterations;
      next.push_back(st);
    }
    active.swap(next);
  }
  return results;
}

CorrespondenceResult broyden_solve(const BlendWeights& field, const Pose& pose,
                                   const Point3& q_d, const BroydenOptions& options) {
  return broyden_solve(field, pose, Matrix(q_d), options).front();
}

ImplicitInputGradient implicit_grad_wrt_input(const BlendWeights& field, const Pose& pose,
                                              const Point3& root, Real max_condition) {
  const Mat3 j = lbs_jacobian(field, root, pose);
  ImplicitInputGradient out;
  out.condition = condition_number(j);
  if (!(out.condition <= max_condition)) {
    out.singular = true;
    return out;
  }
  // Residual lbs(q) - q_d = 0  =>  J dq - dq_d = 0  =>  dq/dq_d = J^-1.
  out.value = j.inverse();
  return out;
}

bool implicit_grad_wrt_params(SkinWeightField& field, const Pose& pose, const Point3& root,
                              const Point3& upstream, Real max_condition) {
  const auto r = implicit_backward(field, pose, Matrix(root), Matrix(upstream), max_condition);
  return r.skipped_count == 0;
}

ImplicitBackward implicit_backward(SkinWeightField& field, const Pose& pose, const Matrix& roots,
                                   const Matrix& upstream, Real max_condition) {
  check_bones(field, pose);
  const auto n = roots.cols();
  ImplicitBackward out;
  out.deformed_grad = Matrix::Zero(3, n);
  out.skipped.assign(static_cast<std::size_t>(n), 0);
  if (n == 0) return out;

  std::vector<Matrix> jacs;
  const Matrix w = field.weights_with_jacobians(roots, jacs);
  const auto nb = static_cast<Eigen::Index>(pose.bone_count());
  Matrix weight_grad = Matrix::Zero(nb, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const Point3 q = roots.col(c);
    Matrix jw(nb, 3);
    for (int k = 0; k < 3; ++k) jw.col(k) = jacs[static_cast<std::size_t>(k)].col(c);
    const Mat3 j = system_matrix(w.col(c), jw, q, pose);
    if (!(condition_number(j) <= max_condition)) {
      out.skipped[static_cast<std::size_t>(c)] = 1;
      ++out.skipped_count;
      continue;
    }
    const Vec3 v = j.transpose().fullPivLu().solve(Vec3(upstream.col(c)));
    out.deformed_grad.col(c) = v;
    for (Eigen::Index i = 0; i < nb; ++i) {
      weight_grad(i, c) = -v.dot(pose.bone(static_cast<std::size_t>(i)).apply(q) - q);
    }
  }
  nn::DenseTape tape;
  const Matrix recorded = field.forward(roots, tape);
  field.backward(tape, recorded, weight_grad);
  return out;
}

}  // namespace ins::skinning
