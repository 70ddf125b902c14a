#pragma once

#include <cstdint>
#include <vector>

#include "ins/diffnet.hpp"
#include "ins/geometry.hpp"

namespace ins::skinning {

/// Source of convex per-bone blend weights over canonical space.
class BlendWeights {
 public:
  virtual ~BlendWeights() = default;
  virtual std::size_t bone_count() const = 0;
  /// n_b x N weights for a 3 x N batch.
  virtual Matrix weights(const Matrix& points) const = 0;
  /// Weights at one point plus their spatial Jacobian (n_b x 3).
  virtual Vector weights_with_jacobian(const Point3& p, Matrix& jacobian) const;
  /// Batched spatial Jacobians: three n_b x N matrices, one per axis.
  virtual Matrix weights_with_jacobians(const Matrix& points,
                                        std::vector<Matrix>& jacobians) const = 0;
};

/// Learned canonical weight field: MLP logits followed by softmax.
class SkinWeightField final : public BlendWeights {
 public:
  SkinWeightField() = default;
  SkinWeightField(const std::string& prefix, std::size_t bone_count, std::size_t hidden,
                  std::size_t hidden_layers, Real softplus_beta = 1);

  void initialize(nn::Rng& rng) { trunk_.initialize(nn::InitScheme::kKaimingUniform, rng); }

  std::size_t bone_count() const override { return trunk_.output_dim(); }
  Matrix weights(const Matrix& points) const override;
  Matrix weights_with_jacobians(const Matrix& points,
                                std::vector<Matrix>& jacobians) const override;

  /// Recorded pass for training; returns weights.
  Matrix forward(const Matrix& points, nn::DenseTape& tape) const;
  /// Accumulates trunk gradients given the recorded weights and dL/dweights.
  void backward(const nn::DenseTape& tape, const Matrix& weights, const Matrix& upstream);

  nn::DenseNet& trunk() { return trunk_; }
  const nn::DenseNet& trunk() const { return trunk_; }
  std::vector<nn::ParamBlock*> params() { return trunk_.params(); }

 private:
  nn::DenseNet trunk_;
};

Vector weights(const BlendWeights& field, const Point3& q);

/// Blended transform applied to q: (Σ w_i B_i) q.
Point3 blend_transform(const Vector& w, const Point3& q, const Pose& pose);
Point3 lbs_forward(const BlendWeights& field, const Point3& q, const Pose& pose);
Matrix lbs_forward(const BlendWeights& field, const Matrix& points, const Pose& pose);
/// Analytic ∂lbs/∂q: blended rotation plus the weight-gradient term.
Mat3 lbs_jacobian(const BlendWeights& field, const Point3& q, const Pose& pose);

struct BroydenOptions {
  std::size_t candidates = 2;  // K
  Real tolerance = static_cast<Real>(1e-5);  // residual max-norm
  std::size_t max_iterations = 30;
  Real damping = 1;
  Real singular_determinant = static_cast<Real>(1e-12);
  Real restart_jitter = static_cast<Real>(1e-3);
  std::uint64_t seed = 0;
  /// Canonical per-bone boxes used to choose seeds when K < n_b.
  std::vector<Aabb> bone_boxes;
};

struct Candidate {
  Point3 point = Point3::Zero();
  bool converged = false;
  Real residual = 0;
  std::size_t iterations = 0;
  std::size_t seed_bone = 0;
  bool restarted = false;
};

struct CorrespondenceResult {
  std::vector<Candidate> candidates;

  std::size_t converged_count() const;
};

/// Bones whose rigid inverses seed the search, in rank order.
std::vector<std::size_t> seed_bones(const Pose& pose, const Point3& q_d,
                                    const BroydenOptions& options);

/// Good Broyden on lbs(q) - q_d from every seed. Non-converged candidates
/// are kept and flagged.
CorrespondenceResult broyden_solve(const BlendWeights& field, const Pose& pose,
                                   const Point3& q_d, const BroydenOptions& options);
/// Same, for a 3 x N batch of deformed points iterated in lockstep.
std::vector<CorrespondenceResult> broyden_solve(const BlendWeights& field, const Pose& pose,
                                                const Matrix& q_d,
                                                const BroydenOptions& options);

inline constexpr Real kDefaultMaxCondition = static_cast<Real>(1e8);

struct ImplicitInputGradient {
  Mat3 value = Mat3::Zero();  // ∂q_c*/∂q_d
  Real condition = 0;
  bool singular = false;
};

/// ∂q_c*/∂q_d = (∂lbs/∂q_c*)^-1 at a converged root.
ImplicitInputGradient implicit_grad_wrt_input(const BlendWeights& field, const Pose& pose,
                                              const Point3& root,
                                              Real max_condition = kDefaultMaxCondition);

/// Accumulates -upstreamᵀ (∂lbs/∂q)^-1 ∂lbs/∂σ into the field's parameter
/// gradients. Returns false (nothing accumulated) for a near-singular system.
bool implicit_grad_wrt_params(SkinWeightField& field, const Pose& pose, const Point3& root,
                              const Point3& upstream, Real max_condition = kDefaultMaxCondition);

struct ImplicitBackward {
  Matrix deformed_grad;  // 3 x N, dL/dq_d for each root
  std::vector<std::uint8_t> skipped;
  std::size_t skipped_count = 0;
};

/// Batched implicit backward through the correspondence search: given roots
/// and dL/droot, accumulates weight-field gradients and returns dL/dq_d.
/// Near-singular roots are skipped and contribute nothing.
ImplicitBackward implicit_backward(SkinWeightField& field, const Pose& pose, const Matrix& roots,
                                   const Matrix& upstream,
                                   Real max_condition = kDefaultMaxCondition);

}  // namespace ins::skinning
