#pragma once

#include "ins/diffnet.hpp"
#include "ins/geometry.hpp"

namespace ins {

/// Pose-free canonical occupancy: MLP logit followed by a sigmoid. The
/// surface is the 0.5 level set; exactly 0.5 counts as outside.
class OccupancyNet {
 public:
  OccupancyNet() = default;
  OccupancyNet(const std::string& prefix, std::size_t hidden, std::size_t hidden_layers,
               Real softplus_beta = 1);

  void initialize(nn::Rng& rng) { trunk_.initialize(nn::InitScheme::kKaimingUniform, rng); }

  Real logit(const Point3& p) const;
  Real occupancy(const Point3& p) const;
  bool is_inside(const Point3& p) const { return logit(p) > 0; }

  RowVector logits(const Matrix& points) const { return trunk_.forward(points); }
  RowVector occupancies(const Matrix& points) const;

  RowVector forward(const Matrix& points, nn::DenseTape& tape) const {
    return trunk_.forward(points, tape);
  }
  /// dL/dlogits -> dL/dpoints, accumulating trunk gradients.
  Matrix backward(const nn::DenseTape& tape, const RowVector& upstream) {
    return trunk_.backward(tape, upstream);
  }
  /// ∂occupancy/∂p.
  Vec3 input_gradient(const Point3& p) const;

  nn::DenseNet& trunk() { return trunk_; }
  const nn::DenseNet& trunk() const { return trunk_; }
  std::vector<nn::ParamBlock*> params() { return trunk_.params(); }

 private:
  nn::DenseNet trunk_;
};

}  // namespace ins
