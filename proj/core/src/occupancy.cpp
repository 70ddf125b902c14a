#include "ins/occupancy.hpp"

namespace ins {

OccupancyNet::OccupancyNet(const std::string& prefix, std::size_t hidden,
                           std::size_t hidden_layers, Real softplus_beta) {
  std::vector<std::size_t> dims{3};
  for (std::size_t i = 0; i < hidden_layers; ++i) dims.push_back(hidden);
  dims.push_back(1);
  trunk_ = nn::DenseNet(prefix, dims, nn::ActivationSpec::softplus(softplus_beta));
}

Real OccupancyNet::logit(const Point3& p) const { return trunk_.forward(Matrix(p))(0, 0); }

Real OccupancyNet::occupancy(const Point3& p) const { return nn::sigmoid(logit(p)); }

RowVector OccupancyNet::occupancies(const Matrix& points) const {
  return logits(points).unaryExpr([](Real v) { return nn::sigmoid(v); });
}

Vec3 OccupancyNet::input_gradient(const Point3& p) const {
  nn::DenseTape tape;
  const Real l = trunk_.forward(Matrix(p), tape)(0, 0);
  const Real s = nn::sigmoid(l);
  const Matrix g = trunk_.backward_input(tape, Matrix::Constant(1, 1, s * (1 - s)));
  return g.col(0);
}

}  // namespace ins
