#pragma once

#include <random>

#include "ins/diffnet.hpp"
#include "ins/geometry.hpp"
#include "ins/pipeline.hpp"

namespace ins::testing {

inline Point3 random_point(nn::Rng& rng, Real scale = 1) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return Point3(u(rng), u(rng), u(rng)) * scale;
}

inline Matrix random_points(nn::Rng& rng, std::size_t n, Real scale = 1) {
  Matrix m(3, static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < m.cols(); ++i) m.col(i) = random_point(rng, scale);
  return m;
}

inline Mat3 random_rotation(nn::Rng& rng, Real max_angle = 3.14159) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec3 axis(u(rng), u(rng), u(rng));
  if (axis.norm() < 1e-3) axis = Vec3::UnitZ();
  return axis_angle_rotation(axis.normalized(), static_cast<Real>(u(rng)) * max_angle);
}

inline Pose random_pose(nn::Rng& rng, std::size_t bones, Real max_angle = 1.0,
                        Real max_translation = 0.3) {
  std::vector<BoneTransform> b;
  for (std::size_t i = 0; i < bones; ++i)
    b.emplace_back(random_rotation(rng, max_angle), random_point(rng, max_translation));
  return Pose(std::move(b));
}

/// Overwrites every value with small uniform noise so no block is
/// structurally inactive (zeroed output layers would hide gradients).
inline void randomize_blocks(const std::vector<nn::ParamBlock*>& blocks, nn::Rng& rng,
                             Real scale) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto* b : blocks)
    for (auto& v : b->values)
      if (v == 0) v = static_cast<Real>(u(rng)) * scale;
}

}  // namespace ins::testing
