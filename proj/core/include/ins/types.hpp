#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstddef>

namespace ins {

#ifdef INS_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Vec2 = Eigen::Matrix<Real, 2, 1>;
using Vec3 = Eigen::Matrix<Real, 3, 1>;
using Mat2 = Eigen::Matrix<Real, 2, 2>;
using Mat3 = Eigen::Matrix<Real, 3, 3>;
using Mat4 = Eigen::Matrix<Real, 4, 4>;

// Column-major batches: one sample per column.
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

using Point3 = Vec3;

inline bool is_finite(const Point3& p) { return p.allFinite(); }

}  // namespace ins
