#include "ins/geometry.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <string>

#include "ins/error.hpp"

namespace ins {

namespace {
constexpr Real kRotationTol = static_cast<Real>(1e-6);
}

BoneTransform::BoneTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw UsageError("bone transform has non-finite entries");
  }
  const Real ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > kRotationTol || std::abs(rotation.determinant() - 1) > kRotationTol) {
    throw UsageError("bone rotation is not a proper rotation matrix");
  }
}

BoneTransform BoneTransform::rotation_about(const Mat3& rotation, const Point3& pivot) {
  return {rotation, pivot - rotation * pivot};
}

BoneTransform BoneTransform::inverse() const {
  BoneTransform out;
  out.rotation_ = rotation_.transpose();
  out.translation_ = -(out.rotation_ * translation_);
  return out;
}

BoneTransform BoneTransform::compose(const BoneTransform& rhs) const {
  BoneTransform out;
  out.rotation_ = rotation_ * rhs.rotation_;
  out.translation_ = rotation_ * rhs.translation_ + translation_;
  return out;
}

Mat4 BoneTransform::homogeneous() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Point3 apply_transform(const BoneTransform& b, const Point3& p) { return b.apply(p); }

Mat3 rotation_from_euler_xyz(const Vec3& angles) {
  using Axis = Eigen::AngleAxis<Real>;
  return (Axis(angles.x(), Vec3::UnitX()) * Axis(angles.y(), Vec3::UnitY()) *
          Axis(angles.z(), Vec3::UnitZ()))
      .toRotationMatrix();
}

Vec3 euler_xyz_from_rotation(const Mat3& r) {
  // R = Rx(a) Ry(b) Rz(c): r(0,2) = sin(b).
  const Real sb = std::clamp(r(0, 2), Real(-1), Real(1));
  const Real b = std::asin(sb);
  Real a = 0;
  Real c = 0;
  if (std::abs(sb) < Real(1) - Real(1e-12)) {
    a = std::atan2(-r(1, 2), r(2, 2));
    c = std::atan2(-r(0, 1), r(0, 0));
  } else {
    // Gimbal lock: only a ± c is determined; put everything into a.
    a = std::atan2(r(2, 1), r(1, 1));
  }
  return {a, b, c};
}

Mat3 axis_angle_rotation(const Vec3& axis, Real angle) {
  return Eigen::AngleAxis<Real>(angle, axis.normalized()).toRotationMatrix();
}

Real rotation_angle(const Mat3& r) {
  const Real c = std::clamp((r.trace() - 1) / 2, Real(-1), Real(1));
  return std::acos(c);
}

Pose::Pose(std::vector<BoneTransform> bones) : bones_(std::move(bones)) {
  if (bones_.empty()) throw UsageError("pose needs at least one bone");
}

Pose Pose::identity(std::size_t bone_count) {
  return Pose(std::vector<BoneTransform>(bone_count));
}

bool pose_is_identity(const Pose& pose, Real tol) {
  for (const auto& b : pose.bones()) {
    if ((b.rotation() - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    if (b.translation().cwiseAbs().maxCoeff() > tol) return false;
  }
  return true;
}

void TriMesh::validate() const {
  const auto n = vertices.size();
  for (std::size_t f = 0; f < triangles.size(); ++f) {
    const auto& t = triangles[f];
    for (auto idx : t) {
      if (idx >= n) {
        throw DataError("triangle " + std::to_string(f) + " references vertex " +
                        std::to_string(idx) + " of " + std::to_string(n));
      }
    }
    if (t[0] == t[1] && t[1] == t[2]) {
      throw DataError("triangle " + std::to_string(f) + " is degenerate");
    }
  }
}

Real TriMesh::surface_area() const {
  Real area = 0;
  for (const auto& t : triangles) {
    const Vec3 e1 = vertices[t[1]] - vertices[t[0]];
    const Vec3 e2 = vertices[t[2]] - vertices[t[0]];
    area += e1.cross(e2).norm() / 2;
  }
  return area;
}

Real TriMesh::signed_volume() const {
  Real vol = 0;
  for (const auto& t : triangles) {
    vol += vertices[t[0]].dot(vertices[t[1]].cross(vertices[t[2]])) / 6;
  }
  return vol;
}

Aabb Aabb::scaled(Real factor) const {
  const Point3 c = center();
  const Vec3 half = extent() * (factor / 2);
  return {c - half, c + half};
}

Real Aabb::distance(const Point3& p) const {
  const Vec3 d = (min - p).cwiseMax(p - max).cwiseMax(Vec3::Zero());
  return d.norm();
}

Aabb Aabb::of(const std::vector<Point3>& points) {
  if (points.empty()) return {};
  Aabb box{points.front(), points.front()};
  for (const auto& p : points) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

Aabb Skeleton::bone_box(std::size_t i) const {
  const auto& s = segments.at(i);
  const Vec3 r = Vec3::Constant(radius);
  return {s.head.cwiseMin(s.tail) - r, s.head.cwiseMax(s.tail) + r};
}

}  // namespace ins
