#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ins/types.hpp"

namespace ins {

/// Rigid transform p -> R p + t. The constructor rejects rotations that are
/// not orthonormal with determinant +1 (tolerance 1e-6).
class BoneTransform {
 public:
  BoneTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  BoneTransform(const Mat3& rotation, const Vec3& translation);

  static BoneTransform identity() { return {}; }
  static BoneTransform translation_only(const Vec3& t) { return {Mat3::Identity(), t}; }
  /// Rotation about `pivot` (the pivot maps to itself).
  static BoneTransform rotation_about(const Mat3& rotation, const Point3& pivot);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Point3 apply(const Point3& p) const { return rotation_ * p + translation_; }
  BoneTransform inverse() const;
  BoneTransform compose(const BoneTransform& rhs) const;  // this ∘ rhs
  Mat4 homogeneous() const;

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

Point3 apply_transform(const BoneTransform& b, const Point3& p);

/// Intrinsic XYZ Euler angles in radians: R = Rx(a) * Ry(b) * Rz(c).
Mat3 rotation_from_euler_xyz(const Vec3& angles);
Vec3 euler_xyz_from_rotation(const Mat3& r);
Mat3 axis_angle_rotation(const Vec3& axis, Real angle);
/// Rotation angle in [0, pi].
Real rotation_angle(const Mat3& r);

/// Relative bone transforms between canonical and deformed space.
class Pose {
 public:
  Pose() = default;
  explicit Pose(std::vector<BoneTransform> bones);

  static Pose identity(std::size_t bone_count);

  std::size_t bone_count() const { return bones_.size(); }
  const BoneTransform& bone(std::size_t i) const { return bones_[i]; }
  const std::vector<BoneTransform>& bones() const { return bones_; }

 private:
  std::vector<BoneTransform> bones_;
};

bool pose_is_identity(const Pose& pose, Real tol);

using Triangle = std::array<std::uint32_t, 3>;

struct TriMesh {
  std::vector<Point3> vertices;
  std::vector<Triangle> triangles;

  bool empty() const { return triangles.empty(); }
  /// Throws DataError on out-of-range or fully degenerate triangles.
  void validate() const;
  Real surface_area() const;
  /// Signed enclosed volume; positive for outward-facing triangles.
  Real signed_volume() const;
};

struct OccupancySample {
  Point3 point;
  std::uint8_t occupancy = 0;  // exactly 0 or 1
};

struct Aabb {
  Point3 min = Point3::Zero();
  Point3 max = Point3::Zero();

  Point3 center() const { return (min + max) / 2; }
  Vec3 extent() const { return max - min; }
  Aabb scaled(Real factor) const;
  Real distance(const Point3& p) const;
  static Aabb of(const std::vector<Point3>& points);
};

/// Canonical bone segments plus the joints shared by adjacent bones. Only the
/// geometry used for correspondence seeding and canonical priors; poses arrive
/// as flat relative transforms.
struct Skeleton {
  struct Segment {
    Point3 head;
    Point3 tail;
  };
  struct Joint {
    std::size_t bone_a;
    std::size_t bone_b;
    Point3 position;
  };

  std::vector<Segment> segments;
  std::vector<Joint> joints;
  Real radius = 0;  // bounding radius around each segment

  std::size_t bone_count() const { return segments.size(); }
  Aabb bone_box(std::size_t i) const;
};

}  // namespace ins
