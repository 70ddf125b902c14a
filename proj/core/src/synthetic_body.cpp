#include <algorithm>
#include <cmath>

#include "ins/data.hpp"
#include "ins/error.hpp"
#include "ins/meshing.hpp"

namespace ins::data {

namespace {

// Closest point on segment [a, b] to p and the clamped parameter.
Point3 closest_on_segment(const Point3& p, const Point3& a, const Point3& b, Real* param = nullptr) {
  const Vec3 ab = b - a;
  const Real t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), Real(0), Real(1));
  if (param) *param = t;
  return a + t * ab;
}

}  // namespace

SyntheticBody::SyntheticBody(SyntheticBodyConfig config) : config_(config) {
  if (config_.bone_count < 2) throw UsageError("synthetic body needs at least two bones");
  const Real total = config_.bone_length * static_cast<Real>(config_.bone_count);
  const Real x0 = -total / 2;
  for (std::size_t i = 0; i < config_.bone_count; ++i) {
    const Real a = x0 + config_.bone_length * static_cast<Real>(i);
    skeleton_.segments.push_back({Point3(a, 0, 0), Point3(a + config_.bone_length, 0, 0)});
  }
  for (std::size_t j = 0; j + 1 < config_.bone_count; ++j) {
    skeleton_.joints.push_back({j, j + 1, skeleton_.segments[j].tail});
  }
  skeleton_.radius = config_.radius + config_.bulge_amplitude;
}

Pose SyntheticBody::pose_from_joint_angles(const std::vector<Vec2>& angles) const {
  if (angles.size() + 1 != bone_count()) {
    throw UsageError("expected one angle pair per joint");
  }
  std::vector<BoneTransform> bones{BoneTransform::identity()};
  for (std::size_t j = 0; j < angles.size(); ++j) {
    const Mat3 local = axis_angle_rotation(Vec3::UnitZ(), angles[j].x()) *
                       axis_angle_rotation(Vec3::UnitY(), angles[j].y());
    const auto joint = BoneTransform::rotation_about(local, skeleton_.joints[j].position);
    bones.push_back(bones.back().compose(joint));
  }
  return Pose(std::move(bones));
}

Pose SyntheticBody::sample_pose(nn::Rng& rng) const {
  std::uniform_real_distribution<double> bend(-config_.bend_limit, config_.bend_limit);
  std::uniform_real_distribution<double> swing(-config_.swing_limit, config_.swing_limit);
  std::vector<Vec2> angles;
  for (std::size_t j = 0; j + 1 < bone_count(); ++j) {
    const auto b = static_cast<Real>(bend(rng));
    const auto s = static_cast<Real>(swing(rng));
    angles.emplace_back(b, s);
  }
  return pose_from_joint_angles(angles);
}

Real SyntheticBody::joint_bend(const Pose& pose, std::size_t joint) const {
  const auto& jt = skeleton_.joints.at(joint);
  const Mat3 rel = pose.bone(jt.bone_a).rotation().transpose() * pose.bone(jt.bone_b).rotation();
  return rotation_angle(rel);
}

Real SyntheticBody::bulge_amplitude(const Pose& pose, std::size_t joint) const {
  const Real frac = std::min(joint_bend(pose, joint) / config_.bulge_saturation_angle, Real(1));
  return config_.bulge_amplitude * frac;
}

Real SyntheticBody::signed_distance(const Point3& p, const Pose& pose) const {
  if (pose.bone_count() != bone_count()) throw UsageError("pose/body bone count mismatch");
  std::vector<Real> amp(skeleton_.joints.size());
  for (std::size_t j = 0; j < amp.size(); ++j) amp[j] = bulge_amplitude(pose, j);
  const Real inv_two_w2 = 1 / (2 * config_.bulge_width * config_.bulge_width);

  Real best = std::numeric_limits<Real>::infinity();
  for (std::size_t i = 0; i < bone_count(); ++i) {
    const Point3 local = pose.bone(i).inverse().apply(p);
    const auto& seg = skeleton_.segments[i];
    const Real dist = (local - closest_on_segment(local, seg.head, seg.tail)).norm();
    Real radius = config_.radius;
    const Vec3 axis = (seg.tail - seg.head).normalized();
    for (std::size_t j = 0; j < amp.size(); ++j) {
      const auto& jt = skeleton_.joints[j];
      if (jt.bone_a != i && jt.bone_b != i) continue;
      const Real along = (local - jt.position).dot(axis);
      radius += amp[j] * std::exp(-along * along * inv_two_w2);
    }
    best = std::min(best, dist - radius);
  }
  return best;
}

Aabb SyntheticBody::canonical_box() const { return posed_box(Pose::identity(bone_count())); }

Aabb SyntheticBody::posed_box(const Pose& pose) const {
  std::vector<Point3> pts;
  for (std::size_t i = 0; i < bone_count(); ++i) {
    pts.push_back(pose.bone(i).apply(skeleton_.segments[i].head));
    pts.push_back(pose.bone(i).apply(skeleton_.segments[i].tail));
  }
  Aabb box = Aabb::of(pts);
  const Vec3 margin = Vec3::Constant(config_.radius + config_.bulge_amplitude);
  box.min -= margin;
  box.max += margin;
  return box;
}

TriMesh SyntheticBody::mesh(const Pose& pose, std::size_t res) const {
  Aabb box = posed_box(pose);
  const Vec3 pad = box.extent() / static_cast<Real>(res);
  box.min -= pad;
  box.max += pad;
  const auto grid = meshing::sample_grid(
      [&](const Matrix& pts) {
        RowVector v(pts.cols());
        for (Eigen::Index c = 0; c < pts.cols(); ++c) v(c) = -signed_distance(pts.col(c), pose);
        return v;
      },
      box, res);
  return meshing::marching_cubes(grid, 0);
}

AnalyticSkinWeights::AnalyticSkinWeights(Skeleton skeleton, Real temperature)
    : skeleton_(std::move(skeleton)), temperature_(temperature) {}

Matrix AnalyticSkinWeights::weights(const Matrix& points) const {
  std::vector<Matrix> unused;
  return weights_with_jacobians(points, unused);
}

Matrix AnalyticSkinWeights::weights_with_jacobians(const Matrix& points,
                                                   std::vector<Matrix>& jacobians) const {
  const auto nb = static_cast<Eigen::Index>(bone_count());
  const auto n = points.cols();
  Matrix logits(nb, n);
  std::vector<Matrix> dlogits(3, Matrix(nb, n));
  for (Eigen::Index c = 0; c < n; ++c) {
    const Point3 q = points.col(c);
    for (Eigen::Index i = 0; i < nb; ++i) {
      const auto& seg = skeleton_.segments[static_cast<std::size_t>(i)];
      const Vec3 diff = q - closest_on_segment(q, seg.head, seg.tail);
      logits(i, c) = -diff.squaredNorm() / temperature_;
      for (int k = 0; k < 3; ++k) dlogits[static_cast<std::size_t>(k)](i, c) = -2 * diff(k) / temperature_;
    }
  }
  const Matrix w = nn::softmax_columns(logits);
  jacobians.resize(3);
  for (std::size_t k = 0; k < 3; ++k) jacobians[k] = nn::softmax_backward(w, dlogits[k]);
  return w;
}

std::vector<Frame> generate_frames(const SyntheticBody& body, std::size_t count,
                                   std::uint64_t seed, std::size_t mesh_res) {
  if (count < 1) throw UsageError("pose count must be at least 1");
  nn::Rng rng(seed);
  std::vector<Frame> frames;
  frames.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Pose pose = body.sample_pose(rng);
    frames.push_back({pose, body.mesh(pose, mesh_res)});
  }
  return frames;
}

std::vector<Point3> sample_surface(const TriMesh& mesh, std::size_t count, nn::Rng& rng) {
  std::vector<Point3> out;
  if (count == 0) return out;
  if (mesh.triangles.empty()) throw DataError("cannot sample the surface of an empty mesh");
  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0;
  for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
    const auto& t = mesh.triangles[f];
    total += static_cast<double>(
        (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]).norm());
    cumulative[f] = total;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const double r = unit(rng) * total;
    auto f = static_cast<std::size_t>(std::lower_bound(cumulative.begin(), cumulative.end(), r) -
                                      cumulative.begin());
    f = std::min(f, mesh.triangles.size() - 1);
    Real u = static_cast<Real>(unit(rng));
    Real v = static_cast<Real>(unit(rng));
    if (u + v > 1) {
      u = 1 - u;
      v = 1 - v;
    }
    const auto& t = mesh.triangles[f];
    out.push_back(mesh.vertices[t[0]] + u * (mesh.vertices[t[1]] - mesh.vertices[t[0]]) +
                  v * (mesh.vertices[t[2]] - mesh.vertices[t[0]]));
  }
  return out;
}

FrameSampleSet sample_frame(const SyntheticBody& body, const Frame& frame,
                            const SamplingOptions& options) {
  nn::Rng rng(options.seed);
  FrameSampleSet out;
  out.pose = frame.pose;
  auto surface = sample_surface(frame.mesh, options.surface_count, rng);
  std::normal_distribution<double> noise(0.0, options.noise_sigma);
  out.surface.reserve(surface.size());
  for (auto& p : surface) {
    if (options.noise_sigma > 0) {
      for (int a = 0; a < 3; ++a) p(a) += static_cast<Real>(noise(rng));
    }
    out.surface.push_back({p, static_cast<std::uint8_t>(body.occupancy(p, frame.pose))});
  }
  const Aabb box = Aabb::of(frame.mesh.vertices).scaled(options.box_scale);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  out.uniform.reserve(options.uniform_count);
  for (std::size_t i = 0; i < options.uniform_count; ++i) {
    Point3 p;
    for (int a = 0; a < 3; ++a) p(a) = box.min(a) + static_cast<Real>(unit(rng)) * (box.max(a) - box.min(a));
    out.uniform.push_back({p, static_cast<std::uint8_t>(body.occupancy(p, frame.pose))});
  }
  return out;
}

Real iou(std::span<const std::uint8_t> ground_truth, std::span<const std::uint8_t> predicted) {
  if (ground_truth.size() != predicted.size()) {
    throw UsageError("iou label lists differ in length");
  }
  if (ground_truth.empty()) throw UsageError("iou needs at least one label");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    const bool g = ground_truth[i] != 0, h = predicted[i] != 0;
    inter += g && h;
    uni += g || h;
  }
  if (uni == 0) return 100;
  return Real(100) * static_cast<Real>(inter) / static_cast<Real>(uni);
}

}  // namespace ins::data
