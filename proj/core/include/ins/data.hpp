#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ins/diffnet.hpp"
#include "ins/geometry.hpp"
#include "ins/skinning.hpp"

namespace ins::data {

struct SyntheticBodyConfig {
  std::size_t bone_count = 2;
  Real bone_length = static_cast<Real>(0.5);
  Real radius = static_cast<Real>(0.1);
  /// Radial growth around a joint at full bend.
  Real bulge_amplitude = static_cast<Real>(0.05);
  /// Gaussian falloff (sigma) of the bulge along the bone axis.
  Real bulge_width = static_cast<Real>(0.1);
  /// Bend angle at which the bulge saturates.
  Real bulge_saturation_angle = static_cast<Real>(1.5707963267948966);
  /// Joint limits: bend about z and swing about y, radians.
  Real bend_limit = static_cast<Real>(1.5707963267948966);
  Real swing_limit = static_cast<Real>(0.5235987755982988);
  /// Temperature of the analytic distance-based skin weights.
  Real weight_temperature = static_cast<Real>(0.01);
};

/// Articulated chain of capsules along x with a pose-dependent bulge near
/// each joint. Occupancy is exact: a point is inside when its distance to
/// some posed bone segment is below the bulged radius.
class SyntheticBody {
 public:
  explicit SyntheticBody(SyntheticBodyConfig config = {});

  const SyntheticBodyConfig& config() const { return config_; }
  const Skeleton& skeleton() const { return skeleton_; }
  std::size_t bone_count() const { return skeleton_.bone_count(); }

  /// Pose from one (bend, swing) pair per joint; the root bone stays fixed.
  Pose pose_from_joint_angles(const std::vector<Vec2>& angles) const;
  Pose sample_pose(nn::Rng& rng) const;

  /// Rotation angle of joint j (between bones j and j+1).
  Real joint_bend(const Pose& pose, std::size_t joint) const;
  Real bulge_amplitude(const Pose& pose, std::size_t joint) const;

  /// Negative inside. Exact distance for capsules; the sign is exact with
  /// the bulge.
  Real signed_distance(const Point3& p, const Pose& pose) const;
  bool occupancy(const Point3& p, const Pose& pose) const { return signed_distance(p, pose) < 0; }

  Aabb canonical_box() const;
  Aabb posed_box(const Pose& pose) const;
  /// Marching-cubes mesh of the posed body at `res` cells per axis.
  TriMesh mesh(const Pose& pose, std::size_t res) const;

 private:
  SyntheticBodyConfig config_;
  Skeleton skeleton_;
};

/// Smooth ground-truth weights: softmax of -dist(q, segment_i)^2 / T.
class AnalyticSkinWeights final : public skinning::BlendWeights {
 public:
  AnalyticSkinWeights(Skeleton skeleton, Real temperature);

  std::size_t bone_count() const override { return skeleton_.bone_count(); }
  Matrix weights(const Matrix& points) const override;
  Matrix weights_with_jacobians(const Matrix& points,
                                std::vector<Matrix>& jacobians) const override;

 private:
  Skeleton skeleton_;
  Real temperature_;
};

struct Frame {
  Pose pose;
  TriMesh mesh;
};

/// Random poses within the joint limits; deterministic for a seed.
std::vector<Frame> generate_frames(const SyntheticBody& body, std::size_t count,
                                   std::uint64_t seed, std::size_t mesh_res = 64);

struct SamplingOptions {
  std::size_t surface_count = 8192;
  std::size_t uniform_count = 8192;
  Real noise_sigma = static_cast<Real>(0.01);
  Real box_scale = static_cast<Real>(1.1);
  std::uint64_t seed = 0;
};

struct FrameSampleSet {
  Pose pose;
  std::vector<OccupancySample> surface;
  std::vector<OccupancySample> uniform;
};

/// Area-weighted surface points jittered by isotropic Gaussian noise, plus
/// uniform points in the mesh box scaled about its center. Labels come from
/// the exact occupancy.
FrameSampleSet sample_frame(const SyntheticBody& body, const Frame& frame,
                            const SamplingOptions& options);

/// Area-weighted uniform points on a mesh surface.
std::vector<Point3> sample_surface(const TriMesh& mesh, std::size_t count, nn::Rng& rng);

/// Intersection over union of binary labels, in percent. Both-empty is 100.
Real iou(std::span<const std::uint8_t> ground_truth, std::span<const std::uint8_t> predicted);
/// Binarization rule for predicted probabilities: strictly greater than 0.5.
inline std::uint8_t binarize(Real probability) { return probability > Real(0.5) ? 1 : 0; }

// ---------------------------------------------------------------------------
// File formats

/// Wavefront OBJ: "v x y z" lines then "f i j k" lines (1-based), written
/// with 17 significant digits.
void save_obj(const std::string& path, const TriMesh& mesh);
TriMesh load_obj(const std::string& path);

/// "INSSAMP1", u64 surface count, u64 uniform count, then records of three
/// little-endian f64 coordinates and one label byte (surface first).
void save_samples(const std::string& path, const FrameSampleSet& samples);
/// The pose is not part of the sample file and stays empty.
FrameSampleSet load_samples(const std::string& path);

/// JSON text: {"n_b": n, "bones": [[r00 r01 r02 r10 ... r22 t0 t1 t2], ...]}.
void save_pose(const std::string& path, const Pose& pose);
Pose load_pose(const std::string& path);
std::string pose_to_json(const Pose& pose);
Pose pose_from_json(const std::string& text);

}  // namespace ins::data
