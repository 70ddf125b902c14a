#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ins/data.hpp"
#include "ins/diffnet.hpp"
#include "ins/geometry.hpp"
#include "ins/occupancy.hpp"
#include "ins/pin.hpp"
#include "ins/skinning.hpp"

namespace ins {

/// Which quantity the candidate softmax runs over.
enum class SelectionSpace : std::uint8_t { kOccupancy, kLogit };

/// Components switched off for ablations. A disabled PIN is the identity and
/// is never updated; without LBS the deformed PIN feeds the canonical PIN
/// directly.
struct Ablation {
  bool deformed_pin = true;
  bool canonical_pin = true;
  bool lbs = true;

  /// "none", "no-pin", "no-hd", "no-hc", "no-lbs".
  static Ablation parse(const std::string& name);
  std::string name() const;
};

struct InsConfig {
  pin::PinConfig pin;  // shared by both PINs; bone_count must match the skeleton
  std::size_t weight_hidden = 32;
  std::size_t weight_layers = 2;
  Real weight_softplus_beta = 100;
  std::size_t occupancy_hidden = 64;
  std::size_t occupancy_layers = 3;
  Real occupancy_softplus_beta = 100;
  skinning::BroydenOptions broyden;
  Real temperature = static_cast<Real>(0.02);
  SelectionSpace selection = SelectionSpace::kOccupancy;
  Ablation ablation;
  std::uint64_t seed = 0;
};

struct CandidateOutput {
  Point3 canonical_pre = Point3::Zero();  // q_c, root of the skinning equation
  Point3 canonical = Point3::Zero();      // p_c = H_c(q_c)
  Real logit = 0;
  Real occupancy = 0;
  bool converged = false;
  Real residual = 0;
};

struct PointCorrespondence {
  Point3 deformed_pre = Point3::Zero();  // q_d = H_d(p_d)
  std::vector<CandidateOutput> candidates;

  std::size_t converged_count() const;
};

/// Both PINs around a differentiable LBS block plus the pose-free canonical
/// occupancy network.
class InsModel {
 public:
  InsModel(InsConfig config, Skeleton skeleton);

  /// Seeded initialization; PIN operation maps start at the identity.
  void initialize();

  const InsConfig& config() const { return config_; }
  InsConfig& mutable_config() { return config_; }
  const Skeleton& skeleton() const { return skeleton_; }
  std::size_t bone_count() const { return skeleton_.bone_count(); }

  pin::Pin& deformed_pin() { return h_d_; }
  pin::Pin& canonical_pin() { return h_c_; }
  skinning::SkinWeightField& weight_field() { return w_; }
  OccupancyNet& occupancy() { return o_; }
  const pin::Pin& deformed_pin() const { return h_d_; }
  const pin::Pin& canonical_pin() const { return h_c_; }
  const skinning::SkinWeightField& weight_field() const { return w_; }
  const OccupancyNet& occupancy() const { return o_; }

  /// Every parameter block of all four components (checkpoint order).
  std::vector<nn::ParamBlock*> all_params();
  /// Trainable blocks given the ablation: PIN blocks and the rest.
  std::vector<nn::ParamBlock*> trainable_pin_params();
  std::vector<nn::ParamBlock*> trainable_other_params();

  /// p_d -> H_d -> Broyden -> H_c, with canonical occupancy per candidate.
  std::vector<PointCorrespondence> deformed_to_canonical(const Matrix& points,
                                                        const Pose& pose) const;
  PointCorrespondence deformed_to_canonical(const Point3& p, const Pose& pose) const;
  /// Hard argmax over converged candidates; 0 when none converged. Points
  /// without any converged candidate are counted into `unconverged`.
  RowVector predict_occupancy(const Matrix& points, const Pose& pose,
                              std::size_t* unconverged = nullptr) const;

  /// p_c -> H_c^-1 -> LBS -> H_d^-1 for every column.
  Matrix repose_points(const Matrix& canonical, const Pose& pose) const;
  /// Vertex-wise reposing; the triangle list is copied unchanged.
  TriMesh repose(const TriMesh& canonical, const Pose& pose) const;

 private:
  InsConfig config_;
  Skeleton skeleton_;
  pin::Pin h_d_;
  pin::Pin h_c_;
  skinning::SkinWeightField w_;
  OccupancyNet o_;
};

struct SoftSelection {
  Real value = 0;
  std::vector<Real> weights;
};

/// softmax(scores / temperature) blend of `values` (defaults to the scores).
SoftSelection select_soft(std::span<const Real> scores, Real temperature);
SoftSelection select_soft(std::span<const Real> scores, std::span<const Real> values,
                          Real temperature);
/// Index of the largest score (first on ties).
std::size_t select_hard(std::span<const Real> scores);

/// Binary cross-entropy on a logit, numerically fused.
Real loss_bce(Real logit, std::uint8_t target);
/// d loss_bce / d logit.
Real loss_bce_gradient(Real logit, std::uint8_t target);

/// Points of one frame sharing a pose.
struct FrameBatch {
  Pose pose;
  Matrix points;  // 3 x N, deformed space
  std::vector<std::uint8_t> labels;
};

struct TrainBatch {
  std::vector<FrameBatch> frames;
};

/// Canonical priors: bone points pushed inside, joint weights pushed to 0.5
/// for the two bones meeting there.
struct AuxiliaryBatch {
  Matrix bone_points;   // 3 x B
  Matrix joint_points;  // 3 x J
  std::vector<std::pair<std::size_t, std::size_t>> joint_bones;
};

AuxiliaryBatch make_auxiliary_batch(const Skeleton& skeleton, std::size_t bone_points,
                                    nn::Rng& rng);

struct LossReport {
  Real loss = 0;
  Real bce = 0;
  Real auxiliary = 0;
  std::size_t points_used = 0;
  std::size_t points_skipped = 0;  // no converged candidate
  std::size_t singular_skipped = 0;  // implicit system too ill-conditioned
  std::size_t candidates = 0;
  std::size_t broyden_iterations = 0;
};

/// Mean BCE over frames (each frame averaged over its usable points) plus
/// auxiliary terms. With `with_gradients`, every trainable parameter gradient
/// is accumulated: directly through the occupancy net and H_c, implicitly
/// through the correspondence search into the weight field and H_d.
LossReport compute_loss(InsModel& model, const TrainBatch& batch, const AuxiliaryBatch* aux,
                        bool with_gradients);

struct GradientCheckEntry {
  std::string block;
  std::size_t index = 0;
  Real analytic = 0;
  Real numeric = 0;
  Real relative_error = 0;
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> entries;
  Real max_relative_error = 0;
  std::string worst_block;
  std::size_t checked = 0;
};

/// Central differences of compute_loss against the assembled analytic
/// gradient for every trainable scalar (or `max_per_block` evenly spaced
/// entries per block when non-zero). Relative error is
/// |a - n| / (max(|a|, |n|) + floor).
GradientCheckReport gradient_check(InsModel& model, const TrainBatch& batch,
                                   const AuxiliaryBatch* aux, Real epsilon,
                                   std::size_t max_per_block = 0,
                                   Real denominator_floor = static_cast<Real>(1e-6));

struct TrainerConfig {
  Real pin_learning_rate = static_cast<Real>(1e-4);
  Real learning_rate = static_cast<Real>(1e-3);
  std::uint64_t warmup_iterations = 2400;
  Real warmup_start_factor = static_cast<Real>(0.2);
  Real clip_norm = 4;
  std::size_t frames_per_batch = 8;
  std::size_t points_per_frame = 512;
  /// Optimizer steps per epoch; 0 means one pass over the frames in groups
  /// of `frames_per_batch`.
  std::size_t steps_per_epoch = 0;
  std::size_t auxiliary_bone_points = 512;
  std::size_t auxiliary_epochs = 1;
  std::uint64_t seed = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based index of the finished epoch
  Real mean_loss = 0;
  std::size_t skipped_points = 0;
  Real mean_broyden_iterations = 0;
  std::size_t steps = 0;
  bool auxiliary_active = false;
};

class Trainer {
 public:
  Trainer(InsModel& model, TrainerConfig config);

  EpochMetrics train_epoch(const std::vector<data::FrameSampleSet>& frames);
  /// One optimizer step on an explicit batch.
  LossReport train_step(const TrainBatch& batch, const AuxiliaryBatch* aux);

  bool auxiliary_active() const { return epoch_ < config_.auxiliary_epochs; }
  std::size_t epoch() const { return epoch_; }
  std::uint64_t step() const { return step_; }
  /// Resume counters (e.g. from a checkpoint).
  void set_progress(std::size_t epoch, std::uint64_t step);

 private:
  InsModel& model_;
  TrainerConfig config_;
  nn::Adam optimizer_;
  nn::Rng rng_;
  std::size_t epoch_ = 0;
  std::uint64_t step_ = 0;
};

}  // namespace ins
