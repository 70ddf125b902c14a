#pragma once

#include <array>
#include <string>
#include <vector>

#include "ins/diffnet.hpp"
#include "ins/geometry.hpp"

namespace ins::pin {

/// Which coordinates a coupling layer transforms (left of '|') and which it
/// conditions on (right of '|').
enum class SplitPattern : std::uint8_t { kXY_Z, kYZ_X, kXZ_Y, kZ_XY, kX_YZ, kY_XZ };

struct SplitAxes {
  std::array<int, 2> transformed{};
  std::array<int, 2> conditioning{};
  int transformed_count = 0;
  int conditioning_count = 0;
};

SplitAxes split_axes(SplitPattern pattern);
bool is_two_dimensional(SplitPattern pattern);
std::string to_string(SplitPattern pattern);
SplitPattern parse_split_pattern(const std::string& text);
/// [xy|z, yz|x, xz|y, z|xy, x|yz, y|xz] repeated to `layer_count` entries.
std::vector<SplitPattern> default_schedule(std::size_t layer_count);

struct PinConfig {
  std::size_t bone_count = 2;
  std::size_t embedding_dim = 24;  // must be divisible by bone_count
  std::size_t layer_count = 18;
  std::size_t encoder_hidden = 32;
  std::size_t encoder_layers = 1;
  std::size_t space_hidden = 32;
  std::size_t space_layers = 1;
  std::size_t map_hidden = 32;
  std::size_t map_layers = 1;
  Real omega0 = 30;
  Real map_softplus_beta = 1;
  // Subtract each map's output at zero conditioning, so the identity pose maps
  // every point to itself for any parameters.
  bool identity_anchor = true;
  std::vector<SplitPattern> schedule;  // empty -> default_schedule(layer_count)
};

/// Per-bone encoder m_b: 6-vector (translation, XYZ Euler angles) to a chunk
/// of d / n_b values. Embeddings are taken relative to the identity bone so
/// the identity pose embeds to exactly zero.
class BoneEncoder {
 public:
  struct Tape {
    nn::DenseTape net;
  };

  BoneEncoder() = default;
  BoneEncoder(const std::string& prefix, const PinConfig& config);

  void initialize(nn::Rng& rng) { net_.initialize(nn::InitScheme::kKaimingUniform, rng); }
  Vector embed(const Pose& pose) const;
  Vector embed(const Pose& pose, Tape& tape) const;
  /// Accumulates encoder gradients for dL/d(embedding).
  void backward(const Tape& tape, const Vector& upstream);

  std::size_t chunk_size() const { return net_.output_dim(); }
  nn::DenseNet& net() { return net_; }
  const nn::DenseNet& net() const { return net_; }

 private:
  Matrix inputs(const Pose& pose) const;
  nn::DenseNet net_;
  std::size_t bones_ = 0;
};

/// e_sp = concat[e_pose ⊙ e_space, e_pose] for every column of `space`.
Matrix conditioning(const Vector& pose_embedding, const Matrix& space_embedding);

/// Rotation angle and translation predicted for a batch of points.
struct OperationParams {
  RowVector angle;  // empty for 1D layers
  Matrix translation;  // transformed_count x N
};

/// Pose-conditioned coupling layer: rotation plus translation of a coordinate
/// pair (2D) or translation of one coordinate (1D), with parameters predicted
/// from the untouched coordinates and the pose embedding.
class CouplingLayer {
 public:
  struct Tape {
    Matrix input;
    Matrix space;  // Φ(conditioning coords)
    OperationParams ops;
    nn::DenseTape space_tape;
    nn::DenseTape translation_tape;
    nn::DenseTape rotation_tape;
    nn::DenseTape translation_anchor_tape;
    nn::DenseTape rotation_anchor_tape;
  };

  CouplingLayer() = default;
  CouplingLayer(const std::string& prefix, SplitPattern pattern, const PinConfig& config);

  /// SIREN space encoder, Kaiming maps, zeroed final map layers (identity).
  void initialize(nn::Rng& rng);

  SplitPattern pattern() const { return pattern_; }
  bool two_dimensional() const { return is_two_dimensional(pattern_); }

  OperationParams operation_params(const Matrix& points, const Vector& pose_embedding) const;
  Matrix forward(const Matrix& points, const Vector& pose_embedding) const;
  Matrix forward(const Matrix& points, const Vector& pose_embedding, Tape& tape) const;
  Matrix inverse(const Matrix& points, const Vector& pose_embedding) const;
  /// Returns dL/d(input points); accumulates map/encoder gradients and adds
  /// dL/d(pose embedding) into `pose_grad`.
  Matrix backward(const Tape& tape, const Vector& pose_embedding, const Matrix& upstream,
                  Vector& pose_grad);
  /// Exact 3x3 Jacobian of forward() at a single point.
  Mat3 input_jacobian(const Point3& p, const Vector& pose_embedding) const;

  nn::SirenEncoder& space_encoder() { return space_; }
  nn::DenseNet& translation_map() { return translation_; }
  nn::DenseNet& rotation_map() { return rotation_; }
  const nn::SirenEncoder& space_encoder() const { return space_; }
  const nn::DenseNet& translation_map() const { return translation_; }
  const nn::DenseNet& rotation_map() const { return rotation_; }

  std::vector<nn::ParamBlock*> params();

 private:
  Matrix conditioning_coords(const Matrix& points) const;
  Matrix apply(const Matrix& points, const OperationParams& ops) const;

  SplitPattern pattern_ = SplitPattern::kXY_Z;
  SplitAxes axes_;
  nn::SirenEncoder space_;
  nn::DenseNet translation_;
  bool anchored_ = true;
  nn::DenseNet rotation_;  // 2D layers only
};

/// Pose-conditioned invertible network: a chain of coupling layers sharing
/// one bone encoder.
class Pin {
 public:
  struct Tape {
    Vector pose_embedding;
    BoneEncoder::Tape encoder;
    std::vector<CouplingLayer::Tape> layers;
  };

  Pin() = default;
  Pin(const std::string& prefix, PinConfig config);

  void initialize(nn::Rng& rng);
  const PinConfig& config() const { return config_; }

  Vector embed_pose(const Pose& pose) const { return encoder_.embed(pose); }

  Matrix forward(const Matrix& points, const Pose& pose) const;
  Matrix inverse(const Matrix& points, const Pose& pose) const;
  Point3 forward(const Point3& p, const Pose& pose) const;
  Point3 inverse(const Point3& p, const Pose& pose) const;
  Matrix forward_embedded(const Matrix& points, const Vector& pose_embedding) const;
  Matrix inverse_embedded(const Matrix& points, const Vector& pose_embedding) const;

  Matrix forward(const Matrix& points, const Pose& pose, Tape& tape) const;
  /// Returns dL/d(input points) and accumulates every parameter gradient,
  /// including the bone encoder's.
  Matrix backward(const Tape& tape, const Matrix& upstream);

  Mat3 input_jacobian(const Point3& p, const Pose& pose) const;

  std::size_t layer_count() const { return layers_.size(); }
  CouplingLayer& layer(std::size_t i) { return layers_[i]; }
  const CouplingLayer& layer(std::size_t i) const { return layers_[i]; }
  BoneEncoder& encoder() { return encoder_; }
  const BoneEncoder& encoder() const { return encoder_; }

  std::vector<nn::ParamBlock*> params();

 private:
  PinConfig config_;
  BoneEncoder encoder_;
  std::vector<CouplingLayer> layers_;
};

}  // namespace ins::pin
