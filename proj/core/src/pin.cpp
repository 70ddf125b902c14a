#include "ins/pin.hpp"

#include <cmath>
#include <cstdio>

#include "ins/error.hpp"

namespace ins::pin {

SplitAxes split_axes(SplitPattern pattern) {
  switch (pattern) {
    case SplitPattern::kXY_Z:
      return {{0, 1}, {2, 0}, 2, 1};
    case SplitPattern::kYZ_X:
      return {{1, 2}, {0, 0}, 2, 1};
    case SplitPattern::kXZ_Y:
      return {{0, 2}, {1, 0}, 2, 1};
    case SplitPattern::kZ_XY:
      return {{2, 0}, {0, 1}, 1, 2};
    case SplitPattern::kX_YZ:
      return {{0, 0}, {1, 2}, 1, 2};
    case SplitPattern::kY_XZ:
      return {{1, 0}, {0, 2}, 1, 2};
  }
  throw UsageError("unknown split pattern");
}

bool is_two_dimensional(SplitPattern pattern) { return split_axes(pattern).transformed_count == 2; }

std::string to_string(SplitPattern pattern) {
  switch (pattern) {
    case SplitPattern::kXY_Z:
      return "xy|z";
    case SplitPattern::kYZ_X:
      return "yz|x";
    case SplitPattern::kXZ_Y:
      return "xz|y";
    case SplitPattern::kZ_XY:
      return "z|xy";
    case SplitPattern::kX_YZ:
      return "x|yz";
    case SplitPattern::kY_XZ:
      return "y|xz";
  }
  return "?";
}

SplitPattern parse_split_pattern(const std::string& text) {
  for (auto p : {SplitPattern::kXY_Z, SplitPattern::kYZ_X, SplitPattern::kXZ_Y,
                 SplitPattern::kZ_XY, SplitPattern::kX_YZ, SplitPattern::kY_XZ}) {
    if (to_string(p) == text) return p;
  }
  throw UsageError("unknown split pattern '" + text + "'");
}

std::vector<SplitPattern> default_schedule(std::size_t layer_count) {
  static constexpr SplitPattern kCycle[] = {SplitPattern::kXY_Z, SplitPattern::kYZ_X,
                                            SplitPattern::kXZ_Y, SplitPattern::kZ_XY,
                                            SplitPattern::kX_YZ, SplitPattern::kY_XZ};
  std::vector<SplitPattern> out;
  for (std::size_t i = 0; i < layer_count; ++i) out.push_back(kCycle[i % 6]);
  return out;
}

namespace {

std::vector<std::size_t> chain_dims(std::size_t in, std::size_t hidden, std::size_t layers,
                                    std::size_t out) {
  std::vector<std::size_t> dims{in};
  for (std::size_t i = 0; i < layers; ++i) dims.push_back(hidden);
  dims.push_back(out);
  return dims;
}

}  // namespace

// ---------------------------------------------------------------------------
// BoneEncoder

BoneEncoder::BoneEncoder(const std::string& prefix, const PinConfig& config)
    : bones_(config.bone_count) {
  if (config.bone_count == 0 || config.embedding_dim % config.bone_count != 0) {
    throw UsageError("pose embedding dim must be a positive multiple of the bone count");
  }
  net_ = nn::DenseNet(prefix,
                      chain_dims(6, config.encoder_hidden, config.encoder_layers,
                                 config.embedding_dim / config.bone_count),
                      nn::ActivationSpec::softplus());
}

Matrix BoneEncoder::inputs(const Pose& pose) const {
  if (pose.bone_count() != bones_) {
    throw UsageError("pose has " + std::to_string(pose.bone_count()) + " bones, encoder expects " +
                     std::to_string(bones_));
  }
  // Last column is the identity bone, subtracted from every other column.
  Matrix x = Matrix::Zero(6, static_cast<Eigen::Index>(bones_ + 1));
  for (std::size_t i = 0; i < bones_; ++i) {
    const auto& b = pose.bone(i);
    x.col(static_cast<Eigen::Index>(i)).head<3>() = b.translation();
    x.col(static_cast<Eigen::Index>(i)).tail<3>() = euler_xyz_from_rotation(b.rotation());
  }
  return x;
}

namespace {
Vector flatten_relative(const Matrix& out, std::size_t bones) {
  const auto chunk = out.rows();
  Vector e(chunk * static_cast<Eigen::Index>(bones));
  const auto zero_col = out.col(static_cast<Eigen::Index>(bones));
  for (std::size_t i = 0; i < bones; ++i) {
    e.segment(static_cast<Eigen::Index>(i) * chunk, chunk) =
        out.col(static_cast<Eigen::Index>(i)) - zero_col;
  }
  return e;
}
}  // namespace

Vector BoneEncoder::embed(const Pose& pose) const {
  return flatten_relative(net_.forward(inputs(pose)), bones_);
}

Vector BoneEncoder::embed(const Pose& pose, Tape& tape) const {
  return flatten_relative(net_.forward(inputs(pose), tape.net), bones_);
}

void BoneEncoder::backward(const Tape& tape, const Vector& upstream) {
  const auto chunk = static_cast<Eigen::Index>(chunk_size());
  Matrix g = Matrix::Zero(chunk, static_cast<Eigen::Index>(bones_ + 1));
  for (std::size_t i = 0; i < bones_; ++i) {
    const auto seg = upstream.segment(static_cast<Eigen::Index>(i) * chunk, chunk);
    g.col(static_cast<Eigen::Index>(i)) = seg;
    g.col(static_cast<Eigen::Index>(bones_)) -= seg;
  }
  net_.backward(tape.net, g);
}

// ---------------------------------------------------------------------------
// Conditioning

Matrix conditioning(const Vector& pose_embedding, const Matrix& space_embedding) {
  const auto d = pose_embedding.size();
  if (space_embedding.rows() != d) {
    throw UsageError("space and pose embeddings differ in size");
  }
  Matrix out(2 * d, space_embedding.cols());
  out.topRows(d) = space_embedding.array().colwise() * pose_embedding.array();
  out.bottomRows(d).colwise() = pose_embedding;
  return out;
}

// ---------------------------------------------------------------------------
// CouplingLayer

CouplingLayer::CouplingLayer(const std::string& prefix, SplitPattern pattern,
                             const PinConfig& config)
    : pattern_(pattern), axes_(split_axes(pattern)), anchored_(config.identity_anchor) {
  const auto d = config.embedding_dim;
  space_ = nn::SirenEncoder(prefix + ".space", static_cast<std::size_t>(axes_.conditioning_count),
                            config.space_hidden, config.space_layers, d, config.omega0);
  const auto act = nn::ActivationSpec::softplus(config.map_softplus_beta);
  translation_ = nn::DenseNet(prefix + ".translation",
                              chain_dims(2 * d, config.map_hidden, config.map_layers,
                                         static_cast<std::size_t>(axes_.transformed_count)),
                              act);
  if (two_dimensional()) {
    rotation_ = nn::DenseNet(prefix + ".rotation",
                             chain_dims(2 * d, config.map_hidden, config.map_layers, 1), act);
  }
}

void CouplingLayer::initialize(nn::Rng& rng) {
  space_.initialize(rng);
  translation_.initialize(nn::InitScheme::kKaimingUniform, rng);
  translation_.zero_output_layer();
  if (two_dimensional()) {
    rotation_.initialize(nn::InitScheme::kKaimingUniform, rng);
    rotation_.zero_output_layer();
  }
}

Matrix CouplingLayer::conditioning_coords(const Matrix& points) const {
  Matrix c(axes_.conditioning_count, points.cols());
  for (int i = 0; i < axes_.conditioning_count; ++i) c.row(i) = points.row(axes_.conditioning[i]);
  return c;
}

OperationParams CouplingLayer::operation_params(const Matrix& points,
                                                const Vector& pose_embedding) const {
  const Matrix sp = conditioning(pose_embedding, space_.net().forward(conditioning_coords(points)));
  OperationParams ops;
  ops.translation = translation_.forward(sp);
  if (two_dimensional()) ops.angle = rotation_.forward(sp);
  if (anchored_) {
    const Matrix zero = Matrix::Zero(sp.rows(), 1);
    ops.translation.colwise() -= translation_.forward(zero).col(0);
    if (two_dimensional()) ops.angle.array() -= rotation_.forward(zero)(0, 0);
  }
  return ops;
}

Matrix CouplingLayer::apply(const Matrix& points, const OperationParams& ops) const {
  Matrix out = points;
  const int a = axes_.transformed[0];
  if (two_dimensional()) {
    const int b = axes_.transformed[1];
    for (Eigen::Index n = 0; n < points.cols(); ++n) {
      const Real c = std::cos(ops.angle(n));
      const Real s = std::sin(ops.angle(n));
      const Real pa = points(a, n);
      const Real pb = points(b, n);
      out(a, n) = c * pa - s * pb + ops.translation(0, n);
      out(b, n) = s * pa + c * pb + ops.translation(1, n);
    }
  } else {
    out.row(a) += ops.translation.row(0);
  }
  return out;
}

Matrix CouplingLayer::forward(const Matrix& points, const Vector& pose_embedding) const {
  return apply(points, operation_params(points, pose_embedding));
}

Matrix CouplingLayer::forward(const Matrix& points, const Vector& pose_embedding,
                              Tape& tape) const {
  tape.input = points;
  tape.space = space_.net().forward(conditioning_coords(points), tape.space_tape);
  const Matrix sp = conditioning(pose_embedding, tape.space);
  tape.ops.translation = translation_.forward(sp, tape.translation_tape);
  if (two_dimensional()) tape.ops.angle = rotation_.forward(sp, tape.rotation_tape);
  if (anchored_) {
    const Matrix zero = Matrix::Zero(sp.rows(), 1);
    tape.ops.translation.colwise() -=
        translation_.forward(zero, tape.translation_anchor_tape).col(0);
    if (two_dimensional())
      tape.ops.angle.array() -= rotation_.forward(zero, tape.rotation_anchor_tape)(0, 0);
  }
  return apply(points, tape.ops);
}

Matrix CouplingLayer::inverse(const Matrix& points, const Vector& pose_embedding) const {
  // Conditioning coordinates pass through unchanged, so the same operation
  // parameters are recovered from the output.
  const OperationParams ops = operation_params(points, pose_embedding);
  Matrix out = points;
  const int a = axes_.transformed[0];
  if (two_dimensional()) {
    const int b = axes_.transformed[1];
    for (Eigen::Index n = 0; n < points.cols(); ++n) {
      const Real c = std::cos(ops.angle(n));
      const Real s = std::sin(ops.angle(n));
      const Real da = points(a, n) - ops.translation(0, n);
      const Real db = points(b, n) - ops.translation(1, n);
      out(a, n) = c * da + s * db;
      out(b, n) = -s * da + c * db;
    }
  } else {
    out.row(a) -= ops.translation.row(0);
  }
  return out;
}

Matrix CouplingLayer::backward(const Tape& tape, const Vector& pose_embedding,
                               const Matrix& upstream, Vector& pose_grad) {
  const auto n = upstream.cols();
  Matrix grad_in = upstream;
  Matrix grad_t(axes_.transformed_count, n);
  RowVector grad_angle;
  const int a = axes_.transformed[0];
  if (two_dimensional()) {
    const int b = axes_.transformed[1];
    grad_angle.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Real c = std::cos(tape.ops.angle(j));
      const Real s = std::sin(tape.ops.angle(j));
      const Real pa = tape.input(a, j);
      const Real pb = tape.input(b, j);
      const Real ga = upstream(a, j);
      const Real gb = upstream(b, j);
      grad_t(0, j) = ga;
      grad_t(1, j) = gb;
      grad_in(a, j) = c * ga + s * gb;
      grad_in(b, j) = -s * ga + c * gb;
      grad_angle(j) = ga * (-s * pa - c * pb) + gb * (c * pa - s * pb);
    }
  } else {
    grad_t.row(0) = upstream.row(a);
  }

  Matrix grad_sp = translation_.backward(tape.translation_tape, grad_t);
  if (two_dimensional()) grad_sp += rotation_.backward(tape.rotation_tape, grad_angle);
  if (anchored_) {
    translation_.backward(tape.translation_anchor_tape, -grad_t.rowwise().sum());
    if (two_dimensional())
      rotation_.backward(tape.rotation_anchor_tape, Matrix::Constant(1, 1, -grad_angle.sum()));
  }

  const auto d = pose_embedding.size();
  const Matrix grad_space = grad_sp.topRows(d).array().colwise() * pose_embedding.array();
  pose_grad += grad_sp.topRows(d).cwiseProduct(tape.space).rowwise().sum();
  pose_grad += grad_sp.bottomRows(d).rowwise().sum();

  const Matrix grad_cond = space_.net().backward(tape.space_tape, grad_space);
  for (int i = 0; i < axes_.conditioning_count; ++i) {
    grad_in.row(axes_.conditioning[i]) += grad_cond.row(i);
  }
  return grad_in;
}

Mat3 CouplingLayer::input_jacobian(const Point3& p, const Vector& pose_embedding) const {
  const Matrix coords = conditioning_coords(Matrix(p));
  std::vector<Matrix> unit;
  for (int i = 0; i < axes_.conditioning_count; ++i) {
    Matrix e = Matrix::Zero(axes_.conditioning_count, 1);
    e(i, 0) = 1;
    unit.push_back(std::move(e));
  }
  std::vector<Matrix> space_tangents;
  const Matrix space = space_.net().forward_tangent(coords, unit, space_tangents);
  const Matrix sp = conditioning(pose_embedding, space);
  std::vector<Matrix> sp_tangents;
  for (const auto& t : space_tangents) {
    Matrix st = Matrix::Zero(sp.rows(), 1);
    st.topRows(pose_embedding.size()) = t.cwiseProduct(pose_embedding);
    sp_tangents.push_back(std::move(st));
  }
  std::vector<Matrix> dt;
  const Matrix t = translation_.forward_tangent(sp, sp_tangents, dt);

  Mat3 jac = Mat3::Identity();
  const int a = axes_.transformed[0];
  if (two_dimensional()) {
    const int b = axes_.transformed[1];
    std::vector<Matrix> dgamma;
    Real gamma = rotation_.forward_tangent(sp, sp_tangents, dgamma)(0, 0);
    if (anchored_) gamma -= rotation_.forward(Matrix(Matrix::Zero(sp.rows(), 1)))(0, 0);
    const Real c = std::cos(gamma);
    const Real s = std::sin(gamma);
    jac(a, a) = c;
    jac(a, b) = -s;
    jac(b, a) = s;
    jac(b, b) = c;
    const Real pa = p(a);
    const Real pb = p(b);
    for (int i = 0; i < axes_.conditioning_count; ++i) {
      const int k = axes_.conditioning[i];
      const Real dg = dgamma[static_cast<std::size_t>(i)](0, 0);
      jac(a, k) = (-s * pa - c * pb) * dg + dt[static_cast<std::size_t>(i)](0, 0);
      jac(b, k) = (c * pa - s * pb) * dg + dt[static_cast<std::size_t>(i)](1, 0);
    }
  } else {
    for (int i = 0; i < axes_.conditioning_count; ++i) {
      jac(a, axes_.conditioning[i]) = dt[static_cast<std::size_t>(i)](0, 0);
    }
  }
  (void)t;
  return jac;
}

std::vector<nn::ParamBlock*> CouplingLayer::params() {
  auto out = space_.net().params();
  for (auto* p : translation_.params()) out.push_back(p);
  if (two_dimensional())
    for (auto* p : rotation_.params()) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// Pin

Pin::Pin(const std::string& prefix, PinConfig config) : config_(std::move(config)) {
  if (config_.schedule.empty()) config_.schedule = default_schedule(config_.layer_count);
  config_.layer_count = config_.schedule.size();
  encoder_ = BoneEncoder(prefix + ".encoder", config_);
  for (std::size_t i = 0; i < config_.schedule.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), ".layer%02zu", i);
    layers_.emplace_back(prefix + name, config_.schedule[i], config_);
  }
}

void Pin::initialize(nn::Rng& rng) {
  encoder_.initialize(rng);
  for (auto& l : layers_) l.initialize(rng);
}

Matrix Pin::forward_embedded(const Matrix& points, const Vector& e) const {
  Matrix x = points;
  for (const auto& l : layers_) x = l.forward(x, e);
  return x;
}

Matrix Pin::inverse_embedded(const Matrix& points, const Vector& e) const {
  Matrix x = points;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) x = it->inverse(x, e);
  return x;
}

Matrix Pin::forward(const Matrix& points, const Pose& pose) const {
  return forward_embedded(points, encoder_.embed(pose));
}

Matrix Pin::inverse(const Matrix& points, const Pose& pose) const {
  return inverse_embedded(points, encoder_.embed(pose));
}

Point3 Pin::forward(const Point3& p, const Pose& pose) const {
  return forward(Matrix(p), pose).col(0);
}

Point3 Pin::inverse(const Point3& p, const Pose& pose) const {
  return inverse(Matrix(p), pose).col(0);
}

Matrix Pin::forward(const Matrix& points, const Pose& pose, Tape& tape) const {
  tape.pose_embedding = encoder_.embed(pose, tape.encoder);
  tape.layers.resize(layers_.size());
  Matrix x = points;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(x, tape.pose_embedding, tape.layers[i]);
  }
  return x;
}

Matrix Pin::backward(const Tape& tape, const Matrix& upstream) {
  if (tape.layers.size() != layers_.size()) {
    throw UsageError("pin backward called without a recorded forward pass");
  }
  Vector pose_grad = Vector::Zero(tape.pose_embedding.size());
  Matrix g = upstream;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i].backward(tape.layers[i], tape.pose_embedding, g, pose_grad);
  }
  encoder_.backward(tape.encoder, pose_grad);
  return g;
}

Mat3 Pin::input_jacobian(const Point3& p, const Pose& pose) const {
  const Vector e = encoder_.embed(pose);
  Mat3 jac = Mat3::Identity();
  Point3 x = p;
  for (const auto& l : layers_) {
    jac = l.input_jacobian(x, e) * jac;
    x = l.forward(Matrix(x), e).col(0);
  }
  return jac;
}

std::vector<nn::ParamBlock*> Pin::params() {
  auto out = encoder_.net().params();
  for (auto& l : layers_)
    for (auto* p : l.params()) out.push_back(p);
  return out;
}

}  // namespace ins::pin
