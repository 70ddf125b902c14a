#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ins/types.hpp"

namespace ins::nn {

using Rng = std::mt19937_64;

/// Named, shaped, flat trainable array with paired gradient storage.
struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<Real> values;
  std::vector<Real> grads;

  ParamBlock() = default;
  ParamBlock(std::string name, std::vector<std::size_t> shape);

  std::size_t size() const { return values.size(); }
  void zero_grad();
  bool values_finite() const;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

enum class Activation : std::uint8_t { kIdentity, kSoftplus, kSine };

struct ActivationSpec {
  Activation kind = Activation::kIdentity;
  // Softplus sharpness (beta) or sine frequency (omega_0).
  Real scale = 1;

  static ActivationSpec identity() { return {Activation::kIdentity, 1}; }
  static ActivationSpec softplus(Real beta = 1) { return {Activation::kSoftplus, beta}; }
  static ActivationSpec sine(Real omega) { return {Activation::kSine, omega}; }
};

enum class InitScheme : std::uint8_t {
  kKaimingUniform,  // U(±sqrt(6 / fan_in)), zero bias
  kSiren,           // first layer U(±1/fan_in), later U(±sqrt(6/fan_in)/omega)
  kZero,
};

/// Activations cached by a recorded forward pass; consumed by backward.
struct DenseTape {
  std::vector<Matrix> inputs;       // input to each layer
  std::vector<Matrix> preactivations;

  bool recorded() const { return !inputs.empty(); }
  void clear() {
    inputs.clear();
    preactivations.clear();
  }
};

/// Feed-forward chain of affine layers. Batches are column-major with one
/// sample per column. Parameter blocks are named `<prefix>.<layer>.weight`
/// (shape {out, in}) and `<prefix>.<layer>.bias` (shape {out}).
class DenseNet {
 public:
  DenseNet() = default;
  DenseNet(const std::string& prefix, std::vector<std::size_t> dims, ActivationSpec hidden = ActivationSpec::softplus(),
           ActivationSpec output = ActivationSpec::identity());

  void initialize(InitScheme scheme, Rng& rng);
  /// Zeros weights and bias of the last layer so the net outputs exactly 0.
  void zero_output_layer();
  void zero_all();

  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  std::size_t layer_count() const { return weights_.size(); }
  const std::vector<std::size_t>& dims() const { return dims_; }

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, DenseTape& tape) const;
  Vector forward(const Vector& x) const { return forward(Matrix(x)).col(0); }

  /// Accumulates parameter gradients for `upstream` = dL/d(output) and
  /// returns dL/d(input). Throws UsageError if the tape was never recorded.
  Matrix backward(const DenseTape& tape, const Matrix& upstream);
  /// Input gradient only; parameters untouched.
  Matrix backward_input(const DenseTape& tape, const Matrix& upstream) const;

  /// Forward pass that also pushes input tangents through the net
  /// (directional derivatives). `tangents[k]` has the shape of `x`.
  Matrix forward_tangent(const Matrix& x, const std::vector<Matrix>& tangents,
                         std::vector<Matrix>& out_tangents) const;

  std::vector<ParamBlock*> params();
  std::vector<const ParamBlock*> params() const;

  ParamBlock& weight(std::size_t layer) { return weights_[layer]; }
  ParamBlock& bias(std::size_t layer) { return biases_[layer]; }
  const ParamBlock& weight(std::size_t layer) const { return weights_[layer]; }
  const ParamBlock& bias(std::size_t layer) const { return biases_[layer]; }
  ActivationSpec activation(std::size_t layer) const;

 private:
  Matrix backward_impl(const DenseTape& tape, const Matrix& upstream,
                      DenseNet* accumulate_into) const;

  std::vector<std::size_t> dims_;
  std::vector<ParamBlock> weights_;
  std::vector<ParamBlock> biases_;
  ActivationSpec hidden_;
  ActivationSpec output_;
};

/// Learned periodic positional encoding: sine hidden layers with frequency
/// omega_0, linear output of the embedding size.
class SirenEncoder {
 public:
  SirenEncoder() = default;
  SirenEncoder(const std::string& prefix, std::size_t input_dim, std::size_t hidden_width,
               std::size_t hidden_layers, std::size_t embedding_dim, Real omega0);

  void initialize(Rng& rng) { net_.initialize(InitScheme::kSiren, rng); }
  std::size_t input_dim() const { return net_.input_dim(); }
  std::size_t embedding_dim() const { return net_.output_dim(); }
  Real omega0() const { return omega0_; }

  DenseNet& net() { return net_; }
  const DenseNet& net() const { return net_; }

 private:
  DenseNet net_;
  Real omega0_ = 30;
};

/// Max-subtracted softmax.
std::vector<Real> softmax(std::span<const Real> x);
/// Column-wise softmax of a batch of logits.
Matrix softmax_columns(const Matrix& logits);
/// dL/dlogits given softmax output `y` and dL/dy, column-wise.
Matrix softmax_backward(const Matrix& y, const Matrix& upstream);

/// Numerically fused log(1 + exp(x)).
Real log1p_exp(Real x);
Real sigmoid(Real x);

struct AdamOptions {
  Real beta1 = static_cast<Real>(0.9);
  Real beta2 = static_cast<Real>(0.999);
  Real epsilon = static_cast<Real>(1e-8);
  Real clip_norm = 4;  // global L2; <= 0 disables
};

struct ParamGroup {
  std::vector<ParamBlock*> blocks;
  Real learning_rate = static_cast<Real>(1e-3);
};

struct AdamStepReport {
  Real grad_norm = 0;  // before clipping
  bool clipped = false;
};

/// Adam with global gradient-norm clipping. Gradients are zeroed after every
/// step. A non-finite gradient aborts the step (parameters untouched, grads
/// zeroed) with a NumericalError naming the block.
class Adam {
 public:
  Adam(std::vector<ParamGroup> groups, AdamOptions options = {});

  AdamStepReport step(Real lr_factor = 1);
  std::uint64_t steps_taken() const { return t_; }
  void zero_grad();

 private:
  std::vector<ParamGroup> groups_;
  AdamOptions options_;
  std::vector<std::vector<std::vector<Real>>> m_;
  std::vector<std::vector<std::vector<Real>>> v_;
  std::uint64_t t_ = 0;
};

/// Linear warmup from `start_factor` to 1 over `warmup_iters` steps.
Real warmup_factor(std::uint64_t step, std::uint64_t warmup_iters, Real start_factor);

// Checkpoints: "INSCKPT1", u64 block count, then per block: u64 name length,
// UTF-8 name, u64 rank, rank x u64 dims, product(dims) x f64 values. All
// integers and floats little-endian.
void save_checkpoint(const std::string& path, std::span<const ParamBlock* const> blocks);
std::vector<ParamBlock> read_checkpoint(const std::string& path);
/// Copies values from `stored` into `model` matching by name. Every model
/// block must be present with identical shape; stored blocks that the model
/// lacks are an error unless their name starts with `meta.`.
void restore_blocks(const std::vector<ParamBlock>& stored, std::span<ParamBlock* const> model);

}  // namespace ins::nn
