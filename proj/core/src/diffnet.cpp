#include "ins/diffnet.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "ins/error.hpp"

namespace ins::nn {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

ParamBlock::ParamBlock(std::string name_, std::vector<std::size_t> shape_)
    : name(std::move(name_)), shape(std::move(shape_)) {
  const auto n = shape_product(shape);
  values.assign(n, 0);
  grads.assign(n, 0);
}

void ParamBlock::zero_grad() { std::fill(grads.begin(), grads.end(), Real(0)); }

bool ParamBlock::values_finite() const {
  return std::all_of(values.begin(), values.end(), [](Real v) { return std::isfinite(v); });
}

Real log1p_exp(Real x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

Real sigmoid(Real x) {
  if (x >= 0) return 1 / (1 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1 + e);
}

namespace {

using MatMap = Eigen::Map<Matrix>;
using ConstMatMap = Eigen::Map<const Matrix>;
using VecMap = Eigen::Map<Vector>;
using ConstVecMap = Eigen::Map<const Vector>;

ConstMatMap as_matrix(const ParamBlock& b) {
  return {b.values.data(), static_cast<Eigen::Index>(b.shape[0]),
          static_cast<Eigen::Index>(b.shape[1])};
}
MatMap grad_matrix(ParamBlock& b) {
  return {b.grads.data(), static_cast<Eigen::Index>(b.shape[0]),
          static_cast<Eigen::Index>(b.shape[1])};
}
ConstVecMap as_vector(const ParamBlock& b) {
  return {b.values.data(), static_cast<Eigen::Index>(b.values.size())};
}
VecMap grad_vector(ParamBlock& b) {
  return {b.grads.data(), static_cast<Eigen::Index>(b.grads.size())};
}

Matrix activate(const Matrix& z, ActivationSpec act) {
  switch (act.kind) {
    case Activation::kIdentity:
      return z;
    case Activation::kSoftplus: {
      // max(x, 0) + log(1 + exp(-|x|)); Eigen has no packet log1p for double.
      const Real beta = act.scale;
      const auto x = (beta * z.array()).eval();
      return ((x.max(Real(0)) + (Real(1) + (-x.abs()).exp()).log()) / beta).matrix();
    }
    case Activation::kSine:
      return (act.scale * z.array()).sin().matrix();
  }
  return z;
}

Matrix activation_derivative(const Matrix& z, ActivationSpec act) {
  switch (act.kind) {
    case Activation::kIdentity:
      return Matrix::Ones(z.rows(), z.cols());
    case Activation::kSoftplus:
      return (Real(1) / (Real(1) + (-act.scale * z.array()).exp())).matrix();
    case Activation::kSine:
      return (act.scale * (act.scale * z.array()).cos()).matrix();
  }
  return Matrix::Ones(z.rows(), z.cols());
}

}  // namespace

DenseNet::DenseNet(const std::string& prefix, std::vector<std::size_t> dims,
                   ActivationSpec hidden, ActivationSpec output)
    : dims_(std::move(dims)), hidden_(hidden), output_(output) {
  if (dims_.size() < 2) throw UsageError("dense net needs at least input and output dims");
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    weights_.emplace_back(base + ".weight", std::vector<std::size_t>{dims_[l + 1], dims_[l]});
    biases_.emplace_back(base + ".bias", std::vector<std::size_t>{dims_[l + 1]});
  }
}

ActivationSpec DenseNet::activation(std::size_t layer) const {
  return layer + 1 == weights_.size() ? output_ : hidden_;
}

void DenseNet::initialize(InitScheme scheme, Rng& rng) {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    auto& w = weights_[l];
    const auto fan_in = static_cast<Real>(w.shape[1]);
    Real bound = 0;
    switch (scheme) {
      case InitScheme::kKaimingUniform:
        bound = std::sqrt(Real(6) / fan_in);
        break;
      case InitScheme::kSiren: {
        const Real omega = hidden_.kind == Activation::kSine ? hidden_.scale : Real(1);
        bound = l == 0 ? Real(1) / fan_in : std::sqrt(Real(6) / fan_in) / omega;
        break;
      }
      case InitScheme::kZero:
        bound = 0;
        break;
    }
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : w.values) v = bound > 0 ? static_cast<Real>(dist(rng)) : Real(0);
    auto& b = biases_[l];
    if (scheme == InitScheme::kSiren && bound > 0) {
      // SIREN biases share the layer's weight range so phases are spread.
      for (auto& v : b.values) v = static_cast<Real>(dist(rng));
    } else {
      std::fill(b.values.begin(), b.values.end(), Real(0));
    }
  }
}

void DenseNet::zero_output_layer() {
  std::fill(weights_.back().values.begin(), weights_.back().values.end(), Real(0));
  std::fill(biases_.back().values.begin(), biases_.back().values.end(), Real(0));
}

void DenseNet::zero_all() {
  for (auto* p : params()) std::fill(p->values.begin(), p->values.end(), Real(0));
}

Matrix DenseNet::forward(const Matrix& x) const {
  if (static_cast<std::size_t>(x.rows()) != input_dim()) {
    throw UsageError("dense net expects input dim " + std::to_string(input_dim()) + ", got " +
                     std::to_string(x.rows()));
  }
  Matrix a = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Matrix z = as_matrix(weights_[l]) * a;
    z.colwise() += as_vector(biases_[l]);
    a = activate(z, activation(l));
  }
  return a;
}

Matrix DenseNet::forward(const Matrix& x, DenseTape& tape) const {
  if (static_cast<std::size_t>(x.rows()) != input_dim()) {
    throw UsageError("dense net expects input dim " + std::to_string(input_dim()) + ", got " +
                     std::to_string(x.rows()));
  }
  tape.clear();
  tape.inputs.reserve(weights_.size());
  tape.preactivations.reserve(weights_.size());
  Matrix a = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Matrix z = as_matrix(weights_[l]) * a;
    z.colwise() += as_vector(biases_[l]);
    tape.inputs.push_back(std::move(a));
    a = activate(z, activation(l));
    tape.preactivations.push_back(std::move(z));
  }
  return a;
}

Matrix DenseNet::backward(const DenseTape& tape, const Matrix& upstream) {
  return backward_impl(tape, upstream, this);
}

Matrix DenseNet::backward_input(const DenseTape& tape, const Matrix& upstream) const {
  return backward_impl(tape, upstream, nullptr);
}

Matrix DenseNet::backward_impl(const DenseTape& tape, const Matrix& upstream,
                               DenseNet* accumulate_into) const {
  if (!tape.recorded() || tape.inputs.size() != weights_.size()) {
    throw UsageError("backward called without a recorded forward pass");
  }
  if (static_cast<std::size_t>(upstream.rows()) != output_dim() ||
      upstream.cols() != tape.inputs.front().cols()) {
    throw UsageError("backward upstream shape does not match the recorded batch");
  }
  Matrix grad = upstream;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    const auto act = activation(l);
    if (act.kind != Activation::kIdentity) {
      grad = grad.cwiseProduct(activation_derivative(tape.preactivations[l], act));
    }
    if (accumulate_into != nullptr) {
      grad_matrix(accumulate_into->weights_[l]).noalias() += grad * tape.inputs[l].transpose();
      grad_vector(accumulate_into->biases_[l]) += grad.rowwise().sum();
    }
    grad = as_matrix(weights_[l]).transpose() * grad;
  }
  return grad;
}

Matrix DenseNet::forward_tangent(const Matrix& x, const std::vector<Matrix>& tangents,
                                 std::vector<Matrix>& out_tangents) const {
  if (static_cast<std::size_t>(x.rows()) != input_dim()) {
    throw UsageError("dense net expects input dim " + std::to_string(input_dim()));
  }
  out_tangents = tangents;
  Matrix a = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto w = as_matrix(weights_[l]);
    Matrix z = w * a;
    z.colwise() += as_vector(biases_[l]);
    const auto act = activation(l);
    const Matrix dz = act.kind == Activation::kIdentity ? Matrix() : activation_derivative(z, act);
    for (auto& t : out_tangents) {
      Matrix zt = w * t;
      t = act.kind == Activation::kIdentity ? std::move(zt) : Matrix(zt.cwiseProduct(dz));
    }
    a = activate(z, act);
  }
  return a;
}

std::vector<ParamBlock*> DenseNet::params() {
  std::vector<ParamBlock*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<const ParamBlock*> DenseNet::params() const {
  std::vector<const ParamBlock*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

SirenEncoder::SirenEncoder(const std::string& prefix, std::size_t input_dim,
                           std::size_t hidden_width, std::size_t hidden_layers,
                           std::size_t embedding_dim, Real omega0)
    : omega0_(omega0) {
  std::vector<std::size_t> dims{input_dim};
  for (std::size_t i = 0; i < hidden_layers; ++i) dims.push_back(hidden_width);
  dims.push_back(embedding_dim);
  net_ = DenseNet(prefix, dims, ActivationSpec::sine(omega0));
}

std::vector<Real> softmax(std::span<const Real> x) {
  std::vector<Real> out(x.size());
  if (x.empty()) return out;
  const Real mx = *std::max_element(x.begin(), x.end());
  Real sum = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

Matrix softmax_columns(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const Real mx = logits.col(c).maxCoeff();
    out.col(c) = (logits.col(c).array() - mx).exp().matrix();
    out.col(c) /= out.col(c).sum();
  }
  return out;
}

Matrix softmax_backward(const Matrix& y, const Matrix& upstream) {
  Matrix out = y.cwiseProduct(upstream);
  const RowVector dots = out.colwise().sum();
  for (Eigen::Index c = 0; c < y.cols(); ++c) out.col(c) -= y.col(c) * dots(c);
  return out;
}

Adam::Adam(std::vector<ParamGroup> groups, AdamOptions options)
    : groups_(std::move(groups)), options_(options) {
  for (const auto& g : groups_) {
    auto& mg = m_.emplace_back();
    auto& vg = v_.emplace_back();
    for (const auto* b : g.blocks) {
      mg.emplace_back(b->size(), Real(0));
      vg.emplace_back(b->size(), Real(0));
    }
  }
}

void Adam::zero_grad() {
  for (auto& g : groups_)
    for (auto* b : g.blocks) b->zero_grad();
}

AdamStepReport Adam::step(Real lr_factor) {
  AdamStepReport report;
  double sq = 0;
  for (const auto& g : groups_) {
    for (const auto* b : g.blocks) {
      for (Real v : b->grads) {
        if (!std::isfinite(v)) {
          const std::string name = b->name;
          zero_grad();
          throw NumericalError("non-finite gradient in parameter block '" + name + "'");
        }
        sq += static_cast<double>(v) * v;
      }
    }
  }
  report.grad_norm = static_cast<Real>(std::sqrt(sq));
  Real scale = 1;
  if (options_.clip_norm > 0 && report.grad_norm > options_.clip_norm) {
    scale = options_.clip_norm / report.grad_norm;
    report.clipped = true;
  }
  ++t_;
  const Real bc1 = 1 - std::pow(options_.beta1, static_cast<Real>(t_));
  const Real bc2 = 1 - std::pow(options_.beta2, static_cast<Real>(t_));
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const Real lr = groups_[gi].learning_rate * lr_factor;
    for (std::size_t bi = 0; bi < groups_[gi].blocks.size(); ++bi) {
      auto* b = groups_[gi].blocks[bi];
      auto& m = m_[gi][bi];
      auto& v = v_[gi][bi];
      for (std::size_t i = 0; i < b->size(); ++i) {
        const Real g = b->grads[i] * scale;
        m[i] = options_.beta1 * m[i] + (1 - options_.beta1) * g;
        v[i] = options_.beta2 * v[i] + (1 - options_.beta2) * g * g;
        const Real mhat = m[i] / bc1;
        const Real vhat = v[i] / bc2;
        b->values[i] -= lr * mhat / (std::sqrt(vhat) + options_.epsilon);
      }
      b->zero_grad();
    }
  }
  return report;
}

Real warmup_factor(std::uint64_t step, std::uint64_t warmup_iters, Real start_factor) {
  if (warmup_iters == 0 || step >= warmup_iters) return 1;
  const Real frac = static_cast<Real>(step) / static_cast<Real>(warmup_iters);
  return start_factor + (1 - start_factor) * frac;
}

}  // namespace ins::nn
