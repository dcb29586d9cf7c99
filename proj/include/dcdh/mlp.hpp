#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dcdh/error.hpp"

namespace dcdh {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation : std::uint8_t { identity = 0, tanh = 1 };

/// Largest double strictly below 1; tanh outputs are clamped to it so that
/// activated embeddings stay inside the open interval (-1, 1).
inline constexpr double kTanhBound = 1.0 - std::numeric_limits<double>::epsilon() / 2;

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;

  long in_dim() const { return weight.cols(); }
  long out_dim() const { return weight.rows(); }
};

/// Fully connected network; samples are columns throughout.
class MlpParams {
 public:
  MlpParams() = default;
  explicit MlpParams(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  bool empty() const { return layers_.empty(); }
  long in_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
  long out_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

  std::size_t param_count() const {
    std::size_t total = 0;
    for (const auto& l : layers_) total += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return total;
  }

  /// Flat view: layer by layer, weights (column-major) then biases.
  double& param(std::size_t i) {
    for (auto& l : layers_) {
      const auto nw = static_cast<std::size_t>(l.weight.size());
      if (i < nw) return l.weight.data()[i];
      i -= nw;
      const auto nb = static_cast<std::size_t>(l.bias.size());
      if (i < nb) return l.bias.data()[i];
      i -= nb;
    }
    throw InputError("parameter index out of range");
  }
  double param(std::size_t i) const { return const_cast<MlpParams&>(*this).param(i); }

  /// Same architecture, all parameters zero. Used as a gradient accumulator.
  MlpParams zeros_like() const {
    MlpParams out = *this;
    for (auto& l : out.layers_) {
      l.weight.setZero();
      l.bias.setZero();
    }
    return out;
  }

  /// this += scale * other (architectures must match).
  void add_scaled(const MlpParams& other, double scale) {
    detail::require(layers_.size() == other.layers_.size(), "add_scaled: layer count mismatch");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i].weight += scale * other.layers_[i].weight;
      layers_[i].bias += scale * other.layers_[i].bias;
    }
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  void validate() const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      detail::require(l.bias.size() == l.weight.rows(),
                      "layer " + std::to_string(i) + ": bias size != weight rows");
      if (i > 0) {
        detail::require(l.in_dim() == layers_[i - 1].out_dim(),
                        "layer " + std::to_string(i) + ": input dim " + std::to_string(l.in_dim()) +
                            " != previous output dim " + std::to_string(layers_[i - 1].out_dim()));
      }
    }
    detail::require(all_finite(), "non-finite network parameter");
  }

  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto& x = a.layers_[i];
      const auto& y = b.layers_[i];
      if (x.activation != y.activation || x.weight.rows() != y.weight.rows() ||
          x.weight.cols() != y.weight.cols() || x.weight != y.weight || x.bias != y.bias) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Layer> layers_;
};

/// Builds a network with the given layer widths. Weights are uniform in
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
inline MlpParams init_mlp(const std::vector<long>& widths, const std::vector<Activation>& acts,
                          std::mt19937_64& rng) {
  detail::require(widths.size() >= 2, "init_mlp: need at least input and output widths");
  detail::require(acts.size() + 1 == widths.size(), "init_mlp: one activation per layer");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    detail::require(widths[i] >= 1 && widths[i + 1] >= 1, "init_mlp: widths must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[i]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer l;
    l.weight.resize(widths[i + 1], widths[i]);
    for (long j = 0; j < l.weight.size(); ++j) l.weight.data()[j] = dist(rng);
    l.bias = Vector::Zero(widths[i + 1]);
    l.activation = acts[i];
    layers.push_back(std::move(l));
  }
  return MlpParams(std::move(layers));
}

/// Per-layer inputs and pre-activations from one forward call.
struct ForwardCache {
  std::vector<Matrix> inputs;          // inputs[i] feeds layer i
  std::vector<Matrix> pre_activations;  // z = W a + b
  Matrix output;
};

inline Matrix apply_activation(const Matrix& z, Activation act) {
  if (act == Activation::identity) return z;
  return z.array().tanh().cwiseMax(-kTanhBound).cwiseMin(kTanhBound).matrix();
}

/// Forward pass over columns of `input` (in_dim x n).
inline ForwardCache mlp_forward(const MlpParams& params, const Matrix& input) {
  detail::require(!params.empty(), "mlp_forward: empty network");
  detail::require(input.rows() == params.in_dim(),
                  "mlp_forward: input dim " + std::to_string(input.rows()) + " != network input " +
                      std::to_string(params.in_dim()));
  ForwardCache cache;
  Matrix a = input;
  for (const auto& l : params.layers()) {
    Matrix z = l.weight * a;
    z.colwise() += l.bias;
    cache.inputs.push_back(std::move(a));
    a = apply_activation(z, l.activation);
    cache.pre_activations.push_back(std::move(z));
  }
  cache.output = std::move(a);
  return cache;
}

struct MlpBackward {
  MlpParams grad;
  Matrix input_grad;
};

/// Backpropagates d(loss)/d(output) through the cached forward pass.
inline MlpBackward mlp_backward(const MlpParams& params, const ForwardCache& cache,
                                const Matrix& output_grad) {
  detail::require(output_grad.rows() == cache.output.rows() &&
                      output_grad.cols() == cache.output.cols(),
                  "mlp_backward: gradient shape mismatch");
  MlpBackward out{params.zeros_like(), Matrix()};
  Matrix delta = output_grad;
  for (std::size_t li = params.layers().size(); li-- > 0;) {
    const auto& l = params.layers()[li];
    if (l.activation == Activation::tanh) {
      const Matrix t = apply_activation(cache.pre_activations[li], Activation::tanh);
      delta = (delta.array() * (1.0 - t.array().square())).matrix();
    }
    auto& g = out.grad.layers()[li];
    g.weight.noalias() = delta * cache.inputs[li].transpose();
    g.bias = delta.rowwise().sum();
    delta = l.weight.transpose() * delta;
  }
  out.input_grad = std::move(delta);
  return out;
}

}  // namespace dcdh
