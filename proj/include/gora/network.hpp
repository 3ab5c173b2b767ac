#pragma once

#include "gora/numerics.hpp"
#include "gora/rng.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gora {

enum class Activation { linear, relu, tanh };
enum class LossKind { mse, softmax_cross_entropy };

std::string to_string(Activation a);
std::string to_string(LossKind l);
Activation parse_activation(const std::string& s);
LossKind parse_loss(const std::string& s);

struct LayerSpec {
  std::size_t in_dim = 1;   // m
  std::size_t out_dim = 1;  // n
  Activation activation = Activation::linear;
  bool adapt = true;
};

/// Forward is x·W + bias with W shaped (in_dim × out_dim).
struct Layer {
  LayerSpec spec;
  Matrix weight;
  RowVector bias;  // empty when the layer has no bias
};

class Network {
 public:
  Network(std::vector<Layer> layers, LossKind loss);

  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t size() const { return layers_.size(); }
  LossKind loss() const { return loss_; }
  std::size_t in_dim() const { return layers_.front().spec.in_dim; }
  std::size_t out_dim() const { return layers_.back().spec.out_dim; }

  /// Indices of layers flagged for adaptation, ascending.
  std::vector<LayerId> adapted_layers() const;

 private:
  std::vector<Layer> layers_;
  LossKind loss_;
};

/// Targets are dense: regression targets for mse, one-hot rows for
/// softmax cross-entropy.
struct Batch {
  Matrix inputs;
  Matrix targets;
  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
};

/// Non-owning view of a low-rank term s·A·B added to a layer's weight.
struct LowRankView {
  Eigen::Ref<const Matrix> a;
  Eigen::Ref<const Matrix> b;
  double scale;
};

/// Indexed by layer; an empty vector or empty slot means "base weight only".
using LowRankViews = std::vector<std::optional<LowRankView>>;

struct LossAndGrads {
  double loss = 0.0;
  /// dL/dW per layer, evaluated at the effective weight. With no low-rank
  /// terms this is dL/dW₀.
  std::vector<Matrix> weight_grads;
  std::vector<RowVector> bias_grads;
};

/// Mean-over-batch loss and exact reverse-mode gradients for every weight.
LossAndGrads forward_backward(const Network& net, const Batch& batch, const LowRankViews& deltas = {});

/// Forward pass only.
double evaluate_loss(const Network& net, const Batch& batch, const LowRankViews& deltas = {});
Matrix predict(const Network& net, const Matrix& inputs, const LowRankViews& deltas = {});

/// Fraction of rows whose arg-max prediction matches the one-hot target.
double accuracy(const Network& net, const Batch& batch, const LowRankViews& deltas = {});

/// Random network with weights ~ N(0, 1/in_dim) and zero biases.
Network make_network(std::span<const LayerSpec> specs, LossKind loss, Rng& rng, bool with_bias = true);

}  // namespace gora
