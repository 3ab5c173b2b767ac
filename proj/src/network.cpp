#include "gora/network.hpp"

#include <cmath>

namespace gora {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

std::string to_string(LossKind l) {
  return l == LossKind::mse ? "mse" : "softmax_cross_entropy";
}

Activation parse_activation(const std::string& s) {
  if (s == "linear") return Activation::linear;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "softmax_cross_entropy" || s == "cross_entropy") return LossKind::softmax_cross_entropy;
  throw ConfigError("unknown loss '" + s + "'");
}

Network::Network(std::vector<Layer> layers, LossKind loss) : layers_(std::move(layers)), loss_(loss) {
  if (layers_.empty()) throw ShapeError("Network: at least one layer required");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.spec.in_dim == 0 || l.spec.out_dim == 0) {
      throw ShapeError("Network: layer " + std::to_string(i) + " has a zero dimension");
    }
    if (static_cast<std::size_t>(l.weight.rows()) != l.spec.in_dim ||
        static_cast<std::size_t>(l.weight.cols()) != l.spec.out_dim) {
      throw ShapeError("Network: layer " + std::to_string(i) + " weight " + shape_string(l.weight) +
                       " does not match spec");
    }
    if (l.bias.size() != 0 && static_cast<std::size_t>(l.bias.size()) != l.spec.out_dim) {
      throw ShapeError("Network: layer " + std::to_string(i) + " bias length mismatch");
    }
    if (i > 0 && layers_[i - 1].spec.out_dim != l.spec.in_dim) {
      throw ShapeError("Network: layer " + std::to_string(i) + " does not chain with its predecessor");
    }
  }
}

std::vector<LayerId> Network::adapted_layers() const {
  std::vector<LayerId> ids;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].spec.adapt) ids.push_back(i);
  return ids;
}

namespace {

const LowRankView* view_for(const LowRankViews& deltas, std::size_t i) {
  if (i >= deltas.size() || !deltas[i]) return nullptr;
  return &*deltas[i];
}

void check_inputs(const Network& net, const Matrix& inputs, const LowRankViews& deltas) {
  if (inputs.rows() < 1) throw ShapeError("batch must contain at least one row");
  if (static_cast<std::size_t>(inputs.cols()) != net.in_dim()) {
    throw ShapeError("inputs " + shape_string(inputs) + " do not match network input dim " +
                     std::to_string(net.in_dim()));
  }
  if (deltas.size() > net.size()) throw ShapeError("more low-rank terms than layers");
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    const LowRankView* v = view_for(deltas, i);
    if (!v) continue;
    const auto& w = net.layer(i).weight;
    if (v->a.rows() != w.rows() || v->b.cols() != w.cols() || v->a.cols() != v->b.rows()) {
      throw ShapeError("low-rank term for layer " + std::to_string(i) + " " + shape_string(v->a) +
                       "·" + shape_string(v->b) + " does not fit weight " + shape_string(w));
    }
  }
}

Matrix activate(Activation a, const Matrix& pre) {
  switch (a) {
    case Activation::linear: return pre;
    case Activation::relu: return pre.cwiseMax(0.0);
    case Activation::tanh: return pre.array().tanh().matrix();
  }
  return pre;
}

Matrix activation_grad(Activation a, const Matrix& pre, const Matrix& post, const Matrix& upstream) {
  switch (a) {
    case Activation::linear: return upstream;
    case Activation::relu: return (pre.array() > 0.0).select(upstream.array(), 0.0).matrix();
    case Activation::tanh: return (upstream.array() * (1.0 - post.array().square())).matrix();
  }
  return upstream;
}

struct Trace {
  std::vector<Matrix> inputs;  // h_i feeding layer i
  std::vector<Matrix> pre;
  std::vector<Matrix> post;
};

Matrix run_forward(const Network& net, const Matrix& x, const LowRankViews& deltas, Trace* trace) {
  Matrix h = x;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Layer& layer = net.layer(i);
    Matrix pre = h * layer.weight;
    if (const LowRankView* v = view_for(deltas, i)) {
      pre.noalias() += v->scale * ((h * v->a) * v->b);
    }
    if (layer.bias.size() != 0) pre.rowwise() += layer.bias;
    Matrix post = activate(layer.spec.activation, pre);
    if (trace) {
      trace->inputs.push_back(std::move(h));
      trace->pre.push_back(pre);
      trace->post.push_back(post);
    }
    h = std::move(post);
  }
  return h;
}

// Returns the loss and writes dL/d(output) into `grad` when non-null.
double loss_and_output_grad(LossKind kind, const Matrix& out, const Matrix& targets, Matrix* grad) {
  const double batch = static_cast<double>(out.rows());
  if (kind == LossKind::mse) {
    const Matrix diff = out - targets;
    if (grad) *grad = (2.0 / batch) * diff;
    return diff.squaredNorm() / batch;
  }
  const Vector row_max = out.rowwise().maxCoeff();
  const Matrix shifted = out.colwise() - row_max;
  const Vector log_norm = shifted.array().exp().rowwise().sum().log().matrix();
  const Matrix log_prob = shifted.colwise() - log_norm;
  if (grad) *grad = (log_prob.array().exp().matrix() - targets) / batch;
  return -(targets.array() * log_prob.array()).sum() / batch;
}

void check_targets(const Network& net, const Batch& batch) {
  if (batch.targets.rows() != batch.inputs.rows() ||
      static_cast<std::size_t>(batch.targets.cols()) != net.out_dim()) {
    throw ShapeError("targets " + shape_string(batch.targets) + " do not match inputs " +
                     shape_string(batch.inputs) + " / output dim " + std::to_string(net.out_dim()));
  }
}

}  // namespace

LossAndGrads forward_backward(const Network& net, const Batch& batch, const LowRankViews& deltas) {
  check_inputs(net, batch.inputs, deltas);
  check_targets(net, batch);

  Trace trace;
  const Matrix out = run_forward(net, batch.inputs, deltas, &trace);
  Matrix upstream;
  LossAndGrads result;
  result.loss = loss_and_output_grad(net.loss(), out, batch.targets, &upstream);
  if (!std::isfinite(result.loss)) throw NumericalError("forward_backward: non-finite loss");

  result.weight_grads.resize(net.size());
  result.bias_grads.resize(net.size());
  for (std::size_t k = net.size(); k-- > 0;) {
    const Layer& layer = net.layer(k);
    const Matrix dpre = activation_grad(layer.spec.activation, trace.pre[k], trace.post[k], upstream);
    result.weight_grads[k] = trace.inputs[k].transpose() * dpre;
    result.bias_grads[k] = dpre.colwise().sum();
    if (k > 0) {
      upstream = dpre * layer.weight.transpose();
      if (const LowRankView* v = view_for(deltas, k)) {
        upstream.noalias() += v->scale * ((dpre * v->b.transpose()) * v->a.transpose());
      }
    }
  }
  for (std::size_t k = 0; k < net.size(); ++k) {
    if (!result.weight_grads[k].allFinite()) {
      throw NumericalError("forward_backward: non-finite gradient at layer " + std::to_string(k));
    }
  }
  return result;
}

double evaluate_loss(const Network& net, const Batch& batch, const LowRankViews& deltas) {
  check_inputs(net, batch.inputs, deltas);
  check_targets(net, batch);
  const Matrix out = run_forward(net, batch.inputs, deltas, nullptr);
  return loss_and_output_grad(net.loss(), out, batch.targets, nullptr);
}

Matrix predict(const Network& net, const Matrix& inputs, const LowRankViews& deltas) {
  check_inputs(net, inputs, deltas);
  return run_forward(net, inputs, deltas, nullptr);
}

double accuracy(const Network& net, const Batch& batch, const LowRankViews& deltas) {
  check_targets(net, batch);
  const Matrix out = predict(net, batch.inputs, deltas);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::Index pred = 0, truth = 0;
    out.row(i).maxCoeff(&pred);
    batch.targets.row(i).maxCoeff(&truth);
    if (pred == truth) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(out.rows());
}

Network make_network(std::span<const LayerSpec> specs, LossKind loss, Rng& rng, bool with_bias) {
  std::vector<Layer> layers;
  layers.reserve(specs.size());
  for (const LayerSpec& spec : specs) {
    Layer l;
    l.spec = spec;
    l.weight = sample_gaussian(rng, spec.in_dim, spec.out_dim) / std::sqrt(static_cast<double>(spec.in_dim));
    if (with_bias) l.bias = RowVector::Zero(static_cast<Eigen::Index>(spec.out_dim));
    layers.push_back(std::move(l));
  }
  return Network(std::move(layers), loss);
}

}  // namespace gora
