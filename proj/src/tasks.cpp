#include "gora/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gora {

std::vector<Batch> split_batches(const Matrix& inputs, const Matrix& targets, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<Batch> out;
  const auto rows = static_cast<std::size_t>(inputs.rows());
  for (std::size_t start = 0; start < rows; start += batch_size) {
    const auto len = static_cast<Eigen::Index>(std::min(batch_size, rows - start));
    const auto s = static_cast<Eigen::Index>(start);
    out.push_back(Batch{inputs.middleRows(s, len), targets.middleRows(s, len)});
  }
  return out;
}

TeacherTask make_lowrank_teacher_task(Rng& rng, const TeacherTaskConfig& cfg) {
  if (cfg.dims.size() < 2) throw ConfigError("teacher task needs at least two dims");
  for (std::size_t d : cfg.dims)
    if (d == 0) throw ConfigError("teacher task dims must be positive");
  if (cfg.train_samples == 0 || cfg.eval_samples == 0) throw ConfigError("teacher task needs samples");

  std::vector<Layer> base;
  std::vector<Matrix> teacher_weights;
  std::vector<Matrix> deltas;
  double layer_scale = cfg.delta_scale;
  for (std::size_t l = 0; l + 1 < cfg.dims.size(); ++l) {
    const std::size_t m = cfg.dims[l];
    const std::size_t n = cfg.dims[l + 1];
    if (cfg.r_true > std::min(m, n)) {
      throw ConfigError("r_true " + std::to_string(cfg.r_true) + " exceeds min(m, n) of layer " +
                        std::to_string(l));
    }
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
    Matrix w0 = sample_gaussian(rng, m, n) * inv_sqrt_m;
    Matrix delta = Matrix::Zero(m, n);
    if (cfg.r_true > 0) {
      const Matrix u = sample_gaussian(rng, m, cfg.r_true);
      const Matrix v = sample_gaussian(rng, cfg.r_true, n);
      // Entries of u·v have variance r_true; rescale to match W₀'s entry scale.
      delta = layer_scale * (u * v) * (inv_sqrt_m / std::sqrt(static_cast<double>(cfg.r_true)));
    }
    teacher_weights.push_back(w0 + delta);
    deltas.push_back(std::move(delta));
    base.push_back(Layer{LayerSpec{m, n, cfg.activation, true}, std::move(w0), RowVector()});
    layer_scale *= cfg.layer_decay;
  }

  std::vector<Layer> teacher_layers;
  for (std::size_t l = 0; l < base.size(); ++l) {
    teacher_layers.push_back(Layer{base[l].spec, teacher_weights[l], RowVector()});
  }
  const Network teacher(std::move(teacher_layers), LossKind::mse);

  auto make_split = [&](std::size_t samples) {
    const Matrix x = sample_gaussian(rng, samples, cfg.dims.front());
    Matrix y = predict(teacher, x);
    if (cfg.noise_std > 0.0) y += cfg.noise_std * sample_gaussian(rng, samples, cfg.dims.back());
    return std::pair<Matrix, Matrix>(x, y);
  };
  auto [x_train, y_train] = make_split(cfg.train_samples);
  auto [x_eval, y_eval] = make_split(cfg.eval_samples);

  return TeacherTask{Network(std::move(base), LossKind::mse), split_batches(x_train, y_train, cfg.batch_size),
                     Batch{std::move(x_eval), std::move(y_eval)}, std::move(deltas)};
}

TeacherTask make_lowrank_teacher_task(Rng& rng, std::size_t m, std::size_t n, std::size_t r_true,
                                      std::size_t n_samples, double noise_std) {
  TeacherTaskConfig cfg;
  cfg.dims = {m, n};
  cfg.r_true = r_true;
  cfg.train_samples = n_samples;
  cfg.eval_samples = n_samples;
  cfg.noise_std = noise_std;
  return make_lowrank_teacher_task(rng, cfg);
}

ClusterTask make_cluster_classification_task(Rng& rng, const ClusterTaskConfig& cfg) {
  if (cfg.classes < 2) throw ConfigError("cluster task needs at least two classes");
  if (cfg.dims == 0) throw ConfigError("cluster task dims must be positive");

  // Class means on scaled axes give pairwise distance exactly `separation`;
  // with more classes than axes, fall back to random directions.
  Matrix means = Matrix::Zero(cfg.classes, cfg.dims);
  const double radius = cfg.separation / std::sqrt(2.0);
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    if (cfg.classes <= cfg.dims) {
      means(k, k) = radius;
    } else {
      RowVector dir = sample_gaussian(rng, 1, cfg.dims);
      means.row(k) = radius * dir / dir.norm();
    }
  }
  // Random rotation so the clusters are not axis aligned.
  const Eigen::HouseholderQR<Matrix> qr(sample_gaussian(rng, cfg.dims, cfg.dims));
  const Matrix rotation = qr.householderQ();
  means = means * rotation;

  auto make_split = [&](std::size_t samples) {
    std::vector<std::size_t> labels(samples);
    for (std::size_t i = 0; i < samples; ++i) labels[i] = i % cfg.classes;
    for (std::size_t i = samples; i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.next_u64() % i);
      std::swap(labels[i - 1], labels[j]);
    }
    Matrix x = sample_gaussian(rng, samples, cfg.dims);
    Matrix y = Matrix::Zero(samples, cfg.classes);
    for (std::size_t i = 0; i < samples; ++i) {
      x.row(i) += means.row(labels[i]);
      y(i, labels[i]) = 1.0;
    }
    return std::pair<Matrix, Matrix>(std::move(x), std::move(y));
  };
  auto [x_train, y_train] = make_split(cfg.train_samples);
  auto [x_eval, y_eval] = make_split(cfg.eval_samples);
  return ClusterTask{split_batches(x_train, y_train, cfg.batch_size), Batch{std::move(x_eval), std::move(y_eval)}};
}

}  // namespace gora
