#pragma once

#include "gora/network.hpp"

#include <vector>

namespace gora {

/// Low-rank teacher regression: a chain of frozen linear layers W₀ˡ whose
/// targets come from W₀ˡ + ΔWˡ* with rank(ΔWˡ*) = r_true.
struct TeacherTaskConfig {
  std::vector<std::size_t> dims{32, 32};  // layer l maps dims[l] -> dims[l+1]
  std::size_t r_true = 4;
  std::size_t train_samples = 2048;
  std::size_t eval_samples = 512;
  std::size_t batch_size = 32;
  double noise_std = 0.0;
  /// ‖ΔWˡ*‖ scale relative to ‖W₀ˡ‖ for the first layer; later layers are
  /// multiplied by layer_decay^l so layer importance is heterogeneous.
  double delta_scale = 1.0;
  double layer_decay = 1.0;
  Activation activation = Activation::linear;
};

struct TeacherTask {
  Network network;  // frozen base W₀, no biases
  std::vector<Batch> train;
  Batch eval;
  std::vector<Matrix> delta_star;  // diagnostics only
};

TeacherTask make_lowrank_teacher_task(Rng& rng, const TeacherTaskConfig& cfg);

/// Single-layer shorthand.
TeacherTask make_lowrank_teacher_task(Rng& rng, std::size_t m, std::size_t n, std::size_t r_true,
                                      std::size_t n_samples, double noise_std);

struct ClusterTaskConfig {
  std::size_t dims = 16;
  std::size_t classes = 4;
  std::size_t train_samples = 2048;
  std::size_t eval_samples = 256;
  std::size_t batch_size = 32;
  /// Pairwise distance between class means, in units of the within-class σ = 1.
  double separation = 4.0;
};

struct ClusterTask {
  std::vector<Batch> train;
  Batch eval;
};

/// Gaussian clusters with one-hot targets and balanced labels.
ClusterTask make_cluster_classification_task(Rng& rng, const ClusterTaskConfig& cfg);

/// Splits rows into consecutive batches; the trailing partial batch is kept.
std::vector<Batch> split_batches(const Matrix& inputs, const Matrix& targets, std::size_t batch_size);

}  // namespace gora
