#pragma once

#include "gora/adapter.hpp"
#include "gora/gorainit.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace gora {

enum class OptimizerKind { sgd, adamw };
enum class LrDecay { none, cosine };

std::string to_string(OptimizerKind k);
std::string to_string(LrDecay d);
OptimizerKind parse_optimizer(const std::string& s);
LrDecay parse_decay(const std::string& s);

struct OptimConfig {
  OptimizerKind algorithm = OptimizerKind::adamw;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double eps = 1e-8;
  /// B matrices train at lr·b_lr_ratio.
  double b_lr_ratio = 16.0;
  double warmup_ratio = 0.03;
  LrDecay decay = LrDecay::cosine;
  double min_lr_ratio = 0.0;

  void validate() const;
};

/// Linear warmup from 0 over warmup_ratio·total steps, then cosine from lr
/// down to min_lr_ratio·lr (or constant lr when decay is none).
double lr_at(std::size_t step, std::size_t total_steps, const OptimConfig& cfg);

using AdapterGradMap = std::map<LayerId, AdapterGrads>;

/// SGD or AdamW (bias-corrected, decoupled weight decay) over adapter factors.
/// Frozen A matrices are never touched.
class Optimizer {
 public:
  explicit Optimizer(OptimConfig cfg);

  /// One update with base learning rate `lr` (A uses lr, B uses lr·b_lr_ratio).
  void step(AdapterSet& adapters, const AdapterGradMap& grads, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  struct Moments {
    Matrix m_a, v_a, m_b, v_b;
  };
  void update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, double lr) const;

  OptimConfig cfg_;
  std::map<LayerId, Moments> state_;
  std::size_t t_ = 0;
};

/// Exact adapter gradients for every adapter in the set at the given batch.
AdapterGradMap compute_adapter_grads(const Network& net, const AdapterSet& adapters, const Batch& batch,
                                     double* loss = nullptr);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;  // training-batch loss before the update
  double lr = 0.0;    // base lr used for the update

  bool operator==(const StepRecord&) const = default;
};

struct TrainRecord {
  std::vector<StepRecord> steps;
  double first_batch_loss = 0.0;
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const TrainRecord&) const = default;
};

struct TrainOptions {
  std::size_t steps = 0;
  const Batch* eval = nullptr;
  std::uint64_t seed = 0;
  /// Re-hash base weights after every step and abort if they changed.
  bool check_base_frozen = false;
};

/// Trains adapters in place; batches are consumed cyclically in order.
TrainRecord train(const Network& net, AdapterSet& adapters, std::span<const Batch> batches,
                  const OptimConfig& cfg, const TrainOptions& opts);

void write_train_csv(std::ostream& out, const TrainRecord& record);

struct AutotuneConfig {
  double start = 1.0;
  double decay = 0.9;
  double floor = 5e-5;
};

/// start, start·decay, ... while the candidate stays >= floor, then floor.
/// 1.0/0.9/5e-5 gives 94 geometric points plus 5e-5.
std::vector<double> gamma_grid(const AutotuneConfig& cfg);

struct AutotuneResult {
  double gamma = 0.0;
  double loss = 0.0;
  std::vector<double> candidates;
  std::vector<double> losses;  // NaN where a candidate was skipped
  std::size_t skipped = 0;
};

/// Picks the γ whose scaled init minimizes the first-batch loss (forward
/// only). Ties go to the larger γ. Non-finite candidates are skipped.
AutotuneResult autotune_gamma(const Network& net, const PreparedInit& prepared, const Batch& first_batch,
                              XiRule rule, const AutotuneConfig& cfg = {});

/// Checksum of every base weight and bias, for frozen-base checks.
std::uint64_t network_checksum(const Network& net);

}  // namespace gora
