#pragma once

#include "gora/numerics.hpp"

#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace gora {

enum class ImportanceMetric {
  sensitivity,   // avg|W ⊙ G|
  nuclear_grad,  // ‖G‖_*
  nuclear_prod,  // ‖W ⊙ G‖_*
};

std::string to_string(ImportanceMetric m);
ImportanceMetric parse_importance_metric(const std::string& s);

inline constexpr std::size_t kUnboundedRank = std::numeric_limits<std::size_t>::max();

struct AllocConfig {
  std::size_t r_ref = 8;
  std::size_t r_min = 4;
  std::size_t r_max = 32;
  ImportanceMetric metric = ImportanceMetric::sensitivity;
  /// Also cap each rank at min(m, n). Without it a rank can exceed the layer
  /// dimension and the Gram matrix of A₀ becomes singular.
  bool cap_at_layer_dim = true;

  /// r_min = r_ref/2, r_max = 4·r_ref.
  static AllocConfig with_defaults(std::size_t r_ref, ImportanceMetric metric = ImportanceMetric::sensitivity);
  void validate() const;
};

struct LayerShape {
  LayerId id = 0;
  std::size_t m = 0;
  std::size_t n = 0;
};

struct RankRecord {
  LayerId id = 0;
  std::size_t m = 0;
  std::size_t n = 0;
  double importance = 0.0;
  double advantage = 0.0;
  double budget = 0.0;  // p = b·a
  std::size_t rank = 0;

  std::size_t params() const { return rank * (m + n); }

  bool operator==(const RankRecord&) const = default;
};

/// Per-layer allocation. Totals are always derived from the records.
struct RankPlan {
  std::size_t r_ref = 0;
  std::vector<RankRecord> records;

  double total_budget() const;
  std::size_t allocated_params() const;
  /// Trainable parameters of uniform-rank LoRA at r_ref.
  std::size_t lora_params() const;
  /// (allocated − LoRA-equivalent) / LoRA-equivalent.
  double param_deviation() const;
  const RankRecord* find(LayerId id) const;

  bool operator==(const RankPlan&) const = default;
};

double importance(const Matrix& w, const Matrix& g, ImportanceMetric metric);

/// aⁱ = Iⁱ / ΣI. Throws NumericalError when every importance is zero.
std::vector<double> advantages(std::span<const double> importances);

/// b = Σ √(mᵢ + nᵢ)·r_ref.
double total_budget(std::span<const LayerShape> layers, std::size_t r_ref);

/// rⁱ = clip(round(b·aⁱ/√(mᵢ+nᵢ)), r_min, min(r_max, min(mᵢ, nᵢ))), with
/// rounding half away from zero. `importances` is optional bookkeeping.
RankPlan allocate_ranks(const AllocConfig& cfg, std::span<const LayerShape> layers,
                        std::span<const double> advantages, std::span<const double> importances = {});

/// Uniform r_ref plan (vanilla LoRA).
RankPlan uniform_plan(std::span<const LayerShape> layers, std::size_t r_ref);

/// Whitespace-separated table: layer m n importance advantage budget rank.
void write_plan_table(std::ostream& out, const RankPlan& plan);
RankPlan read_plan_table(std::istream& in);

}  // namespace gora
