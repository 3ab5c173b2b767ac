#include "gora/allocate.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace gora {

std::string to_string(ImportanceMetric m) {
  switch (m) {
    case ImportanceMetric::sensitivity: return "sensitivity";
    case ImportanceMetric::nuclear_grad: return "nuclear_grad";
    case ImportanceMetric::nuclear_prod: return "nuclear_prod";
  }
  return "?";
}

ImportanceMetric parse_importance_metric(const std::string& s) {
  if (s == "sensitivity") return ImportanceMetric::sensitivity;
  if (s == "nuclear_grad") return ImportanceMetric::nuclear_grad;
  if (s == "nuclear_prod") return ImportanceMetric::nuclear_prod;
  throw ConfigError("unknown importance metric '" + s + "'");
}

AllocConfig AllocConfig::with_defaults(std::size_t r_ref, ImportanceMetric metric) {
  return AllocConfig{r_ref, r_ref / 2, 4 * r_ref, metric};
}

void AllocConfig::validate() const {
  if (r_ref == 0) throw ConfigError("r_ref must be positive");
  if (r_max == 0) throw ConfigError("r_max must be positive");
  if (r_min > r_ref || r_ref > r_max) {
    throw ConfigError("rank bounds must satisfy r_min <= r_ref <= r_max (got " + std::to_string(r_min) +
                      ", " + std::to_string(r_ref) + ", " + std::to_string(r_max) + ")");
  }
}

double RankPlan::total_budget() const {
  double b = 0.0;
  for (const auto& r : records) b += std::sqrt(static_cast<double>(r.m + r.n)) * static_cast<double>(r_ref);
  return b;
}

std::size_t RankPlan::allocated_params() const {
  std::size_t p = 0;
  for (const auto& r : records) p += r.params();
  return p;
}

std::size_t RankPlan::lora_params() const {
  std::size_t p = 0;
  for (const auto& r : records) p += r_ref * (r.m + r.n);
  return p;
}

double RankPlan::param_deviation() const {
  const double lora = static_cast<double>(lora_params());
  if (lora == 0.0) return 0.0;
  return (static_cast<double>(allocated_params()) - lora) / lora;
}

const RankRecord* RankPlan::find(LayerId id) const {
  for (const auto& r : records)
    if (r.id == id) return &r;
  return nullptr;
}

double importance(const Matrix& w, const Matrix& g, ImportanceMetric metric) {
  require_same_shape(w, g, "importance");
  switch (metric) {
    case ImportanceMetric::sensitivity: return hadamard_abs_avg(w, g);
    case ImportanceMetric::nuclear_grad: return nuclear_norm(g);
    case ImportanceMetric::nuclear_prod: return nuclear_norm(Matrix(w.cwiseProduct(g)));
  }
  return 0.0;
}

std::vector<double> advantages(std::span<const double> importances) {
  if (importances.empty()) throw NumericalError("advantages: empty importance set");
  double total = 0.0;
  for (double v : importances) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw NumericalError("advantages: importances must be finite and >= 0");
    total += v;
  }
  if (total == 0.0) throw NumericalError("uninformative probe: every layer importance is zero");
  std::vector<double> out;
  out.reserve(importances.size());
  for (double v : importances) out.push_back(v / total);
  return out;
}

double total_budget(std::span<const LayerShape> layers, std::size_t r_ref) {
  double b = 0.0;
  for (const auto& l : layers) b += std::sqrt(static_cast<double>(l.m + l.n)) * static_cast<double>(r_ref);
  return b;
}

RankPlan allocate_ranks(const AllocConfig& cfg, std::span<const LayerShape> layers,
                        std::span<const double> adv, std::span<const double> importances) {
  cfg.validate();
  if (adv.size() != layers.size()) throw ShapeError("allocate_ranks: advantages/layers length mismatch");
  if (!importances.empty() && importances.size() != layers.size()) {
    throw ShapeError("allocate_ranks: importances/layers length mismatch");
  }
  const double sum = std::accumulate(adv.begin(), adv.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-9) throw NumericalError("allocate_ranks: advantages are not normalized");

  const double b = total_budget(layers, cfg.r_ref);
  RankPlan plan;
  plan.r_ref = cfg.r_ref;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    RankRecord rec;
    rec.id = l.id;
    rec.m = l.m;
    rec.n = l.n;
    rec.importance = importances.empty() ? 0.0 : importances[i];
    rec.advantage = adv[i];
    rec.budget = b * adv[i];
    // std::round rounds halfway cases away from zero.
    const double raw = std::round(rec.budget / std::sqrt(static_cast<double>(l.m + l.n)));
    const std::size_t upper = cfg.cap_at_layer_dim ? std::min(cfg.r_max, std::min(l.m, l.n)) : cfg.r_max;
    const auto unclipped = static_cast<std::size_t>(std::max(raw, 0.0));
    rec.rank = std::min(std::max(unclipped, cfg.r_min), upper);
    plan.records.push_back(rec);
  }
  return plan;
}

RankPlan uniform_plan(std::span<const LayerShape> layers, std::size_t r_ref) {
  RankPlan plan;
  plan.r_ref = r_ref;
  const double b = total_budget(layers, r_ref);
  const double share = layers.empty() ? 0.0 : 1.0 / static_cast<double>(layers.size());
  for (const auto& l : layers) {
    plan.records.push_back(RankRecord{l.id, l.m, l.n, 0.0, share, b * share, std::min(r_ref, std::min(l.m, l.n))});
  }
  return plan;
}

void write_plan_table(std::ostream& out, const RankPlan& plan) {
  char buf[256];
  out << "# r_ref " << plan.r_ref << "\n";
  out << "# layer m n importance advantage budget rank\n";
  for (const auto& r : plan.records) {
    std::snprintf(buf, sizeof buf, "%zu %zu %zu %.17g %.17g %.17g %zu\n", r.id, r.m, r.n, r.importance,
                  r.advantage, r.budget, r.rank);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "# total_budget %.6f allocated_params %zu lora_params %zu deviation %.4f\n",
                plan.total_budget(), plan.allocated_params(), plan.lora_params(), plan.param_deviation());
  out << buf;
}

RankPlan read_plan_table(std::istream& in) {
  RankPlan plan;
  bool have_ref = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    if (line[0] == '#') {
      std::string hash, key;
      ss >> hash >> key;
      if (key == "r_ref") {
        ss >> plan.r_ref;
        have_ref = true;
      }
      continue;
    }
    RankRecord r;
    if (!(ss >> r.id >> r.m >> r.n >> r.importance >> r.advantage >> r.budget >> r.rank)) {
      throw FormatError("rank plan: malformed row '" + line + "'");
    }
    plan.records.push_back(r);
  }
  if (!have_ref) throw FormatError("rank plan: missing r_ref header");
  return plan;
}

}  // namespace gora
