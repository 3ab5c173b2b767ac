#include "gora/trainkit.hpp"

#include "gora/io.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

namespace gora {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adamw"; }
std::string to_string(LrDecay d) { return d == LrDecay::none ? "none" : "cosine"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adamw") return OptimizerKind::adamw;
  throw ConfigError("unknown optimizer '" + s + "'");
}

LrDecay parse_decay(const std::string& s) {
  if (s == "none") return LrDecay::none;
  if (s == "cosine") return LrDecay::cosine;
  throw ConfigError("unknown lr decay '" + s + "'");
}

void OptimConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optim.lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optim betas must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be >= 0");
  if (!(eps > 0.0)) throw ConfigError("optim.eps must be > 0");
  if (!(b_lr_ratio > 0.0)) throw ConfigError("optim.b_lr_ratio must be > 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) throw ConfigError("optim.warmup_ratio must lie in [0, 1]");
  if (!(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0)) throw ConfigError("optim.min_lr_ratio must lie in [0, 1]");
}

double lr_at(std::size_t step, std::size_t total_steps, const OptimConfig& cfg) {
  const double t = static_cast<double>(step);
  const double total = static_cast<double>(total_steps);
  const double warmup = cfg.warmup_ratio * total;
  if (t < warmup) return cfg.lr * t / warmup;
  if (cfg.decay == LrDecay::none || total <= warmup) return cfg.lr;
  const double progress = std::min(1.0, (t - warmup) / (total - warmup));
  const double floor = cfg.min_lr_ratio * cfg.lr;
  return floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Optimizer::Optimizer(OptimConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Optimizer::update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, double lr) const {
  if (cfg_.weight_decay > 0.0) param *= (1.0 - lr * cfg_.weight_decay);
  if (cfg_.algorithm == OptimizerKind::sgd) {
    param -= lr * grad;
    return;
  }
  if (m.size() == 0) {
    m = Matrix::Zero(grad.rows(), grad.cols());
    v = Matrix::Zero(grad.rows(), grad.cols());
  }
  m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
  v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
  const double t = static_cast<double>(t_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
}

void Optimizer::step(AdapterSet& adapters, const AdapterGradMap& grads, double lr) {
  ++t_;
  for (auto& [id, ad] : adapters) {
    auto it = grads.find(id);
    if (it == grads.end()) continue;
    const AdapterGrads& g = it->second;
    if (!g.b.allFinite() || (!ad.freeze_a && !g.a.allFinite())) {
      throw NumericalError("optimizer: non-finite gradient for layer " + std::to_string(id) + " at step " +
                           std::to_string(t_ - 1));
    }
    Moments& mom = state_[id];
    if (!ad.freeze_a) update(ad.a, g.a, mom.m_a, mom.v_a, lr);
    update(ad.b, g.b, mom.m_b, mom.v_b, lr * cfg_.b_lr_ratio);
  }
}

AdapterGradMap compute_adapter_grads(const Network& net, const AdapterSet& adapters, const Batch& batch,
                                     double* loss) {
  const LowRankViews views = low_rank_views(net, adapters);
  LossAndGrads lg = forward_backward(net, batch, views);
  if (loss) *loss = lg.loss;
  AdapterGradMap out;
  for (const auto& [id, ad] : adapters) out.emplace(id, adapter_grads(lg.weight_grads[id], ad));
  return out;
}

std::uint64_t network_checksum(const Network& net) {
  std::ostringstream out(std::ios::binary);
  for (const Layer& l : net.layers()) {
    io::write_matrix(out, l.weight);
    for (Eigen::Index j = 0; j < l.bias.size(); ++j) io::write_f64(out, l.bias(j));
  }
  return io::fnv1a64(out.str());
}

TrainRecord train(const Network& net, AdapterSet& adapters, std::span<const Batch> batches,
                  const OptimConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (batches.empty()) throw ConfigError("train: no batches");
  check_adapters(net, adapters);
  Optimizer optimizer(cfg);
  TrainRecord record;
  record.seed = opts.seed;
  const std::uint64_t base_hash = opts.check_base_frozen ? network_checksum(net) : 0;

  if (opts.eval) record.initial_eval_loss = evaluate_loss(net, *opts.eval, low_rank_views(net, adapters));
  for (std::size_t t = 0; t < opts.steps; ++t) {
    const Batch& batch = batches[t % batches.size()];
    double loss = 0.0;
    const AdapterGradMap grads = compute_adapter_grads(net, adapters, batch, &loss);
    const double lr = lr_at(t + 1, opts.steps, cfg);
    optimizer.step(adapters, grads, lr);
    record.steps.push_back(StepRecord{t, loss, lr});
    if (opts.check_base_frozen && network_checksum(net) != base_hash) {
      throw NumericalError("train: base weights changed at step " + std::to_string(t));
    }
  }
  record.first_batch_loss = record.steps.empty() ? evaluate_loss(net, batches.front(), low_rank_views(net, adapters))
                                                 : record.steps.front().loss;
  if (opts.eval) record.final_eval_loss = evaluate_loss(net, *opts.eval, low_rank_views(net, adapters));
  return record;
}

void write_train_csv(std::ostream& out, const TrainRecord& record) {
  out << "step,loss,lr\n";
  char buf[96];
  for (const StepRecord& s : record.steps) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", s.step, s.loss, s.lr);
    out << buf;
  }
}

std::vector<double> gamma_grid(const AutotuneConfig& cfg) {
  if (!(cfg.start > 0.0) || !(cfg.decay > 0.0 && cfg.decay < 1.0) || !(cfg.floor > 0.0)) {
    throw ConfigError("autotune: need start > 0, 0 < decay < 1, floor > 0");
  }
  std::vector<double> grid;
  for (double g = cfg.start; g >= cfg.floor; g *= cfg.decay) grid.push_back(g);
  // the floor itself is the last candidate
  if (grid.empty() || grid.back() > cfg.floor) grid.push_back(cfg.floor);
  return grid;
}

AutotuneResult autotune_gamma(const Network& net, const PreparedInit& prepared, const Batch& first_batch,
                              XiRule rule, const AutotuneConfig& cfg) {
  AutotuneResult result;
  result.candidates = gamma_grid(cfg);
  bool found = false;
  for (double gamma : result.candidates) {
    const AdapterSet scaled = apply_gamma(prepared, gamma, rule);
    double loss = std::numeric_limits<double>::quiet_NaN();
    try {
      loss = evaluate_loss(net, first_batch, low_rank_views(net, scaled));
    } catch (const NumericalError&) {
    }
    result.losses.push_back(loss);
    if (!std::isfinite(loss)) {
      ++result.skipped;
      continue;
    }
    // Candidates run from large to small, so strict < keeps the larger γ on ties.
    if (!found || loss < result.loss) {
      result.gamma = gamma;
      result.loss = loss;
      found = true;
    }
  }
  if (!found) throw NumericalError("autotune: every γ candidate produced a non-finite loss");
  return result;
}

}  // namespace gora
