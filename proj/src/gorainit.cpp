#include "gora/gorainit.hpp"

#include <chrono>
#include <cmath>

namespace gora {

std::string to_string(XiRule r) { return r == XiRule::magnitude_matched ? "magnitude_matched" : "exact_step"; }

XiRule parse_xi_rule(const std::string& s) {
  if (s == "magnitude_matched") return XiRule::magnitude_matched;
  if (s == "exact_step") return XiRule::exact_step;
  throw ConfigError("unknown xi rule '" + s + "'");
}

double InitConfig::default_gamma(std::size_t r_ref) {
  if (r_ref <= 8) return 5e-2;
  if (r_ref <= 32) return 1e-2;
  return 5e-3;
}

Matrix init_A(Rng& rng, std::size_t m, std::size_t r) {
  if (r == 0) throw ShapeError("init_A: rank must be >= 1");
  return sample_kaiming_uniform(rng, m, r, m);
}

Matrix compress_init_B(const Matrix& a0, const Matrix& g) {
  if (a0.rows() != g.rows()) {
    throw ShapeError("compress_init_B: A0 " + shape_string(a0) + " vs G " + shape_string(g));
  }
  const Matrix gram = a0.transpose() * a0;
  try {
    return -cholesky_solve(gram, a0.transpose() * g);
  } catch (const SingularGramError& e) {
    throw SingularGramError(std::string(e.what()) + "; A0 is rank deficient, re-seed it");
  }
}

double xi(double gamma, double alpha, std::size_t m, std::size_t r, ScalingMode mode) {
  if (!(alpha > 0.0)) throw ConfigError("xi: alpha must be positive");
  const double md = static_cast<double>(m);
  const double rd = static_cast<double>(r);
  return mode == ScalingMode::lora ? gamma * std::sqrt(rd * md) / alpha : gamma * std::sqrt(md) / alpha;
}

double xi_for(XiRule rule, double gamma, double alpha, std::size_t m, std::size_t r, ScalingMode mode) {
  if (rule == XiRule::magnitude_matched) return xi(gamma, alpha, m, r, mode);
  return gamma / scaling_factor(alpha, r, mode);
}

ReconstructionError reconstruction_error(const Matrix& a0, const Matrix& b0_scaled, const Matrix& g, double gamma,
                                         double s) {
  if (a0.cols() != b0_scaled.rows() || a0.rows() != g.rows() || b0_scaled.cols() != g.cols()) {
    throw ShapeError("reconstruction_error: inconsistent shapes");
  }
  const double target = gamma * g.norm();
  if (target == 0.0) throw NumericalError("reconstruction_error: relative error undefined for γG = 0");
  const Matrix e = s * (a0 * b0_scaled) + gamma * g;
  return {e.cwiseAbs().mean(), e.norm() / target};
}

double projection_residual(const Matrix& a0, const Matrix& g) {
  const double gn = g.norm();
  if (gn == 0.0) throw NumericalError("projection_residual: G = 0");
  const Matrix b0 = compress_init_B(a0, g);  // A₀B₀ = −PG
  return (g + a0 * b0).norm() / gn;
}

double frobenius_expectation_oracle(Rng& rng, std::size_t m, std::size_t n, std::size_t r, std::size_t trials) {
  if (trials == 0) throw ConfigError("frobenius_expectation_oracle: trials must be positive");
  double total = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Matrix a = sample_gaussian(rng, m, r);
    const Matrix g = sample_gaussian(rng, m, n);
    total += (a * compress_init_B(a, g)).norm();
  }
  return total / static_cast<double>(trials);
}

std::uint64_t init_seed(std::uint64_t root, LayerId id, int attempt) {
  return derive_seed(derive_seed(root, "init_A", id), "attempt", static_cast<std::uint64_t>(attempt));
}

PreparedInit prepare_gora_init(const RankPlan& plan, const ProbeResult& probe, const AdapterSpec& spec,
                               const InitConfig& cfg) {
  PreparedInit out;
  for (const RankRecord& rec : plan.records) {
    if (rec.rank == 0) continue;
    const Matrix& g = probe.grad(rec.id);
    if (static_cast<std::size_t>(g.rows()) != rec.m || static_cast<std::size_t>(g.cols()) != rec.n) {
      throw ShapeError("init: probe gradient for layer " + std::to_string(rec.id) + " does not match plan");
    }
    for (int attempt = 0;; ++attempt) {
      Rng rng(init_seed(cfg.seed, rec.id, attempt));
      Matrix a0 = init_A(rng, rec.m, rec.rank);
      try {
        Matrix b0 = compress_init_B(a0, g);
        AdapterState ad{std::move(a0), std::move(b0), spec.alpha, spec.mode, spec.freeze_a};
        ad.validate(rec.m, rec.n);
        out.unscaled.emplace(rec.id, std::move(ad));
        LayerInitRecord lr;
        lr.id = rec.id;
        lr.rank = rec.rank;
        lr.retries = attempt;
        out.records.push_back(lr);
        out.grads.push_back(g);
        break;
      } catch (const SingularGramError&) {
        if (attempt >= cfg.max_retries) throw;
      }
    }
  }
  return out;
}

AdapterSet apply_gamma(const PreparedInit& prepared, double gamma, XiRule rule) {
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  AdapterSet out = prepared.unscaled;
  for (auto& [id, ad] : out) {
    const double factor = xi_for(rule, gamma, ad.alpha, ad.in_dim(), ad.rank(), ad.mode);
    if (factor == 0.0) {
      ad.b.setZero();
    } else {
      ad.b *= factor;
    }
  }
  return out;
}

InitReport build_init_report(const PreparedInit& prepared, const AdapterSet& scaled, double gamma, XiRule rule) {
  InitReport report;
  report.gamma = gamma;
  report.xi_rule = rule;
  for (std::size_t i = 0; i < prepared.records.size(); ++i) {
    LayerInitRecord rec = prepared.records[i];
    const AdapterState& ad = scaled.at(rec.id);
    const Matrix& g = prepared.grads[i];
    rec.xi = xi_for(rule, gamma, ad.alpha, ad.in_dim(), ad.rank(), ad.mode);
    if (g.norm() > 0.0) {
      rec.projection_residual = projection_residual(ad.a, g);
      if (gamma > 0.0) {
        const auto err = reconstruction_error(ad.a, ad.b, g, gamma, ad.scale());
        rec.abs_error = err.absolute;
        rec.rel_error = err.relative;
      }
    }
    report.layers.push_back(rec);
  }
  return report;
}

InitResult gora_initialize(const RankPlan& plan, const ProbeResult& probe, const AdapterSpec& spec,
                           const InitConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  PreparedInit prepared = prepare_gora_init(plan, probe, spec, cfg);
  AdapterSet adapters = apply_gamma(prepared, cfg.gamma, cfg.xi_rule);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  InitReport report = build_init_report(prepared, adapters, cfg.gamma, cfg.xi_rule);
  report.seconds = seconds;
  return {std::move(adapters), std::move(report)};
}

AdapterSet lora_initialize(const RankPlan& plan, const AdapterSpec& spec, std::uint64_t seed) {
  AdapterSet out;
  for (const RankRecord& rec : plan.records) {
    if (rec.rank == 0) continue;
    Rng rng(init_seed(seed, rec.id, 0));
    Matrix a0 = init_A(rng, rec.m, rec.rank);
    AdapterState ad{std::move(a0), Matrix::Zero(rec.rank, rec.n), spec.alpha, spec.mode, spec.freeze_a};
    out.emplace(rec.id, std::move(ad));
  }
  return out;
}

}  // namespace gora
