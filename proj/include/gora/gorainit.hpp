#pragma once

#include "gora/adapter.hpp"
#include "gora/allocate.hpp"
#include "gora/probe.hpp"
#include "gora/rng.hpp"

#include <string>
#include <vector>

namespace gora {

/// How the B₀ multiplier ξ is derived from γ.
enum class XiRule {
  /// ξ = γ√(rm)/α (lora) or γ√m/α (rslora): s·A₀·(ξB₀) matches γ‖G‖ in
  /// expectation for a random A₀.
  magnitude_matched,
  /// ξ = γ/s: s·A₀·(ξB₀) = −γ·P·G exactly, P the projector onto col(A₀).
  exact_step,
};

std::string to_string(XiRule r);
XiRule parse_xi_rule(const std::string& s);

struct InitConfig {
  double gamma = 5e-2;
  std::uint64_t seed = 0;
  XiRule xi_rule = XiRule::magnitude_matched;
  /// Re-draws of A₀ after a singular Gram matrix before giving up.
  int max_retries = 3;

  /// 5e-2 for r_ref ≤ 8, 1e-2 up to 32, 5e-3 beyond.
  static double default_gamma(std::size_t r_ref);
};

/// Kaiming-uniform A₀ ∈ R^{m×r} with fan_in = m.
Matrix init_A(Rng& rng, std::size_t m, std::size_t r);

/// B₀ = −(A₀ᵀA₀)⁻¹A₀ᵀG, so that A₀B₀ = −P·G.
Matrix compress_init_B(const Matrix& a0, const Matrix& g);

double xi(double gamma, double alpha, std::size_t m, std::size_t r, ScalingMode mode);
double xi_for(XiRule rule, double gamma, double alpha, std::size_t m, std::size_t r, ScalingMode mode);

struct ReconstructionError {
  double absolute = 0.0;  // avg|E|
  double relative = 0.0;  // ‖E‖_F / ‖γG‖_F
};

/// E = s·A₀·B₀_scaled + γ·G. Throws NumericalError when γG = 0.
ReconstructionError reconstruction_error(const Matrix& a0, const Matrix& b0_scaled, const Matrix& g,
                                         double gamma, double s);

/// ‖(I − P)G‖_F / ‖G‖_F, independent of any scaling.
double projection_residual(const Matrix& a0, const Matrix& g);

/// Monte Carlo mean of ‖A(AᵀA)⁻¹AᵀG‖_F for standard-normal A ∈ R^{m×r}, G ∈ R^{m×n}.
double frobenius_expectation_oracle(Rng& rng, std::size_t m, std::size_t n, std::size_t r, std::size_t trials);

struct LayerInitRecord {
  LayerId id = 0;
  std::size_t rank = 0;
  double xi = 0.0;
  double abs_error = 0.0;
  double rel_error = 0.0;
  double projection_residual = 0.0;
  int retries = 0;
};

struct InitReport {
  double gamma = 0.0;
  XiRule xi_rule = XiRule::magnitude_matched;
  std::vector<LayerInitRecord> layers;
  double seconds = 0.0;  // wall clock, excluded from checksummed artifacts
};

/// Sampled A₀ and unscaled B₀ for every layer with a nonzero planned rank.
struct PreparedInit {
  AdapterSet unscaled;
  std::vector<LayerInitRecord> records;  // xi/error fields unset
  std::vector<Matrix> grads;             // G per adapter, same order as `records`
};

/// Seed for layer `id`'s A₀ on attempt `attempt`.
std::uint64_t init_seed(std::uint64_t root, LayerId id, int attempt);

PreparedInit prepare_gora_init(const RankPlan& plan, const ProbeResult& probe, const AdapterSpec& spec,
                               const InitConfig& cfg);

/// Scales each B₀ by ξ(γ). With ξ = 0 the result is exactly zero (no −0.0).
AdapterSet apply_gamma(const PreparedInit& prepared, double gamma, XiRule rule);

struct InitResult {
  AdapterSet adapters;
  InitReport report;
};

InitResult gora_initialize(const RankPlan& plan, const ProbeResult& probe, const AdapterSpec& spec,
                           const InitConfig& cfg);

/// Vanilla LoRA: the same Kaiming A₀ stream as GoRA's first attempt, B₀ = 0.
AdapterSet lora_initialize(const RankPlan& plan, const AdapterSpec& spec, std::uint64_t seed);

InitReport build_init_report(const PreparedInit& prepared, const AdapterSet& scaled, double gamma, XiRule rule);

}  // namespace gora
