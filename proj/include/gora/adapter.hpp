#pragma once

#include "gora/network.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

namespace gora {

/// lora: s = α/r. rslora: s = α/√r.
enum class ScalingMode { lora, rslora };

std::string to_string(ScalingMode mode);
ScalingMode parse_scaling_mode(const std::string& s);

double scaling_factor(double alpha, std::size_t rank, ScalingMode mode);

/// Per-layer low-rank pair. The scale is always derived from (alpha, mode, rank).
struct AdapterState {
  Matrix a;  // m × r
  Matrix b;  // r × n
  double alpha = 16.0;
  ScalingMode mode = ScalingMode::rslora;
  bool freeze_a = false;

  std::size_t rank() const { return static_cast<std::size_t>(a.cols()); }
  std::size_t in_dim() const { return static_cast<std::size_t>(a.rows()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(b.cols()); }
  double scale() const { return scaling_factor(alpha, rank(), mode); }

  /// Throws ShapeError unless A·B chains, fits (m, n), and r ≤ min(m, n).
  void validate(std::size_t m, std::size_t n) const;
};

/// Adapter registry keyed by layer index; layers without an entry train nothing.
using AdapterSet = std::map<LayerId, AdapterState>;

/// Settings shared by every adapter of a run.
struct AdapterSpec {
  double alpha = 16.0;
  ScalingMode mode = ScalingMode::rslora;
  bool freeze_a = false;
};

/// x·W₀ + s·((x·A)·B); the merged weight is never formed.
Matrix adapter_forward(const Matrix& x, const Matrix& w0, const AdapterState& ad);

struct AdapterGrads {
  Matrix a;
  Matrix b;
};

/// gA = s·g·Bᵀ (zero when A is frozen), gB = s·Aᵀ·g, for g = dL/dW.
AdapterGrads adapter_grads(const Matrix& g, const AdapterState& ad);

/// s·A·B.
Matrix delta(const AdapterState& ad);
/// W₀ + s·A·B.
Matrix merge(const Matrix& w0, const AdapterState& ad);

/// Validates every adapter against its host layer.
void check_adapters(const Network& net, const AdapterSet& adapters);

/// Views for forward_backward/evaluate_loss; the set must outlive the result.
LowRankViews low_rank_views(const Network& net, const AdapterSet& adapters);

// GADP checkpoint: a sequence of records, each
//   "GADP", u32 layer index, u32 r, f64 alpha, u8 mode (0 lora, 1 rslora),
//   u8 freeze_a, GMAT A, GMAT B.
// Base weights are never written.
void write_adapters(std::ostream& out, const AdapterSet& adapters);
AdapterSet read_adapters(std::istream& in);
std::string serialize_adapters(const AdapterSet& adapters);
AdapterSet deserialize_adapters(const std::string& bytes);

/// FNV-1a over the serialized checkpoint bytes.
std::uint64_t adapter_checksum(const AdapterSet& adapters);

}  // namespace gora
