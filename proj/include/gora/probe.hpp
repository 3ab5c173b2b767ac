#pragma once

#include "gora/allocate.hpp"
#include "gora/network.hpp"

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace gora {

/// Which gradient the per-step importance trace is computed from.
enum class ImportanceSource { running_mean, last_batch };

std::string to_string(ImportanceSource s);
ImportanceSource parse_importance_source(const std::string& s);

struct ProbeConfig {
  std::size_t max_steps = 64;  // N
  bool adaptive = false;
  double threshold = 0.01;
  /// Accumulate into a simulated host buffer instead of working memory.
  bool offload = true;
  ImportanceSource source = ImportanceSource::running_mean;
  ImportanceMetric metric = ImportanceMetric::sensitivity;

  void validate() const;
};

/// Byte accounting for simulated buffers. Each tag may be live at most once,
/// so a second allocation under a live tag is a single-copy violation.
class MemoryLedger {
 public:
  void allocate(const std::string& tag, std::size_t bytes);
  void release(const std::string& tag);
  bool live(const std::string& tag) const { return live_.count(tag) != 0; }
  std::size_t current_bytes() const { return current_; }
  std::size_t peak_bytes() const { return peak_; }

 private:
  std::map<std::string, std::size_t> live_;
  std::size_t current_ = 0;
  std::size_t peak_ = 0;
};

struct ProbeResult {
  std::vector<LayerId> layers;
  std::vector<Matrix> grads;  // G per layer, parallel to `layers`
  std::size_t steps_used = 0;
  std::size_t batches_used = 0;
  /// Normalized importances after each step (empty entry when all were zero).
  std::vector<std::vector<double>> importance_trace;
  double threshold = 0.0;
  bool adaptive = false;
  std::size_t buffer_peak_bytes = 0;

  const Matrix& grad(LayerId id) const;
};

/// L∞ distance between consecutive normalized importance vectors is
/// strictly below `threshold`.
bool adaptive_stop_check(std::span<const double> prev, std::span<const double> cur, double threshold);

/// Running accumulation shared by the single-worker and simulated
/// data-parallel probes. Gradients are summed in call order into one buffer
/// per layer; the mean is taken once at the end.
class ProbeSession {
 public:
  ProbeSession(const Network& net, const ProbeConfig& cfg);

  const std::vector<LayerId>& layers() const { return layers_; }
  /// Adds `g` into the buffer of the i-th target layer.
  void accumulate(std::size_t slot, const Matrix& g);
  void count_batches(std::size_t n) { batches_ += n; }
  /// Closes an accumulation step; returns true when adaptive mode says stop.
  /// `last_batch` holds per-slot gradients of the step's final batch.
  bool end_step(const std::vector<Matrix>& last_batch);
  std::size_t steps() const { return steps_; }
  MemoryLedger& ledger() { return ledger_; }

  ProbeResult finish();

 private:
  std::vector<double> normalized_importances(const std::vector<Matrix>& grads) const;

  const Network& net_;
  ProbeConfig cfg_;
  std::vector<LayerId> layers_;
  std::vector<Matrix> buffers_;
  std::size_t batches_ = 0;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> trace_;
  MemoryLedger ledger_;
};

/// Averages dL/dW₀ of the adapted layers over the leading batches of
/// `stream`. Weights are never modified and no optimizer state exists.
ProbeResult run_probe(const Network& net, std::span<const Batch> stream, const ProbeConfig& cfg);

// GPRB: "GPRB", u32 layer count, u64 steps_used, u64 batches_used,
// f64 threshold, u8 adaptive, u64 buffer_peak_bytes, per layer (u32 id, GMAT G),
// u32 trace length, per entry (u32 len, f64...).
void write_probe(std::ostream& out, const ProbeResult& result);
ProbeResult read_probe(std::istream& in);

}  // namespace gora
