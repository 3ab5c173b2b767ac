#include "gora/probe.hpp"

#include "gora/io.hpp"

#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

namespace gora {

std::string to_string(ImportanceSource s) {
  return s == ImportanceSource::running_mean ? "running_mean" : "last_batch";
}

ImportanceSource parse_importance_source(const std::string& s) {
  if (s == "running_mean") return ImportanceSource::running_mean;
  if (s == "last_batch") return ImportanceSource::last_batch;
  throw ConfigError("unknown importance source '" + s + "'");
}

void ProbeConfig::validate() const {
  if (max_steps < 1) throw ConfigError("probe steps must be >= 1");
  if (!(threshold > 0.0)) throw ConfigError("probe threshold must be > 0");
}

void MemoryLedger::allocate(const std::string& tag, std::size_t bytes) {
  if (!live_.emplace(tag, bytes).second) {
    throw NumericalError("memory ledger: second live copy of '" + tag + "'");
  }
  current_ += bytes;
  peak_ = std::max(peak_, current_);
}

void MemoryLedger::release(const std::string& tag) {
  auto it = live_.find(tag);
  if (it == live_.end()) throw NumericalError("memory ledger: release of unknown '" + tag + "'");
  current_ -= it->second;
  live_.erase(it);
}

const Matrix& ProbeResult::grad(LayerId id) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i] == id) return grads[i];
  throw ShapeError("probe result has no gradient for layer " + std::to_string(id));
}

bool adaptive_stop_check(std::span<const double> prev, std::span<const double> cur, double threshold) {
  if (prev.size() != cur.size()) throw ShapeError("adaptive_stop_check: length mismatch");
  auto check_normalized = [](std::span<const double> v) {
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-9) throw NumericalError("adaptive_stop_check: input not normalized");
  };
  check_normalized(prev);
  check_normalized(cur);
  double dist = 0.0;
  for (std::size_t i = 0; i < prev.size(); ++i) dist = std::max(dist, std::abs(prev[i] - cur[i]));
  return dist < threshold;
}

ProbeSession::ProbeSession(const Network& net, const ProbeConfig& cfg)
    : net_(net), cfg_(cfg), layers_(net.adapted_layers()) {
  cfg_.validate();
  if (layers_.empty()) throw ConfigError("probe: network has no adapted layers");
  const std::string arena = cfg_.offload ? "host" : "device";
  for (LayerId id : layers_) {
    const Matrix& w = net.layer(id).weight;
    buffers_.push_back(Matrix::Zero(w.rows(), w.cols()));
    ledger_.allocate(arena + ":G[" + std::to_string(id) + "]",
                     static_cast<std::size_t>(w.size()) * sizeof(double));
  }
}

void ProbeSession::accumulate(std::size_t slot, const Matrix& g) {
  if (!g.allFinite()) {
    throw NumericalError("probe: non-finite gradient for layer " + std::to_string(layers_.at(slot)));
  }
  buffers_.at(slot) += g;
}

std::vector<double> ProbeSession::normalized_importances(const std::vector<Matrix>& grads) const {
  std::vector<double> imp;
  imp.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    imp.push_back(importance(net_.layer(layers_[i]).weight, grads[i], cfg_.metric));
  }
  if (std::accumulate(imp.begin(), imp.end(), 0.0) == 0.0) return {};
  return advantages(imp);
}

bool ProbeSession::end_step(const std::vector<Matrix>& last_batch) {
  ++steps_;
  std::vector<double> cur;
  if (cfg_.source == ImportanceSource::running_mean) {
    std::vector<Matrix> mean;
    mean.reserve(buffers_.size());
    for (const Matrix& b : buffers_) mean.push_back(b / static_cast<double>(batches_));
    cur = normalized_importances(mean);
  } else {
    cur = normalized_importances(last_batch);
  }
  const bool stop = cfg_.adaptive && steps_ >= 2 && !cur.empty() && !trace_.back().empty() &&
                    adaptive_stop_check(trace_.back(), cur, cfg_.threshold);
  trace_.push_back(std::move(cur));
  return stop;
}

ProbeResult ProbeSession::finish() {
  if (batches_ == 0) throw ConfigError("probe: no batches consumed");
  ProbeResult r;
  r.layers = layers_;
  for (const Matrix& b : buffers_) r.grads.push_back(b / static_cast<double>(batches_));
  r.steps_used = steps_;
  r.batches_used = batches_;
  r.importance_trace = trace_;
  r.threshold = cfg_.threshold;
  r.adaptive = cfg_.adaptive;
  r.buffer_peak_bytes = ledger_.peak_bytes();
  return r;
}

ProbeResult run_probe(const Network& net, std::span<const Batch> stream, const ProbeConfig& cfg) {
  cfg.validate();
  if (stream.empty()) throw ConfigError("probe: empty batch stream");
  if (!cfg.adaptive && stream.size() < cfg.max_steps) {
    throw ConfigError("probe: stream has " + std::to_string(stream.size()) + " batches, need " +
                      std::to_string(cfg.max_steps));
  }
  if (cfg.adaptive && stream.size() < 2) throw ConfigError("probe: adaptive mode needs at least 2 batches");

  ProbeSession session(net, cfg);
  const std::size_t steps = std::min(cfg.max_steps, stream.size());
  std::vector<Matrix> last(session.layers().size());
  for (std::size_t step = 0; step < steps; ++step) {
    LossAndGrads lg = forward_backward(net, stream[step]);
    for (std::size_t i = 0; i < session.layers().size(); ++i) {
      last[i] = std::move(lg.weight_grads[session.layers()[i]]);
      session.accumulate(i, last[i]);
    }
    session.count_batches(1);
    if (session.end_step(last)) break;
  }
  return session.finish();
}

void write_probe(std::ostream& out, const ProbeResult& r) {
  io::write_magic(out, "GPRB");
  io::write_u32(out, static_cast<std::uint32_t>(r.layers.size()));
  io::write_u64(out, r.steps_used);
  io::write_u64(out, r.batches_used);
  io::write_f64(out, r.threshold);
  io::write_u8(out, r.adaptive ? 1 : 0);
  io::write_u64(out, r.buffer_peak_bytes);
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    io::write_u32(out, static_cast<std::uint32_t>(r.layers[i]));
    io::write_matrix(out, r.grads[i]);
  }
  io::write_u32(out, static_cast<std::uint32_t>(r.importance_trace.size()));
  for (const auto& entry : r.importance_trace) {
    io::write_u32(out, static_cast<std::uint32_t>(entry.size()));
    for (double v : entry) io::write_f64(out, v);
  }
}

ProbeResult read_probe(std::istream& in) {
  io::expect_magic(in, "GPRB");
  ProbeResult r;
  const std::uint32_t count = io::read_u32(in);
  r.steps_used = io::read_u64(in);
  r.batches_used = io::read_u64(in);
  r.threshold = io::read_f64(in);
  r.adaptive = io::read_u8(in) != 0;
  r.buffer_peak_bytes = io::read_u64(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    r.layers.push_back(io::read_u32(in));
    r.grads.push_back(io::read_matrix(in));
  }
  const std::uint32_t trace_len = io::read_u32(in);
  for (std::uint32_t t = 0; t < trace_len; ++t) {
    std::vector<double> entry(io::read_u32(in));
    for (double& v : entry) v = io::read_f64(in);
    r.importance_trace.push_back(std::move(entry));
  }
  return r;
}

}  // namespace gora
