#pragma once

#include "gora/gorainit.hpp"
#include "gora/probe.hpp"

#include <span>
#include <string>
#include <vector>

namespace gora {

struct WorkerTopology {
  std::size_t world_size = 1;
};

/// How worker 0 fills its host buffer.
enum class DdpAccumulation {
  /// Every worker's per-layer gradient is reduced into worker 0's buffer
  /// (ascending worker id, left fold) before the next layer.
  reduce_then_accumulate,
  /// Worker 0 accumulates only the gradients of its own shard.
  root_shard_only,
};

/// Round-robin shards over a global stream: worker w gets batches
/// w, w+W, w+2W, ... Rounds that cannot feed every worker are dropped.
class ShardedStream {
 public:
  ShardedStream(std::span<const Batch> global, std::size_t world_size);

  std::size_t rounds() const { return rounds_; }
  std::size_t dropped() const { return dropped_; }
  std::size_t world_size() const { return world_; }
  const Batch& at(std::size_t worker, std::size_t round) const;
  /// Global indices owned by `worker`, including dropped tail batches.
  std::vector<std::size_t> shard(std::size_t worker) const;

 private:
  std::span<const Batch> global_;
  std::size_t world_;
  std::size_t rounds_;
  std::size_t dropped_;
};

struct DdpProbeConfig {
  /// max_steps counts accumulation rounds, so W·N batches are consumed.
  ProbeConfig probe;
  DdpAccumulation accumulation = DdpAccumulation::reduce_then_accumulate;
  /// Run per-worker backward passes on threads; the reduce order is unchanged.
  bool threaded = false;
};

struct DdpProbeResult {
  ProbeResult result;
  std::size_t host_peak_bytes = 0;
  std::vector<std::size_t> device_peak_bytes;  // per worker
  std::size_t dropped_batches = 0;
};

DdpProbeResult ddp_probe(const Network& net, const ShardedStream& stream, const WorkerTopology& topology,
                         const DdpProbeConfig& cfg);

struct WorkerState {
  std::size_t worker = 0;
  std::vector<double> importances;  // received by broadcast
  RankPlan plan;
  AdapterSet adapters;  // received by broadcast
};

struct DdpInitResult {
  std::vector<WorkerState> workers;
  InitReport report;  // computed on worker 0
  /// Collective operations in issue order, e.g. "broadcast importances".
  std::vector<std::string> events;
};

/// Worker 0 computes importances, broadcasts them, every worker derives the
/// plan, and worker 0 initializes and broadcasts (A₀, B₀) layer by layer.
/// Broadcasts go through the GADP byte encoding.
DdpInitResult ddp_allocate_and_init(const Network& net, const ProbeResult& root_probe,
                                    const WorkerTopology& topology, const AllocConfig& alloc,
                                    const AdapterSpec& spec, const InitConfig& init);

/// Importances of the adapted layers from a probe result.
std::vector<double> layer_importances(const Network& net, const ProbeResult& probe, ImportanceMetric metric);
std::vector<LayerShape> layer_shapes(const Network& net, const std::vector<LayerId>& layers);

/// Single-worker allocation from probe gradients.
RankPlan plan_from_probe(const Network& net, const ProbeResult& probe, const AllocConfig& alloc);

}  // namespace gora
