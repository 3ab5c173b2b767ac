#include "gora/ddpsim.hpp"

#include <future>

namespace gora {

ShardedStream::ShardedStream(std::span<const Batch> global, std::size_t world_size)
    : global_(global), world_(world_size) {
  if (world_ == 0) throw ConfigError("world size must be >= 1");
  rounds_ = global_.size() / world_;
  dropped_ = global_.size() - rounds_ * world_;
}

const Batch& ShardedStream::at(std::size_t worker, std::size_t round) const {
  if (worker >= world_ || round >= rounds_) throw ShapeError("sharded stream index out of range");
  return global_[round * world_ + worker];
}

std::vector<std::size_t> ShardedStream::shard(std::size_t worker) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = worker; i < global_.size(); i += world_) idx.push_back(i);
  return idx;
}

std::vector<double> layer_importances(const Network& net, const ProbeResult& probe, ImportanceMetric metric) {
  std::vector<double> imp;
  for (std::size_t i = 0; i < probe.layers.size(); ++i) {
    imp.push_back(importance(net.layer(probe.layers[i]).weight, probe.grads[i], metric));
  }
  return imp;
}

std::vector<LayerShape> layer_shapes(const Network& net, const std::vector<LayerId>& layers) {
  std::vector<LayerShape> shapes;
  for (LayerId id : layers) shapes.push_back(LayerShape{id, net.layer(id).spec.in_dim, net.layer(id).spec.out_dim});
  return shapes;
}

RankPlan plan_from_probe(const Network& net, const ProbeResult& probe, const AllocConfig& alloc) {
  const std::vector<double> imp = layer_importances(net, probe, alloc.metric);
  const std::vector<double> adv = advantages(imp);
  const std::vector<LayerShape> shapes = layer_shapes(net, probe.layers);
  return allocate_ranks(alloc, shapes, adv, imp);
}

DdpProbeResult ddp_probe(const Network& net, const ShardedStream& stream, const WorkerTopology& topology,
                         const DdpProbeConfig& cfg) {
  const std::size_t world = topology.world_size;
  if (world != stream.world_size()) throw ConfigError("ddp_probe: topology and stream disagree on world size");
  if (stream.rounds() == 0) throw ConfigError("ddp_probe: empty shard");
  const ProbeConfig& pc = cfg.probe;
  pc.validate();
  if (!pc.adaptive && stream.rounds() < pc.max_steps) {
    throw ConfigError("ddp_probe: " + std::to_string(stream.rounds()) + " rounds available, need " +
                      std::to_string(pc.max_steps));
  }

  // Only worker 0 owns a host buffer; ProbeSession allocates it.
  ProbeSession session(net, pc);
  const std::vector<LayerId>& layers = session.layers();
  std::vector<MemoryLedger> device(world);

  const std::size_t rounds = std::min(pc.max_steps, stream.rounds());
  std::vector<Matrix> last(layers.size());
  for (std::size_t round = 0; round < rounds; ++round) {
    std::vector<LossAndGrads> local(world);
    auto backward = [&](std::size_t w) { return forward_backward(net, stream.at(w, round)); };
    if (cfg.threaded && world > 1) {
      std::vector<std::future<LossAndGrads>> jobs;
      for (std::size_t w = 0; w < world; ++w) jobs.push_back(std::async(std::launch::async, backward, w));
      for (std::size_t w = 0; w < world; ++w) local[w] = jobs[w].get();
    } else {
      for (std::size_t w = 0; w < world; ++w) local[w] = backward(w);
    }

    // Per layer: gradients appear on every worker, get reduced into the
    // root buffer in ascending worker order, then are released at once.
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string tag = "G[" + std::to_string(layers[i]) + "]";
      const std::size_t bytes = static_cast<std::size_t>(local[0].weight_grads[layers[i]].size()) * sizeof(double);
      for (std::size_t w = 0; w < world; ++w) device[w].allocate(tag, bytes);
      const std::size_t contributors = cfg.accumulation == DdpAccumulation::reduce_then_accumulate ? world : 1;
      for (std::size_t w = 0; w < contributors; ++w) session.accumulate(i, local[w].weight_grads[layers[i]]);
      last[i] = local[contributors - 1].weight_grads[layers[i]];
      for (std::size_t w = 0; w < world; ++w) device[w].release(tag);
    }
    session.count_batches(cfg.accumulation == DdpAccumulation::reduce_then_accumulate ? world : 1);
    if (session.end_step(last)) break;
  }

  DdpProbeResult out;
  out.result = session.finish();
  out.host_peak_bytes = out.result.buffer_peak_bytes;
  for (const auto& d : device) out.device_peak_bytes.push_back(d.peak_bytes());
  out.dropped_batches = stream.dropped();
  return out;
}

DdpInitResult ddp_allocate_and_init(const Network& net, const ProbeResult& root_probe,
                                    const WorkerTopology& topology, const AllocConfig& alloc,
                                    const AdapterSpec& spec, const InitConfig& init) {
  if (topology.world_size == 0) throw ConfigError("world size must be >= 1");
  DdpInitResult out;
  out.workers.resize(topology.world_size);

  // Worker 0 computes the importance set and broadcasts it.
  const std::vector<double> root_importances = layer_importances(net, root_probe, alloc.metric);
  const std::vector<LayerShape> shapes = layer_shapes(net, root_probe.layers);
  for (std::size_t w = 0; w < topology.world_size; ++w) {
    WorkerState& ws = out.workers[w];
    ws.worker = w;
    ws.importances = root_importances;
    ws.plan = allocate_ranks(alloc, shapes, advantages(ws.importances), ws.importances);
  }
  out.events.push_back("broadcast importances");

  // Worker 0 initializes each layer from its buffer and broadcasts the pair.
  const RankPlan& root_plan = out.workers[0].plan;
  PreparedInit prepared = prepare_gora_init(root_plan, root_probe, spec, init);
  const AdapterSet root_adapters = apply_gamma(prepared, init.gamma, init.xi_rule);
  out.report = build_init_report(prepared, root_adapters, init.gamma, init.xi_rule);
  for (const auto& [id, ad] : root_adapters) {
    const std::string wire = serialize_adapters(AdapterSet{{id, ad}});
    for (WorkerState& ws : out.workers) {
      AdapterSet received = deserialize_adapters(wire);
      ws.adapters.merge(received);
    }
    out.events.push_back("broadcast adapter " + std::to_string(id));
  }
  return out;
}

}  // namespace gora
