#include "gora/ddpsim.hpp"
#include "gora/tasks.hpp"

#include <gtest/gtest.h>

namespace gora {
namespace {

TeacherTask task(std::uint64_t seed, std::size_t batches) {
  Rng rng(seed);
  TeacherTaskConfig cfg;
  cfg.dims = {16, 12, 8};
  cfg.r_true = 2;
  cfg.batch_size = 8;
  cfg.train_samples = batches * 8;
  cfg.layer_decay = 0.5;
  return make_lowrank_teacher_task(rng, cfg);
}

TEST(ShardedStream, RoundRobinAndDrop) {
  const TeacherTask t = task(1, 10);
  ShardedStream s(t.train, 4);
  EXPECT_EQ(s.rounds(), 2u);
  EXPECT_EQ(s.dropped(), 2u);
  EXPECT_EQ(s.shard(1), (std::vector<std::size_t>{1, 5, 9}));
  EXPECT_EQ(&s.at(3, 1), &t.train[7]);
  EXPECT_THROW(s.at(0, 2), ShapeError);
  EXPECT_THROW(ShardedStream(t.train, 0), ConfigError);
}

// Single-worker oracle over the same global stream, for every world size and
// both execution modes.
TEST(DdpProbe, BitIdenticalToSingleWorker) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TeacherTask t = task(seed, 32);
    ProbeConfig single_cfg;
    single_cfg.max_steps = 32;
    const ProbeResult single = run_probe(t.network, t.train, single_cfg);
    for (std::size_t w : {1u, 2u, 4u, 8u}) {
      for (bool threaded : {false, true}) {
        DdpProbeConfig cfg;
        cfg.probe.max_steps = 32 / w;
        cfg.threaded = threaded;
        const DdpProbeResult d = ddp_probe(t.network, ShardedStream(t.train, w), WorkerTopology{w}, cfg);
        ASSERT_EQ(d.result.grads.size(), single.grads.size());
        for (std::size_t i = 0; i < single.grads.size(); ++i) {
          EXPECT_TRUE(d.result.grads[i].cwiseEqual(single.grads[i]).all()) << "W=" << w << " layer " << i;
        }
        EXPECT_EQ(d.result.batches_used, 32u);
        EXPECT_EQ(d.host_peak_bytes, single.buffer_peak_bytes);
        ASSERT_EQ(d.device_peak_bytes.size(), w);
      }
    }
  }
}

TEST(DdpProbe, DevicePeakIsOneLayerAtATime) {
  const TeacherTask t = task(3, 16);
  DdpProbeConfig cfg;
  cfg.probe.max_steps = 4;
  const DdpProbeResult d = ddp_probe(t.network, ShardedStream(t.train, 4), WorkerTopology{4}, cfg);
  for (std::size_t bytes : d.device_peak_bytes) EXPECT_EQ(bytes, 16u * 12 * sizeof(double));
}

TEST(DdpProbe, RootShardOnlyUsesOwnBatches) {
  const TeacherTask t = task(4, 16);
  DdpProbeConfig cfg;
  cfg.probe.max_steps = 4;
  cfg.accumulation = DdpAccumulation::root_shard_only;
  const DdpProbeResult d = ddp_probe(t.network, ShardedStream(t.train, 4), WorkerTopology{4}, cfg);
  const std::vector<Batch> own{t.train[0], t.train[4], t.train[8], t.train[12]};
  ProbeConfig pc;
  pc.max_steps = 4;
  const ProbeResult oracle = run_probe(t.network, own, pc);
  for (std::size_t i = 0; i < oracle.grads.size(); ++i) {
    EXPECT_TRUE(d.result.grads[i].cwiseEqual(oracle.grads[i]).all());
  }
  EXPECT_EQ(d.result.batches_used, 4u);
}

TEST(DdpProbe, RejectsShortStream) {
  const TeacherTask t = task(5, 6);
  DdpProbeConfig cfg;
  cfg.probe.max_steps = 4;
  EXPECT_THROW(ddp_probe(t.network, ShardedStream(t.train, 2), WorkerTopology{2}, cfg), ConfigError);
  EXPECT_THROW(ddp_probe(t.network, ShardedStream(t.train, 2), WorkerTopology{3}, cfg), ConfigError);
}

TEST(DdpInit, ReplicasMatchSingleWorker) {
  const TeacherTask t = task(6, 16);
  ProbeConfig pc;
  pc.max_steps = 16;
  const ProbeResult probe = run_probe(t.network, t.train, pc);
  const AllocConfig alloc = AllocConfig::with_defaults(4);
  InitConfig ic;
  ic.seed = 77;
  const RankPlan plan = plan_from_probe(t.network, probe, alloc);
  const InitResult single = gora_initialize(plan, probe, AdapterSpec{}, ic);
  const DdpInitResult d = ddp_allocate_and_init(t.network, probe, WorkerTopology{4}, alloc, AdapterSpec{}, ic);
  ASSERT_EQ(d.workers.size(), 4u);
  for (const auto& w : d.workers) {
    EXPECT_EQ(w.plan, plan);
    EXPECT_EQ(serialize_adapters(w.adapters), serialize_adapters(single.adapters));
  }
  ASSERT_EQ(d.events.size(), 1 + single.adapters.size());
  EXPECT_EQ(d.events.front(), "broadcast importances");
  EXPECT_EQ(d.events[1], "broadcast adapter 0");
}

}  // namespace
}  // namespace gora
