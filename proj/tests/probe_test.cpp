#include "gora/probe.hpp"
#include "gora/tasks.hpp"
#include "gora/trainkit.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace gora {
namespace {

TeacherTask two_layer_task(std::uint64_t seed, std::size_t samples = 512) {
  Rng rng(seed);
  TeacherTaskConfig cfg;
  cfg.dims = {12, 10, 8};
  cfg.r_true = 2;
  cfg.train_samples = samples;
  cfg.batch_size = 16;
  cfg.layer_decay = 0.5;
  return make_lowrank_teacher_task(rng, cfg);
}

TEST(AdaptiveStop, StrictThreshold) {
  const std::vector<double> a{0.5, 0.5}, b{0.505, 0.495}, c{0.75, 0.25};
  EXPECT_TRUE(adaptive_stop_check(a, b, 0.01));
  EXPECT_FALSE(adaptive_stop_check(a, c, 0.25));  // distance equal to threshold
  EXPECT_TRUE(adaptive_stop_check(a, c, 0.2500001));
  EXPECT_TRUE(adaptive_stop_check(a, a, 1e-12));
  const std::vector<double> three{0.2, 0.3, 0.5};
  EXPECT_THROW(adaptive_stop_check(a, three, 0.01), ShapeError);
}

TEST(Probe, MeanOfPerBatchGradients) {
  const TeacherTask t = two_layer_task(1);
  ProbeConfig cfg;
  cfg.max_steps = 10;
  const ProbeResult r = run_probe(t.network, t.train, cfg);
  ASSERT_EQ(r.layers, (std::vector<LayerId>{0, 1}));
  EXPECT_EQ(r.steps_used, 10u);
  EXPECT_EQ(r.batches_used, 10u);
  for (std::size_t i = 0; i < 2; ++i) {
    Matrix want = Matrix::Zero(r.grads[i].rows(), r.grads[i].cols());
    for (std::size_t b = 0; b < 10; ++b) want += forward_backward(t.network, t.train[b]).weight_grads[i];
    want /= 10.0;
    EXPECT_LT((r.grads[i] - want).norm(), 1e-13 * std::max(1.0, want.norm()));
  }
}

TEST(Probe, LeavesWeightsUntouched) {
  const TeacherTask t = two_layer_task(2);
  const auto before = network_checksum(t.network);
  ProbeConfig cfg;
  cfg.max_steps = 8;
  run_probe(t.network, t.train, cfg);
  EXPECT_EQ(network_checksum(t.network), before);
}

TEST(Probe, NonAdaptiveNeedsEnoughBatches) {
  const TeacherTask t = two_layer_task(3, 64);
  ProbeConfig cfg;
  cfg.max_steps = 5;
  EXPECT_THROW(run_probe(t.network, t.train, cfg), ConfigError);
}

TEST(Probe, RepeatedBatchStopsAtStepTwo) {
  const TeacherTask t = two_layer_task(4);
  const std::vector<Batch> repeated(20, t.train.front());
  ProbeConfig cfg;
  cfg.adaptive = true;
  for (auto source : {ImportanceSource::running_mean, ImportanceSource::last_batch}) {
    cfg.source = source;
    const ProbeResult r = run_probe(t.network, repeated, cfg);
    EXPECT_EQ(r.steps_used, 2u);
    EXPECT_EQ(r.importance_trace.size(), 2u);
  }
}

TEST(Probe, AdaptiveNeverExceedsCap) {
  const TeacherTask t = two_layer_task(5);
  ProbeConfig cfg;
  cfg.adaptive = true;
  cfg.threshold = 1e-12;
  cfg.max_steps = 7;
  const ProbeResult r = run_probe(t.network, t.train, cfg);
  EXPECT_EQ(r.steps_used, 7u);
}

TEST(Probe, ZeroGradientsGiveEmptyTraceAndNoStop) {
  Rng rng(6);
  const std::vector<LayerSpec> specs{{4, 3, Activation::linear, true}};
  const Network net = make_network(specs, LossKind::mse, rng, false);
  const Matrix x = sample_gaussian(rng, 8, 4);
  const std::vector<Batch> stream(5, Batch{x, predict(net, x)});
  ProbeConfig cfg;
  cfg.adaptive = true;
  cfg.max_steps = 5;
  const ProbeResult r = run_probe(net, stream, cfg);
  EXPECT_EQ(r.steps_used, 5u);
  for (const auto& entry : r.importance_trace) EXPECT_TRUE(entry.empty());
  EXPECT_EQ(r.grads[0].norm(), 0.0);
}

TEST(Probe, SingleHostCopyPerLayer) {
  const TeacherTask t = two_layer_task(7);
  ProbeConfig cfg;
  cfg.max_steps = 4;
  const ProbeResult r = run_probe(t.network, t.train, cfg);
  EXPECT_EQ(r.buffer_peak_bytes, (12u * 10 + 10 * 8) * sizeof(double));
}

TEST(MemoryLedger, RejectsSecondLiveCopy) {
  MemoryLedger ledger;
  ledger.allocate("host:G[0]", 64);
  EXPECT_THROW(ledger.allocate("host:G[0]", 64), NumericalError);
  ledger.allocate("device:G[0]", 32);
  EXPECT_EQ(ledger.current_bytes(), 96u);
  ledger.release("device:G[0]");
  ledger.allocate("device:G[0]", 32);
  EXPECT_EQ(ledger.peak_bytes(), 96u);
  EXPECT_THROW(ledger.release("nope"), NumericalError);
}

TEST(Gprb, RoundTrip) {
  const TeacherTask t = two_layer_task(8);
  ProbeConfig cfg;
  cfg.adaptive = true;
  cfg.max_steps = 16;
  const ProbeResult r = run_probe(t.network, t.train, cfg);
  std::stringstream buf;
  write_probe(buf, r);
  const ProbeResult back = read_probe(buf);
  EXPECT_EQ(back.layers, r.layers);
  EXPECT_EQ(back.steps_used, r.steps_used);
  EXPECT_EQ(back.batches_used, r.batches_used);
  EXPECT_EQ(back.importance_trace, r.importance_trace);
  EXPECT_EQ(back.adaptive, r.adaptive);
  EXPECT_EQ(back.buffer_peak_bytes, r.buffer_peak_bytes);
  for (std::size_t i = 0; i < r.grads.size(); ++i) EXPECT_TRUE(back.grads[i].cwiseEqual(r.grads[i]).all());
}

TEST(ProbeConfig, Validation) {
  ProbeConfig cfg;
  cfg.max_steps = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.max_steps = 1;
  cfg.threshold = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace gora
