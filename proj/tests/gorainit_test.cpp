#include "gora/ddpsim.hpp"
#include "gora/gorainit.hpp"
#include "gora/tasks.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <Eigen/QR>

#include <cmath>

namespace gora {
namespace {

// Independent projector oracle via a thin Householder QR of A.
Matrix qr_projector(const Matrix& a) {
  Eigen::HouseholderQR<Matrix> qr(a);
  const Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
  return q * q.transpose();
}

TEST(Xi, HandValues) {
  EXPECT_NEAR(xi(0.05, 16.0, 64, 8, ScalingMode::rslora), 0.025, 1e-15);
  EXPECT_EQ(xi(0.0, 16.0, 64, 8, ScalingMode::rslora), 0.0);
  EXPECT_NEAR(xi(0.05, 16.0, 64, 8, ScalingMode::lora), 0.025 * std::sqrt(8.0), 1e-15);
  EXPECT_NEAR(xi_for(XiRule::exact_step, 0.05, 16.0, 64, 8, ScalingMode::rslora),
              0.05 / scaling_factor(16.0, 8, ScalingMode::rslora), 1e-15);
}

TEST(InitA, KaimingBound) {
  Rng rng(1);
  const Matrix a = init_A(rng, 64, 8);
  EXPECT_EQ(a.rows(), 64);
  EXPECT_EQ(a.cols(), 8);
  EXPECT_LE(a.cwiseAbs().maxCoeff(), 1.0 / 8.0);
}

TEST(CompressInitB, EqualsMinusProjection) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Matrix a = init_A(rng, 32, 4);
    const Matrix g = sample_gaussian(rng, 32, 20);
    const Matrix b = compress_init_B(a, g);
    EXPECT_LT((a * b + qr_projector(a) * g).norm(), 1e-10 * g.norm());
  }
}

TEST(CompressInitB, GradientInColumnSpaceIsExact) {
  Rng rng(2);
  const Matrix a = init_A(rng, 16, 4);
  const Matrix g = a * sample_gaussian(rng, 4, 9);
  EXPECT_LT(projection_residual(a, g), 1e-10);
}

TEST(CompressInitB, RankDeficientAThrows) {
  Matrix a = Matrix::Zero(8, 2);
  a.col(0).setOnes();
  a.col(1).setOnes();
  EXPECT_THROW(compress_init_B(a, Matrix::Ones(8, 3)), SingularGramError);
  EXPECT_THROW(compress_init_B(Matrix::Ones(8, 2), Matrix::Ones(7, 3)), ShapeError);
}

TEST(ReconstructionError, ExactStepEqualsProjectionResidual) {
  Rng rng(3);
  const Matrix a = init_A(rng, 64, 8);
  const Matrix g = sample_gaussian(rng, 64, 32);
  const double s = scaling_factor(16.0, 8, ScalingMode::rslora);
  const Matrix b = xi_for(XiRule::exact_step, 0.05, 16.0, 64, 8, ScalingMode::rslora) * compress_init_B(a, g);
  const auto err = reconstruction_error(a, b, g, 0.05, s);
  EXPECT_NEAR(err.relative, projection_residual(a, g), 1e-12);
  const Matrix e = 0.05 * (g - qr_projector(a) * g);
  EXPECT_NEAR(err.absolute, e.cwiseAbs().mean(), 1e-12);
  EXPECT_THROW(reconstruction_error(a, b, Matrix::Zero(64, 32), 0.05, s), NumericalError);
}

TEST(FrobeniusOracle, FullRankAndRankOne) {
  Rng rng(4);
  EXPECT_NEAR(frobenius_expectation_oracle(rng, 6, 5, 6, 100), std::sqrt(30.0), 0.15);
  const double r1 = frobenius_expectation_oracle(rng, 32, 32, 1, 1000);
  EXPECT_NEAR(r1 / std::sqrt(32.0), 1.0, 0.05);
}

struct InitFixture {
  TeacherTask task;
  ProbeResult probe;
  RankPlan plan;
};

InitFixture make_fixture(std::uint64_t seed) {
  Rng rng(seed);
  TeacherTaskConfig tc;
  tc.dims = {24, 16, 12};
  tc.train_samples = 256;
  tc.batch_size = 16;
  tc.layer_decay = 0.5;
  InitFixture f{make_lowrank_teacher_task(rng, tc), {}, {}};
  ProbeConfig pc;
  pc.max_steps = 8;
  f.probe = run_probe(f.task.network, f.task.train, pc);
  f.plan = plan_from_probe(f.task.network, f.probe, AllocConfig::with_defaults(4));
  return f;
}

TEST(GoraInit, DeltaIsScaledGradientStep) {
  const InitFixture f = make_fixture(5);
  for (auto mode : {ScalingMode::rslora, ScalingMode::lora}) {
    AdapterSpec spec;
    spec.mode = mode;
    InitConfig ic;
    ic.gamma = 0.05;
    ic.seed = 11;
    ic.xi_rule = XiRule::exact_step;
    const InitResult exact = gora_initialize(f.plan, f.probe, spec, ic);
    ic.xi_rule = XiRule::magnitude_matched;
    const InitResult matched = gora_initialize(f.plan, f.probe, spec, ic);
    for (const auto& [id, ad] : exact.adapters) {
      const Matrix& g = f.probe.grad(id);
      const Matrix pg = qr_projector(ad.a) * g;
      EXPECT_LT((delta(ad) + 0.05 * pg).norm(), 1e-10);
      // Same A₀; the magnitude-matched ξ rescales the step by √(m/r) in both modes.
      const double ratio = std::sqrt(static_cast<double>(ad.in_dim()) / static_cast<double>(ad.rank()));
      EXPECT_LT((delta(matched.adapters.at(id)) + 0.05 * ratio * pg).norm(), 1e-10);
    }
  }
}

TEST(GoraInit, GammaZeroMatchesZeroInitLora) {
  const InitFixture f = make_fixture(6);
  InitConfig ic;
  ic.gamma = 0.0;
  ic.seed = 3;
  const AdapterSet gora = gora_initialize(f.plan, f.probe, AdapterSpec{}, ic).adapters;
  const AdapterSet lora = lora_initialize(f.plan, AdapterSpec{}, ic.seed);
  EXPECT_EQ(serialize_adapters(gora), serialize_adapters(lora));
}

TEST(GoraInit, DeterministicPerLayerStreams) {
  const InitFixture f = make_fixture(7);
  InitConfig ic;
  ic.seed = 5;
  const InitResult a = gora_initialize(f.plan, f.probe, AdapterSpec{}, ic);
  const InitResult b = gora_initialize(f.plan, f.probe, AdapterSpec{}, ic);
  EXPECT_EQ(serialize_adapters(a.adapters), serialize_adapters(b.adapters));
  // A₀ for a layer depends only on (seed, layer id), not on the other layers.
  RankPlan only_second = f.plan;
  only_second.records.erase(only_second.records.begin());
  const InitResult c = gora_initialize(only_second, f.probe, AdapterSpec{}, ic);
  EXPECT_TRUE(c.adapters.at(1).a.cwiseEqual(a.adapters.at(1).a).all());
  ic.seed = 6;
  const InitResult d = gora_initialize(f.plan, f.probe, AdapterSpec{}, ic);
  EXPECT_FALSE(d.adapters.at(1).a.cwiseEqual(a.adapters.at(1).a).all());
}

TEST(GoraInit, ReportAndBaseUntouched) {
  const InitFixture f = make_fixture(8);
  const Network copy = f.task.network;
  InitConfig ic;
  ic.xi_rule = XiRule::exact_step;
  const InitResult r = gora_initialize(f.plan, f.probe, AdapterSpec{}, ic);
  ASSERT_EQ(r.report.layers.size(), f.plan.records.size());
  for (const auto& l : r.report.layers) {
    EXPECT_EQ(l.retries, 0);
    EXPECT_NEAR(l.rel_error, l.projection_residual, 1e-12);
    EXPECT_GT(l.xi, 0.0);
  }
  EXPECT_GE(r.report.seconds, 0.0);
  for (std::size_t i = 0; i < copy.size(); ++i) {
    EXPECT_TRUE(copy.layer(i).weight.cwiseEqual(f.task.network.layer(i).weight).all());
  }
}

TEST(GoraInit, ForwardShiftIsMinusGammaXPG) {
  const InitFixture f = make_fixture(9);
  InitConfig ic;
  ic.gamma = 0.1;
  ic.xi_rule = XiRule::exact_step;
  AdapterSet set = gora_initialize(f.plan, f.probe, AdapterSpec{}, ic).adapters;
  set.erase(1);  // isolate the first layer
  const Matrix x = f.task.train.front().inputs;
  const Layer& l0 = f.task.network.layer(0);
  const Matrix base = x * l0.weight;
  const Matrix shifted = adapter_forward(x, l0.weight, set.at(0));
  const Matrix want = -0.1 * x * qr_projector(set.at(0).a) * f.probe.grad(0);
  EXPECT_LT((shifted - base - want).norm(), 1e-10);
}

TEST(GoraInit, DefaultGammaByRank) {
  EXPECT_EQ(InitConfig::default_gamma(8), 5e-2);
  EXPECT_EQ(InitConfig::default_gamma(32), 1e-2);
  EXPECT_EQ(InitConfig::default_gamma(128), 5e-3);
}

TEST(XiRule, ParseRoundTrip) {
  for (auto r : {XiRule::magnitude_matched, XiRule::exact_step}) EXPECT_EQ(parse_xi_rule(to_string(r)), r);
  EXPECT_THROW(parse_xi_rule("nope"), ConfigError);
}

}  // namespace
}  // namespace gora
