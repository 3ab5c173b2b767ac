#include "gora/tasks.hpp"

#include <gtest/gtest.h>

#include <Eigen/SVD>

namespace gora {
namespace {

TEST(TeacherTask, DeltaHasRequestedRank) {
  Rng rng(1);
  TeacherTaskConfig cfg;
  cfg.dims = {24, 16, 12};
  cfg.r_true = 3;
  const TeacherTask t = make_lowrank_teacher_task(rng, cfg);
  ASSERT_EQ(t.delta_star.size(), 2u);
  for (const Matrix& d : t.delta_star) {
    const Vector s = Eigen::JacobiSVD<Matrix>(d).singularValues();
    EXPECT_GT(s(2), 1e-8);
    EXPECT_LT(s(3), 1e-10 * s(0));
  }
}

TEST(TeacherTask, NoiselessTargetsComeFromTeacherWeights) {
  Rng rng(2);
  const TeacherTask t = make_lowrank_teacher_task(rng, 8, 6, 2, 64, 0.0);
  Layer l = t.network.layer(0);
  l.weight += t.delta_star[0];
  const Network teacher({l}, LossKind::mse);
  for (const Batch& b : t.train) EXPECT_LT((predict(teacher, b.inputs) - b.targets).norm(), 1e-12);
}

TEST(TeacherTask, LayerDecayScalesDeltas) {
  Rng rng(3);
  TeacherTaskConfig cfg;
  cfg.dims = {16, 16, 16, 16};
  cfg.layer_decay = 0.25;
  const TeacherTask t = make_lowrank_teacher_task(rng, cfg);
  EXPECT_GT(t.delta_star[0].norm(), 2.0 * t.delta_star[2].norm());
}

TEST(TeacherTask, DeterministicAndBatched) {
  Rng a(9), b(9);
  TeacherTaskConfig cfg;
  cfg.train_samples = 100;
  cfg.batch_size = 32;
  const TeacherTask x = make_lowrank_teacher_task(a, cfg);
  const TeacherTask y = make_lowrank_teacher_task(b, cfg);
  ASSERT_EQ(x.train.size(), 4u);
  EXPECT_EQ(x.train.back().size(), 4u);
  EXPECT_TRUE(x.train[1].inputs.cwiseEqual(y.train[1].inputs).all());
  EXPECT_EQ(x.eval.size(), cfg.eval_samples);
}

TEST(TeacherTask, RejectsBadConfig) {
  Rng rng(0);
  TeacherTaskConfig cfg;
  cfg.dims = {4, 4};
  cfg.r_true = 5;
  EXPECT_THROW(make_lowrank_teacher_task(rng, cfg), ConfigError);
  cfg.dims = {4};
  EXPECT_THROW(make_lowrank_teacher_task(rng, cfg), ConfigError);
}

TEST(ClusterTask, BalancedOneHotLabels) {
  Rng rng(4);
  ClusterTaskConfig cfg;
  cfg.classes = 4;
  cfg.train_samples = 400;
  const ClusterTask t = make_cluster_classification_task(rng, cfg);
  Vector counts = Vector::Zero(4);
  for (const Batch& b : t.train) {
    EXPECT_TRUE((b.targets.rowwise().sum().array() == 1.0).all());
    counts += b.targets.colwise().sum().transpose();
  }
  for (int c = 0; c < 4; ++c) EXPECT_EQ(counts(c), 100.0);
}

TEST(ClusterTask, SeparationMakesNearestMeanAccurate) {
  Rng rng(5);
  ClusterTaskConfig cfg;
  cfg.separation = 8.0;
  const ClusterTask t = make_cluster_classification_task(rng, cfg);
  // Class means estimated from training data classify the eval split.
  Matrix means = Matrix::Zero(cfg.classes, cfg.dims);
  Vector counts = Vector::Zero(cfg.classes);
  for (const Batch& b : t.train) {
    means += b.targets.transpose() * b.inputs;
    counts += b.targets.colwise().sum().transpose();
  }
  for (std::size_t c = 0; c < cfg.classes; ++c) means.row(c) /= counts(c);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < t.eval.inputs.rows(); ++i) {
    Eigen::Index best = 0, label = 0;
    (means.rowwise() - t.eval.inputs.row(i)).rowwise().squaredNorm().minCoeff(&best);
    t.eval.targets.row(i).maxCoeff(&label);
    correct += best == label;
  }
  EXPECT_GT(static_cast<double>(correct) / t.eval.size(), 0.95);
}

TEST(ClusterTask, RejectsSingleClass) {
  Rng rng(0);
  ClusterTaskConfig cfg;
  cfg.classes = 1;
  EXPECT_THROW(make_cluster_classification_task(rng, cfg), ConfigError);
}

TEST(SplitBatches, KeepsTrailingPartialBatch) {
  const auto batches = split_batches(Matrix::Ones(10, 2), Matrix::Ones(10, 1), 4);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[2].size(), 2u);
  EXPECT_THROW(split_batches(Matrix::Ones(10, 2), Matrix::Ones(10, 1), 0), ConfigError);
}

}  // namespace
}  // namespace gora
