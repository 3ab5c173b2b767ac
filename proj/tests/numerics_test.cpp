#include "gora/numerics.hpp"
#include "gora/rng.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace gora {
namespace {

TEST(Matmul, HandExample) {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  Matrix b(2, 1);
  b << 5, 6;
  const Matrix c = matmul(a, b);
  EXPECT_EQ(c(0, 0), 17.0);
  EXPECT_EQ(c(1, 0), 39.0);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  const Matrix a = Matrix::Zero(2, 3);
  const Matrix b = Matrix::Zero(2, 3);
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2x3)"), std::string::npos) << msg;
  }
}

TEST(Matmul, WorksForFloat) {
  Eigen::MatrixXf a = Eigen::MatrixXf::Ones(2, 3);
  Eigen::MatrixXf b = Eigen::MatrixXf::Ones(3, 2);
  EXPECT_FLOAT_EQ(matmul(a, b)(1, 1), 3.0f);
}

TEST(HadamardAbsAvg, HandExamples) {
  Matrix w(2, 2), g(2, 2);
  w << 1, -2, 0, 3;
  g << 2, 1, -1, 0;
  EXPECT_DOUBLE_EQ(hadamard_abs_avg(w, g), 1.0);

  Matrix ones = Matrix::Ones(2, 2);
  Matrix half(2, 2);
  half << 0.5, -0.5, 0.5, -0.5;
  EXPECT_DOUBLE_EQ(hadamard_abs_avg(ones, half), 0.5);
}

TEST(HadamardAbsAvg, ShapeMismatchThrows) {
  EXPECT_THROW(hadamard_abs_avg(Matrix::Zero(2, 2), Matrix::Zero(2, 3)), ShapeError);
}

TEST(SingularValues, NuclearNormOfTwoByTwo) {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  // Oracle: square roots of the eigenvalues of AᵀA.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a.transpose() * a);
  const double want = eig.eigenvalues().cwiseSqrt().sum();
  EXPECT_NEAR(nuclear_norm(a), want, 1e-12);
  EXPECT_NEAR(nuclear_norm(a), 5.8309518948453, 1e-10);
}

TEST(SingularValues, DiagonalMatrix) {
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 3;
  d(1, 1) = -4;
  const Vector s = singular_values(d);
  EXPECT_NEAR(s(0), 4.0, 1e-14);
  EXPECT_NEAR(s(1), 3.0, 1e-14);
}

TEST(SingularValues, MatchesEigenSvdOnRandomShapes) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    const std::size_t m = 1 + rng.next_u64() % 24;
    const std::size_t n = 1 + rng.next_u64() % 24;
    const Matrix a = sample_gaussian(rng, m, n);
    const Vector got = singular_values(a);
    const Vector want = Eigen::JacobiSVD<Matrix>(a).singularValues();
    ASSERT_EQ(got.size(), want.size());
    for (Eigen::Index i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(got(i), want(i), 1e-10 * std::max(1.0, want(0))) << "seed " << seed;
    }
    for (Eigen::Index i = 1; i < got.size(); ++i) EXPECT_GE(got(i - 1), got(i));
  }
}

TEST(SingularValues, RankDeficientInput) {
  Rng rng(3);
  const Matrix a = sample_gaussian(rng, 10, 2) * sample_gaussian(rng, 2, 7);
  const Vector s = singular_values(a);
  EXPECT_GT(s(1), 1e-6);
  for (Eigen::Index i = 2; i < s.size(); ++i) EXPECT_LT(s(i), 1e-10);
}

TEST(SingularValues, RejectsOversizedInput) {
  const Matrix big = Matrix::Zero(kMaxSvdDim + 1, kMaxSvdDim + 1);
  EXPECT_THROW(singular_values(big), ShapeError);
}

TEST(CholeskySolve, ScalarCase) {
  Matrix a(1, 1), b(1, 1);
  a << 4;
  b << 8;
  EXPECT_DOUBLE_EQ(cholesky_solve(a, b)(0, 0), 2.0);
}

TEST(CholeskySolve, RandomSpdResidual) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.next_u64() % 16;
    const Matrix a = testing::random_spd(rng, n);
    const Matrix b = sample_gaussian(rng, n, 3);
    const Matrix x = cholesky_solve(a, b);
    EXPECT_LT((a * x - b).norm(), 1e-9 * std::max(1.0, b.norm()));
  }
}

TEST(CholeskySolve, SingularThrows) {
  Matrix a(2, 2);
  a << 1, 1, 1, 1;
  EXPECT_THROW(cholesky_solve(a, Matrix::Ones(2, 1)), SingularGramError);
  Matrix neg(1, 1);
  neg << -1;
  EXPECT_THROW(cholesky_solve(neg, Matrix::Ones(1, 1)), SingularGramError);
}

TEST(CholeskySolve, ShapeChecks) {
  EXPECT_THROW(cholesky_solve(Matrix::Identity(2, 3), Matrix::Ones(2, 1)), ShapeError);
  EXPECT_THROW(cholesky_solve(Matrix::Identity(2, 2), Matrix::Ones(3, 1)), ShapeError);
}

TEST(Projector, IdempotentSymmetricTraceR) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng(seed);
    const std::size_t m = 8 + rng.next_u64() % 40;
    const std::size_t r = 1 + rng.next_u64() % 8;
    const Matrix p = column_space_projector(sample_gaussian(rng, m, r));
    EXPECT_LE((p * p - p).norm(), 1e-9);
    EXPECT_LE((p.transpose() - p).norm(), 1e-9);
    EXPECT_NEAR(p.trace(), static_cast<double>(r), 1e-8);
  }
}

TEST(Projector, FullRankSquareIsIdentity) {
  Rng rng(5);
  const Matrix p = column_space_projector(sample_gaussian(rng, 6, 6));
  EXPECT_LT((p - Matrix::Identity(6, 6)).norm(), 1e-9);
}

}  // namespace
}  // namespace gora
