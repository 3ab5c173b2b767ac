#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

namespace gora {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;

using LayerId = std::size_t;

// Error hierarchy. The CLI maps ConfigError to exit code 1 and
// NumericalError to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Raised when a Gram matrix has a non-positive Cholesky pivot.
class SingularGramError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

template <typename DA, typename DB>
void require_same_shape(const Eigen::EigenBase<DA>& a, const Eigen::EigenBase<DB>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

/// Checked matrix product; Eigen only asserts on mismatched inner dimensions.
template <typename DA, typename DB>
MatrixX<typename DA::Scalar> matmul(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a) + " x " +
                     shape_string(b));
  }
  return a * b;
}

/// avg(|w ⊙ g|): mean of the element-wise absolute product.
template <typename DA, typename DB>
typename DA::Scalar hadamard_abs_avg(const Eigen::MatrixBase<DA>& w, const Eigen::MatrixBase<DB>& g) {
  require_same_shape(w, g, "hadamard_abs_avg");
  if (w.size() == 0) return typename DA::Scalar(0);
  return (w.array() * g.array()).abs().mean();
}

template <typename Derived>
typename Derived::Scalar frobenius(const Eigen::MatrixBase<Derived>& a) {
  return a.norm();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& a) {
  return a.allFinite();
}

inline constexpr std::size_t kMaxSvdDim = 512;

struct JacobiSvdOptions {
  double tolerance = 1e-12;
  int max_sweeps = 100;
};

/// Singular values (descending) via one-sided Hestenes-Jacobi rotations.
///
/// Columns are orthogonalized pairwise until every normalized inner product
/// |<u_p, u_q>| / (|u_p| |u_q|) drops below `opts.tolerance`. The
/// column norms of the converged matrix are the singular values.
template <typename Derived>
VectorX<typename Derived::Scalar> singular_values(const Eigen::MatrixBase<Derived>& a,
                                                  JacobiSvdOptions opts = {}) {
  using Scalar = typename Derived::Scalar;
  const auto small = std::min(a.rows(), a.cols());
  if (static_cast<std::size_t>(small) > kMaxSvdDim) {
    throw ShapeError("singular_values: min dimension " + std::to_string(small) +
                     " exceeds dense SVD cap " + std::to_string(kMaxSvdDim));
  }
  // Rotate the shorter side so there are at most `small` columns to sweep.
  MatrixX<Scalar> u = a.rows() >= a.cols() ? MatrixX<Scalar>(a) : MatrixX<Scalar>(a.transpose());
  const Eigen::Index k = u.cols();

  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    Scalar off = 0;
    for (Eigen::Index p = 0; p + 1 < k; ++p) {
      for (Eigen::Index q = p + 1; q < k; ++q) {
        const Scalar alpha = u.col(p).squaredNorm();
        const Scalar beta = u.col(q).squaredNorm();
        const Scalar gamma = u.col(p).dot(u.col(q));
        if (alpha == 0 || beta == 0) continue;
        const Scalar rel = std::abs(gamma) / std::sqrt(alpha * beta);
        off = std::max(off, rel);
        if (rel < Scalar(opts.tolerance)) continue;
        const Scalar zeta = (beta - alpha) / (2 * gamma);
        const Scalar t = (zeta >= 0 ? Scalar(1) : Scalar(-1)) /
                         (std::abs(zeta) + std::sqrt(1 + zeta * zeta));
        const Scalar c = 1 / std::sqrt(1 + t * t);
        const Scalar s = c * t;
        for (Eigen::Index i = 0; i < u.rows(); ++i) {
          const Scalar up = u(i, p);
          const Scalar uq = u(i, q);
          u(i, p) = c * up - s * uq;
          u(i, q) = s * up + c * uq;
        }
      }
    }
    if (off < Scalar(opts.tolerance)) break;
  }

  VectorX<Scalar> sigma = u.colwise().norm().transpose();
  std::sort(sigma.data(), sigma.data() + sigma.size(), std::greater<Scalar>());
  return sigma;
}

/// Sum of singular values.
template <typename Derived>
typename Derived::Scalar nuclear_norm(const Eigen::MatrixBase<Derived>& a) {
  return singular_values(a).sum();
}

/// Solves spd * X = rhs through a Cholesky factorization of `spd`.
/// Throws SingularGramError when a pivot is non-positive (or negligible
/// relative to the largest diagonal entry).
Matrix cholesky_solve(const Matrix& spd, const Matrix& rhs);

/// Projector onto col(a): a (aᵀa)⁻¹ aᵀ.
Matrix column_space_projector(const Matrix& a);

}  // namespace gora
