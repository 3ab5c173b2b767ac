#include "gora/numerics.hpp"

namespace gora {

Matrix cholesky_solve(const Matrix& spd, const Matrix& rhs) {
  if (spd.rows() != spd.cols()) {
    throw ShapeError("cholesky_solve: system matrix not square " + shape_string(spd));
  }
  if (rhs.rows() != spd.rows()) {
    throw ShapeError("cholesky_solve: rhs " + shape_string(rhs) + " does not match system " +
                     shape_string(spd));
  }
  const double scale = std::max(1.0, spd.cwiseAbs().maxCoeff());
  if ((spd - spd.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw ShapeError("cholesky_solve: system matrix is not symmetric");
  }

  Eigen::LLT<Matrix> llt(spd);
  if (llt.info() != Eigen::Success) {
    throw SingularGramError("Gram matrix singular: non-positive Cholesky pivot");
  }
  // LLT only rejects pivots <= 0; treat pivots lost in rounding noise as zero too.
  const double max_diag = spd.diagonal().cwiseAbs().maxCoeff();
  const double floor = static_cast<double>(spd.rows()) * std::numeric_limits<double>::epsilon() * max_diag;
  const Matrix l = llt.matrixL();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (l(i, i) * l(i, i) <= floor) {
      throw SingularGramError("Gram matrix singular: pivot " + std::to_string(i) +
                              " is negligible");
    }
  }
  return llt.solve(rhs);
}

Matrix column_space_projector(const Matrix& a) {
  const Matrix gram = a.transpose() * a;
  return a * cholesky_solve(gram, a.transpose());
}

}  // namespace gora
