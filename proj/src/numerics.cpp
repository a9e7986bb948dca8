#include "svlvgp/numerics.hpp"

#include <cmath>

namespace svlvgp {

SymMatrix::SymMatrix(MatrixXd m) {
  if (m.rows() != m.cols() || m.rows() < 1) {
    throw DimensionMismatch("SymMatrix requires a square matrix of order >= 1");
  }
  m_ = 0.5 * (m + m.transpose()).eval();
}

namespace {

// Plain LLT attempt; Eigen reports NumericalIssue on indefinite input, but a
// PSD-singular matrix can still "succeed" with a zero pivot, so the diagonal
// is checked too.
bool try_llt(const MatrixXd& a, MatrixXd& lower) {
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return false;
  lower = llt.matrixL();
  return (lower.diagonal().array() > 0.0).all() && lower.allFinite();
}

}  // namespace

CholFactor cholesky_with_jitter(const SymMatrix& m, double base_jitter) {
  if (!m.mat().allFinite()) {
    throw NonFinite("cholesky_with_jitter: input has NaN/Inf");
  }
  if (base_jitter < 0.0 || !std::isfinite(base_jitter)) {
    throw NonFinite("cholesky_with_jitter: base_jitter must be finite and >= 0");
  }
  const int n = m.order();
  const double mean_diag = m.mat().diagonal().mean();
  const double cap = 1e-4 * mean_diag;

  CholFactor f;
  double jitter = base_jitter;
  for (;;) {
    MatrixXd shifted = m.mat();
    if (jitter > 0.0) shifted.diagonal().array() += jitter;
    if (try_llt(shifted, f.lower)) {
      f.jitter_used = jitter;
      return f;
    }
    if (jitter == 0.0) {
      jitter = 1e-12 * mean_diag;
      if (jitter <= 0.0) break;
    } else {
      jitter *= 10.0;
    }
    if (jitter > cap * (1.0 + 1e-12)) break;
  }
  throw NotPositiveDefinite("cholesky_with_jitter: not PD after jitter up to 1e-4*mean(diag), order " +
                            std::to_string(n));
}

MatrixXd chol_solve(const CholFactor& f, const MatrixXd& b) {
  if (b.rows() != f.lower.rows()) {
    throw DimensionMismatch("chol_solve: rhs rows " + std::to_string(b.rows()) +
                            " != factor order " + std::to_string(f.lower.rows()));
  }
  MatrixXd x = f.lower.triangularView<Eigen::Lower>().solve(b);
  f.lower.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
  return x;
}

double logdet(const CholFactor& f) {
  return 2.0 * f.lower.diagonal().array().log().sum();
}

}  // namespace svlvgp
