#pragma once

#include <Eigen/Dense>

#include "svlvgp/errors.hpp"

namespace svlvgp {

using Eigen::MatrixXd;
using Eigen::MatrixXi;
using Eigen::VectorXd;

// Dense symmetric matrix. Construction symmetrizes, so entries(i,j) ==
// entries(j,i) holds exactly afterwards.
class SymMatrix {
 public:
  explicit SymMatrix(MatrixXd m);

  int order() const { return static_cast<int>(m_.rows()); }
  const MatrixXd& mat() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

 private:
  MatrixXd m_;
};

struct CholFactor {
  MatrixXd lower;
  double jitter_used = 0.0;

  int order() const { return static_cast<int>(lower.rows()); }
};

// Lower Cholesky factor of m + jitter*I. The first attempt uses base_jitter
// as given (possibly 0); on failure the jitter escalates by factors of 10,
// starting from 1e-12*mean(diag) when the base is 0, and gives up past
// 1e-4*mean(diag). Latent-variable kernels collide points routinely early in
// training, so a hard failure on the bare matrix is expected, not exceptional.
CholFactor cholesky_with_jitter(const SymMatrix& m, double base_jitter);

// Solves (L L^T) X = b. Never forms the inverse.
MatrixXd chol_solve(const CholFactor& f, const MatrixXd& b);

// ln det(L L^T) = 2 * sum(ln diag(L)).
double logdet(const CholFactor& f);

}  // namespace svlvgp
