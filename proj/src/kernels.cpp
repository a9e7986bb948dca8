#include "svlvgp/kernels.hpp"

#include <cmath>

namespace svlvgp {

VectorXd KernelParams::weights() const {
  VectorXd w(width());
  w.head(log_phi.size()) = log_phi.array().exp();
  w.tail(log_phi_z.size()) = log_phi_z.array().exp();
  return w;
}

KernelParams KernelParams::make(int p, int q, int g) {
  KernelParams k;
  k.log_phi = VectorXd::Zero(p);
  k.log_phi_z = VectorXd::Zero(q * g);
  return k;
}

double gaussian_correlation(const VectorXd& s, const VectorXd& s_prime,
                            const KernelParams& params) {
  if (s.size() != s_prime.size() || s.size() != params.width()) {
    throw DimensionMismatch("gaussian_correlation: width mismatch");
  }
  const VectorXd w = params.weights();
  const double d2 = (w.array() * (s - s_prime).array().square()).sum();
  return std::exp(-d2);
}

MatrixXd cross_covariance(const MatrixXd& A, const MatrixXd& B, const KernelParams& params) {
  if (A.cols() != B.cols() || A.cols() != params.width()) {
    throw DimensionMismatch("cross_covariance: width mismatch (A " +
                            std::to_string(A.cols()) + ", B " + std::to_string(B.cols()) +
                            ", params " + std::to_string(params.width()) + ")");
  }
  const int na = static_cast<int>(A.rows());
  const int nb = static_cast<int>(B.rows());
  const VectorXd w = params.weights();
  MatrixXd d2 = MatrixXd::Zero(na, nb);
  for (int d = 0; d < params.width(); ++d) {
    const double wd = w(d);
    const auto a = A.col(d).array();
    for (int j = 0; j < nb; ++j) {
      d2.col(j).array() += wd * (a - B(j, d)).square();
    }
  }
  return params.sigma2() * (-d2.array()).exp();
}

void KernelAdjoint::init(const KernelParams& params, int n_a, int n_b, bool with_points) {
  d_log_sigma2 = 0.0;
  d_log_phi = VectorXd::Zero(params.log_phi.size());
  d_log_phi_z = VectorXd::Zero(params.log_phi_z.size());
  want_points = with_points;
  if (with_points) {
    d_A = MatrixXd::Zero(n_a, params.width());
    d_B = MatrixXd::Zero(n_b, params.width());
  }
}

void accumulate_cov_adjoint(const MatrixXd& A, const MatrixXd& B, const MatrixXd& K,
                            const MatrixXd& K_bar, const KernelParams& params,
                            KernelAdjoint& adj) {
  const int nb = static_cast<int>(B.rows());
  const int p = static_cast<int>(params.log_phi.size());
  const VectorXd w = params.weights();

  // dK/dlog sigma2 = K.
  const MatrixXd e = K_bar.cwiseProduct(K);
  adj.d_log_sigma2 += e.sum();

  // Per dimension: dK/dw_d = -diff_d^2 .* K, dK/dA(:,d) = -2 w_d diff_d .* K.
  for (int d = 0; d < params.width(); ++d) {
    const double wd = w(d);
    const auto a = A.col(d).array();
    double dw = 0.0;
    for (int j = 0; j < nb; ++j) {
      const Eigen::ArrayXd diff = a - B(j, d);
      const auto ecol = e.col(j).array();
      dw -= wd * (ecol * diff.square()).sum();
      if (adj.want_points) {
        const Eigen::ArrayXd ge = -2.0 * wd * (ecol * diff);
        adj.d_A.col(d).array() += ge;
        adj.d_B(j, d) -= ge.sum();
      }
    }
    if (d < p) {
      adj.d_log_phi(d) += dw;
    } else {
      adj.d_log_phi_z(d - p) += dw;
    }
  }
}

}  // namespace svlvgp
