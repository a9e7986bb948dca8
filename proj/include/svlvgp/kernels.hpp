#pragma once

#include "svlvgp/data.hpp"

namespace svlvgp {

// Gaussian-kernel hyperparameters over transformed inputs of width
// p + q*g: sigma2 * exp(-sum_d w_d (s_d - s'_d)^2) with
// w = [phi ; phi_z]. Positive parameters are stored as logs so the
// optimizer is unconstrained. phi_z defaults to all ones (identity latent
// metric) and is trainable only in the shared multi-output structure; beta
// and the noise variance ride along here so a single struct carries one
// output's full parameter set.
struct KernelParams {
  double beta = 0.0;
  double log_sigma2 = 0.0;
  VectorXd log_phi;    // length p
  VectorXd log_phi_z;  // length q*g
  double log_noise = 0.0;

  double sigma2() const { return std::exp(log_sigma2); }
  double noise_var() const { return std::exp(log_noise); }
  int width() const { return static_cast<int>(log_phi.size() + log_phi_z.size()); }
  VectorXd weights() const;

  static KernelParams make(int p, int q, int g);
};

// r(s, s') in (0, 1]; exactly 1 at zero distance.
double gaussian_correlation(const VectorXd& s, const VectorXd& s_prime,
                            const KernelParams& params);

// Entry (i,j) = sigma2 * r(A_i, B_j). Computed from coordinate differences,
// so cross_covariance(A, A, p) is exactly symmetric with diagonal sigma2.
MatrixXd cross_covariance(const MatrixXd& A, const MatrixXd& B, const KernelParams& params);

// Reverse-mode accumulation for a covariance block: given the upstream
// adjoint K_bar = dObjective/dK for K = cross_covariance(A, B, params),
// adds this block's contributions to the parameter gradients and (when
// requested) to the point-coordinate gradients d_A, d_B.
struct KernelAdjoint {
  double d_log_sigma2 = 0.0;
  VectorXd d_log_phi;
  VectorXd d_log_phi_z;
  MatrixXd d_A, d_B;
  bool want_points = false;

  void init(const KernelParams& params, int n_a, int n_b, bool with_points);
};

void accumulate_cov_adjoint(const MatrixXd& A, const MatrixXd& B, const MatrixXd& K,
                            const MatrixXd& K_bar, const KernelParams& params,
                            KernelAdjoint& adj);

}  // namespace svlvgp
