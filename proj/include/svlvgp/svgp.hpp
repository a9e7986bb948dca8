#pragma once

#include "svlvgp/exact_gp.hpp"

namespace svlvgp {

// Inducing locations in the transformed input space (width p + q*g).
struct InducingSet {
  MatrixXd S;

  int count() const { return static_cast<int>(S.rows()); }
};

// q(G_I) = N(mu, Sigma) with Sigma = L L^T held by its lower factor; the
// factor's diagonal stays positive, so Sigma is PSD by construction.
struct VariationalGaussian {
  VectorXd mu;
  MatrixXd sigma_lower;

  MatrixXd sigma() const { return sigma_lower * sigma_lower.transpose(); }
  int size() const { return static_cast<int>(mu.size()); }
  void validate() const;
};

struct SVModel {
  MixedSchema schema;
  Normalization norm;
  KernelParams params;
  LatentMap map;  // Shared, one copy
  InducingSet inducing;
  VariationalGaussian var;
};

// n_I distinct training rows, sampled without replacement and encoded.
InducingSet init_inducing(const MatrixXd& X, const MatrixXi& T, const MixedSchema& schema,
                          const LatentMap& map, int copy, int n_inducing, SeededRng& rng);

// KL(q(G_I) || N(0, K_II)); analytically >= 0.
double kl_term(const VariationalGaussian& var, const CholFactor& kii_chol);

struct ElboBreakdown {
  double elbo = 0.0;
  double lt = 0.0;  // scaled likelihood term
  double kl = 0.0;
};

// Minibatch ELBO: (n_total/n_b) * sum_i [ ln N(y_i; beta + a_i^T mu, noise)
// - (a_i^T Sigma a_i + b_ii) / (2 noise) ] - KL. Batch given in stored units.
ElboBreakdown sv_elbo(const SVModel& model, const MatrixXd& Xb, const MatrixXi& Tb,
                      const VectorXd& yb, double n_total);

// Sparse prediction; cost depends on n_I only. Queries in original units,
// outputs decoded back to original units. Covariance excludes noise unless
// with_noise is set.
GpPrediction sv_predict(const SVModel& model, const MatrixXd& Xq, const MatrixXi& Tq,
                        bool full_cov = false, bool with_noise = false);

// Shared forward pieces for one latent function's covariance structure;
// reused by the single-output ELBO, the multi-output ELBO, and their
// gradients. K_II is kept unjittered for the adjoint pass; the Cholesky
// carries the jitter.
struct FunctionBlock {
  MatrixXd S_I;       // n_I x D
  MatrixXd S_B;       // n_b x D
  MatrixXd K_II;      // unjittered
  CholFactor chol;    // of K_II + jitter
  MatrixXd K_IB;      // n_I x n_b
  MatrixXd A;         // n_b x n_I, row i = (K_II^{-1} k_i)^T
  VectorXd b_diag;    // floored at 0
  VectorXd proj;      // A mu
  VectorXd quad;      // a_i^T Sigma a_i
  MatrixXd U;         // A * sigma_lower (n_b x n_I)
  std::vector<int> b_floored;  // rows where the floor clipped
};

FunctionBlock make_function_block(const MatrixXd& S_I, const MatrixXd& S_B,
                                  const KernelParams& params, const VariationalGaussian& var);

}  // namespace svlvgp
