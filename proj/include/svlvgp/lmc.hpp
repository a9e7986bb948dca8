#pragma once

#include "svlvgp/svgp.hpp"

namespace svlvgp {

// Linear model of coregionalization: N_op outputs mixed from L independent
// latent GPs, Y(u) = beta + W f(s). Each latent function has unit process
// variance (its scale lives in W's column) and its own kernel rates; in the
// Shared structure all functions read one latent-map copy but train their
// own phi_z, in the Independent structure each function owns a full copy.
struct LMCConfig {
  int n_outputs = 1;
  int n_latent = 1;  // L
  LatentStructure structure = LatentStructure::Shared;
  bool shared_inducing = true;  // Shared structure only; Independent forces per-function sets
  MatrixXd W;           // N_op x L
  VectorXd beta_vec;    // N_op
  VectorXd log_noise_vec;  // N_op, per-output noise variances
  std::vector<KernelParams> fn_params;  // per function; log_sigma2 pinned to 0,
                                        // beta/log_noise fields unused here

  void validate() const;
  int inducing_sets() const {
    return (structure == LatentStructure::Shared && shared_inducing) ? 1 : n_latent;
  }
};

struct MultiSVModel {
  MixedSchema schema;
  Normalization norm;
  LMCConfig cfg;
  LatentMap map;  // copies: 1 (Shared) or L (Independent)
  std::vector<InducingSet> inducing;       // size cfg.inducing_sets()
  std::vector<VariationalGaussian> var;    // size L

  const InducingSet& fn_inducing(int l) const { return inducing[inducing.size() == 1 ? 0 : l]; }
  int fn_copy(int l) const { return map.copies() == 1 ? 0 : l; }
  void validate() const;
};

// Covariance between outputs i and j (1-based) at one point pair:
// sum_l W_il r_l(s_l, s'_l) W_jl. s_fns holds each function's transformed
// coordinates (one shared row when all functions see the same encoding).
double coregional_cov(const LMCConfig& cfg, int i, int j,
                      const std::vector<VectorXd>& s_fns,
                      const std::vector<VectorXd>& s_prime_fns);

// Minibatch ELBO with per-output Gaussian likelihoods and block-diagonal
// prior over the stacked inducing values: KL sums over latent functions.
ElboBreakdown multi_elbo(const MultiSVModel& model, const MatrixXd& Xb, const MatrixXi& Tb,
                         const MatrixXd& Yb, double n_total);

struct MultiPrediction {
  MatrixXd mean;  // n_q x N_op, original units
  MatrixXd var;   // n_q x N_op, floored at 0
};

// Queries in original units; per-function sparse prediction mixed by W.
// Variance excludes noise unless with_noise is set.
MultiPrediction multi_predict(const MultiSVModel& model, const MatrixXd& Xq,
                              const MatrixXi& Tq, bool with_noise = false);

}  // namespace svlvgp
