#pragma once

#include "svlvgp/kernels.hpp"
#include "svlvgp/latent_map.hpp"
#include "svlvgp/numerics.hpp"

namespace svlvgp {

// Dense GP/LVGP over one output. Small-n correctness oracle for the sparse
// models; n is capped because everything here is O(n^3).
struct ExactModel {
  MixedSchema schema;
  Normalization norm;  // identity when fitted on raw units
  KernelParams params;
  LatentMap map;  // zero categorical blocks when q = 0
  MatrixXd S;     // encoded training inputs, stored units
  VectorXd y;     // stored-unit responses
  CholFactor chol;   // of sigma2*R + noise*I (+ jitter)
  VectorXd alpha;    // K^{ -1 }(y - beta)

  int n() const { return static_cast<int>(y.size()); }
};

inline constexpr int default_dense_cap = 2000;

// Training objective: 0.5 ln|K| + (1/(2 sigma2)) (y-beta)^T K^{-1} (y-beta)
// with K = sigma2*R + noise*I. Constants dropped.
double neg_log_likelihood(const KernelParams& params, const LatentMap& map,
                          const MixedSchema& schema, const MatrixXd& X, const MatrixXi& T,
                          const VectorXd& y);

// Full Gaussian log marginal likelihood ln N(y; beta*1, K), constants kept.
// This is the quantity the sparse ELBO provably lower-bounds.
double log_marginal(const KernelParams& params, const LatentMap& map,
                    const MixedSchema& schema, const MatrixXd& X, const MatrixXi& T,
                    const VectorXd& y);

// Builds the training snapshot (Cholesky and alpha) for fixed parameters.
// X and y are in stored units; pass norm so predictions can invert to
// original units (identity when the data is raw).
ExactModel make_exact_model(const MixedSchema& schema, const Normalization& norm,
                            const KernelParams& params, const LatentMap& map,
                            const MatrixXd& X, const MatrixXi& T, const VectorXd& y);

struct GpPrediction {
  VectorXd mean;  // original units
  VectorXd var;   // original units^2, floored at 0
  MatrixXd cov;   // filled only when full covariance was requested
};

// Queries are in original units; the model's normalization record is applied
// internally. Covariance excludes observation noise.
GpPrediction exact_predict(const ExactModel& model, const MatrixXd& Xq, const MatrixXi& Tq,
                           bool full_cov = false);

// Relative jitter used by every training-path factorization; smooth in the
// parameters so finite differences see a smooth objective.
inline double kernel_jitter(double diag_scale) { return 1e-8 * diag_scale; }

}  // namespace svlvgp
