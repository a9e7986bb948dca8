#include "svlvgp/exact_gp.hpp"

#include <cmath>

namespace svlvgp {

namespace {

constexpr double ln_2pi = 1.8378770664093454835606594728112;

struct DenseParts {
  CholFactor chol;
  VectorXd alpha;     // K^{-1} r
  double quad = 0.0;  // r^T K^{-1} r
  double ld = 0.0;    // ln|K + jitter|
};

DenseParts dense_parts(const KernelParams& params, const LatentMap& map,
                       const MixedSchema& schema, const MatrixXd& X, const MatrixXi& T,
                       const VectorXd& y) {
  if (y.size() > default_dense_cap) {
    throw DimensionMismatch("dense GP: n exceeds dense cap " + std::to_string(default_dense_cap));
  }
  const MatrixXd S = encode_rows(X, T, schema, map, 0);
  MatrixXd K = cross_covariance(S, S, params);
  K.diagonal().array() += params.noise_var();
  DenseParts out;
  out.chol = cholesky_with_jitter(SymMatrix(std::move(K)),
                                  kernel_jitter(params.sigma2() + params.noise_var()));
  const VectorXd r = y.array() - params.beta;
  out.alpha = chol_solve(out.chol, r);
  out.quad = r.dot(out.alpha);
  out.ld = logdet(out.chol);
  return out;
}

}  // namespace

double neg_log_likelihood(const KernelParams& params, const LatentMap& map,
                          const MixedSchema& schema, const MatrixXd& X, const MatrixXi& T,
                          const VectorXd& y) {
  const DenseParts parts = dense_parts(params, map, schema, X, T, y);
  const double value = 0.5 * parts.ld + parts.quad / (2.0 * params.sigma2());
  if (!std::isfinite(value)) throw NonFinite("neg_log_likelihood: non-finite value");
  return value;
}

double log_marginal(const KernelParams& params, const LatentMap& map,
                    const MixedSchema& schema, const MatrixXd& X, const MatrixXi& T,
                    const VectorXd& y) {
  const DenseParts parts = dense_parts(params, map, schema, X, T, y);
  const double n = static_cast<double>(y.size());
  const double value = -0.5 * n * ln_2pi - 0.5 * parts.ld - 0.5 * parts.quad;
  if (!std::isfinite(value)) throw NonFinite("log_marginal: non-finite value");
  return value;
}

ExactModel make_exact_model(const MixedSchema& schema, const Normalization& norm,
                            const KernelParams& params, const LatentMap& map,
                            const MatrixXd& X, const MatrixXi& T, const VectorXd& y) {
  ExactModel m;
  m.schema = schema;
  m.norm = norm;
  m.params = params;
  m.map = map;
  m.S = encode_rows(X, T, schema, map, 0);
  m.y = y;
  DenseParts parts = dense_parts(params, map, schema, X, T, y);
  m.chol = std::move(parts.chol);
  m.alpha = std::move(parts.alpha);
  return m;
}

GpPrediction exact_predict(const ExactModel& model, const MatrixXd& Xq, const MatrixXi& Tq,
                           bool full_cov) {
  const MatrixXd Sq =
      encode_rows(model.norm.encode_x(Xq), Tq, model.schema, model.map, 0);
  const MatrixXd Kq = cross_covariance(Sq, model.S, model.params);  // n_q x n

  GpPrediction pred;
  pred.mean = (model.params.beta + (Kq * model.alpha).array()).matrix();

  const MatrixXd V = chol_solve(model.chol, Kq.transpose());  // n x n_q
  const double yscale2 = model.norm.y_var_factor(0);
  pred.var.resize(Sq.rows());
  for (int i = 0; i < Sq.rows(); ++i) {
    const double v = model.params.sigma2() - Kq.row(i).dot(V.col(i));
    pred.var(i) = std::max(0.0, v) * yscale2;
  }
  if (full_cov) {
    pred.cov = cross_covariance(Sq, Sq, model.params) - Kq * V;
    pred.cov.diagonal() = pred.cov.diagonal().cwiseMax(0.0);
    pred.cov *= yscale2;
  }
  pred.mean = model.norm.y_mean(0) + model.norm.y_scale(0) * pred.mean.array();
  return pred;
}

}  // namespace svlvgp
