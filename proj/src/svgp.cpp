#include "svlvgp/svgp.hpp"

#include <cmath>

namespace svlvgp {

namespace {
constexpr double ln_2pi = 1.8378770664093454835606594728112;
}

void VariationalGaussian::validate() const {
  if (sigma_lower.rows() != mu.size() || sigma_lower.cols() != mu.size()) {
    throw DimensionMismatch("variational state: factor shape != mu length");
  }
  if (!mu.allFinite() || !sigma_lower.allFinite()) {
    throw NonFinite("variational state: non-finite entries");
  }
  if (!(sigma_lower.diagonal().array() > 0.0).all()) {
    throw DataError("variational state: sigma factor diagonal must be positive");
  }
}

InducingSet init_inducing(const MatrixXd& X, const MatrixXi& T, const MixedSchema& schema,
                          const LatentMap& map, int copy, int n_inducing, SeededRng& rng) {
  const int n = static_cast<int>(X.rows());
  if (n_inducing < 1 || n_inducing > n) {
    throw DimensionMismatch("init_inducing: need 1 <= n_I <= n");
  }
  // Partial Fisher-Yates: first n_inducing entries of a random permutation.
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = 0; i < n_inducing; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[i], idx[j]);
  }
  MatrixXd Xs(n_inducing, X.cols());
  MatrixXi Ts(n_inducing, T.cols());
  for (int i = 0; i < n_inducing; ++i) {
    Xs.row(i) = X.row(idx[i]);
    Ts.row(i) = T.row(idx[i]);
  }
  return InducingSet{encode_rows(Xs, Ts, schema, map, copy)};
}

double kl_term(const VariationalGaussian& var, const CholFactor& kii_chol) {
  const int n = var.size();
  if (kii_chol.order() != n) {
    throw DimensionMismatch("kl_term: factor order != variational size");
  }
  const auto prior_l = kii_chol.lower.triangularView<Eigen::Lower>();
  const MatrixXd w = prior_l.solve(var.sigma_lower);
  const VectorXd u = prior_l.solve(var.mu);
  const double ld_prior = logdet(kii_chol);
  const double ld_q = 2.0 * var.sigma_lower.diagonal().array().log().sum();
  return 0.5 * (ld_prior - ld_q - n + w.squaredNorm() + u.squaredNorm());
}

FunctionBlock make_function_block(const MatrixXd& S_I, const MatrixXd& S_B,
                                  const KernelParams& params, const VariationalGaussian& var) {
  FunctionBlock fb;
  fb.S_I = S_I;
  fb.S_B = S_B;
  fb.K_II = cross_covariance(S_I, S_I, params);
  fb.chol = cholesky_with_jitter(SymMatrix(fb.K_II), kernel_jitter(params.sigma2()));
  fb.K_IB = cross_covariance(S_I, S_B, params);
  fb.A = chol_solve(fb.chol, fb.K_IB).transpose();  // n_b x n_I
  const int nb = static_cast<int>(S_B.rows());
  fb.b_diag.resize(nb);
  for (int i = 0; i < nb; ++i) {
    const double b = params.sigma2() - fb.K_IB.col(i).dot(fb.A.row(i).transpose());
    if (b < 0.0) fb.b_floored.push_back(i);
    fb.b_diag(i) = std::max(0.0, b);
  }
  fb.proj = fb.A * var.mu;
  fb.U = fb.A * var.sigma_lower;
  fb.quad = fb.U.rowwise().squaredNorm();
  return fb;
}

ElboBreakdown sv_elbo(const SVModel& model, const MatrixXd& Xb, const MatrixXi& Tb,
                      const VectorXd& yb, double n_total) {
  if (yb.size() < 1) throw DimensionMismatch("sv_elbo: empty batch");
  model.var.validate();
  const MatrixXd S_B = encode_rows(Xb, Tb, model.schema, model.map, 0);
  const FunctionBlock fb = make_function_block(model.inducing.S, S_B, model.params, model.var);

  const double noise = model.params.noise_var();
  const double scale = n_total / static_cast<double>(yb.size());
  double ll = 0.0;
  for (int i = 0; i < yb.size(); ++i) {
    const double e = yb(i) - model.params.beta - fb.proj(i);
    ll += -0.5 * (ln_2pi + std::log(noise)) - (e * e + fb.quad(i) + fb.b_diag(i)) / (2.0 * noise);
  }
  ElboBreakdown out;
  out.lt = scale * ll;
  out.kl = kl_term(model.var, fb.chol);
  out.elbo = out.lt - out.kl;
  if (!std::isfinite(out.elbo)) throw NonFinite("sv_elbo: non-finite value");
  return out;
}

GpPrediction sv_predict(const SVModel& model, const MatrixXd& Xq, const MatrixXi& Tq,
                        bool full_cov, bool with_noise) {
  const MatrixXd Sq =
      encode_rows(model.norm.encode_x(Xq), Tq, model.schema, model.map, 0);
  const MatrixXd K_Iq = cross_covariance(model.inducing.S, Sq, model.params);  // n_I x n_q
  const CholFactor chol = cholesky_with_jitter(
      SymMatrix(cross_covariance(model.inducing.S, model.inducing.S, model.params)),
      kernel_jitter(model.params.sigma2()));
  const MatrixXd H = chol_solve(chol, K_Iq).transpose();  // n_q x n_I
  const int nq = static_cast<int>(Sq.rows());

  GpPrediction pred;
  pred.mean = model.params.beta + (H * model.var.mu).array();
  const MatrixXd HL = H * model.var.sigma_lower;
  const double noise = with_noise ? model.params.noise_var() : 0.0;
  const double yscale2 = model.norm.y_var_factor(0);
  pred.var.resize(nq);
  for (int i = 0; i < nq; ++i) {
    const double v = HL.row(i).squaredNorm() + model.params.sigma2() -
                     H.row(i).dot(K_Iq.col(i)) + noise;
    pred.var(i) = std::max(0.0, v) * yscale2;
  }
  if (full_cov) {
    pred.cov = HL * HL.transpose() + cross_covariance(Sq, Sq, model.params) - H * K_Iq;
    if (with_noise) pred.cov.diagonal().array() += noise;
    pred.cov.diagonal() = pred.cov.diagonal().cwiseMax(0.0);
    pred.cov *= yscale2;
  }
  pred.mean = model.norm.y_mean(0) + model.norm.y_scale(0) * pred.mean.array();
  return pred;
}

}  // namespace svlvgp
