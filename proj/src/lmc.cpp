#include "svlvgp/lmc.hpp"

#include <cmath>

namespace svlvgp {

namespace {
constexpr double ln_2pi = 1.8378770664093454835606594728112;
}

void LMCConfig::validate() const {
  if (n_latent < 1 || n_latent > n_outputs) {
    throw DimensionMismatch("lmc: need 1 <= L <= N_op");
  }
  if (W.rows() != n_outputs || W.cols() != n_latent) {
    throw DimensionMismatch("lmc: W must be N_op x L");
  }
  if (beta_vec.size() != n_outputs || log_noise_vec.size() != n_outputs) {
    throw DimensionMismatch("lmc: beta/noise vectors must have N_op entries");
  }
  if (static_cast<int>(fn_params.size()) != n_latent) {
    throw DimensionMismatch("lmc: need one KernelParams per latent function");
  }
  if (!W.allFinite()) throw NonFinite("lmc: W has non-finite entries");
  for (const auto& kp : fn_params) {
    if (kp.log_sigma2 != 0.0) {
      throw DataError("lmc: per-function sigma2 is pinned to 1 (scale lives in W)");
    }
  }
}

void MultiSVModel::validate() const {
  cfg.validate();
  const int copies_needed = cfg.structure == LatentStructure::Shared ? 1 : cfg.n_latent;
  if (map.copies() != copies_needed) {
    throw DimensionMismatch("lmc: latent map copy count disagrees with structure");
  }
  if (static_cast<int>(inducing.size()) != cfg.inducing_sets()) {
    throw DimensionMismatch("lmc: inducing set count disagrees with structure");
  }
  if (static_cast<int>(var.size()) != cfg.n_latent) {
    throw DimensionMismatch("lmc: need one variational state per latent function");
  }
}

double coregional_cov(const LMCConfig& cfg, int i, int j,
                      const std::vector<VectorXd>& s_fns,
                      const std::vector<VectorXd>& s_prime_fns) {
  if (i < 1 || i > cfg.n_outputs || j < 1 || j > cfg.n_outputs) {
    throw DimensionMismatch("coregional_cov: output index out of range");
  }
  auto pick = [&](const std::vector<VectorXd>& v, int l) -> const VectorXd& {
    return v.size() == 1 ? v[0] : v.at(l);
  };
  double cov = 0.0;
  for (int l = 0; l < cfg.n_latent; ++l) {
    const double r =
        gaussian_correlation(pick(s_fns, l), pick(s_prime_fns, l), cfg.fn_params[l]);
    cov += cfg.W(i - 1, l) * r * cfg.W(j - 1, l);
  }
  return cov;
}

ElboBreakdown multi_elbo(const MultiSVModel& model, const MatrixXd& Xb, const MatrixXi& Tb,
                         const MatrixXd& Yb, double n_total) {
  model.validate();
  const int nb = static_cast<int>(Yb.rows());
  const int n_op = model.cfg.n_outputs;
  const int L = model.cfg.n_latent;
  if (nb < 1 || Yb.cols() != n_op) throw DimensionMismatch("multi_elbo: bad batch shape");

  ElboBreakdown out;
  MatrixXd mean = MatrixXd::Zero(nb, n_op);
  mean.rowwise() = model.cfg.beta_vec.transpose();
  VectorXd spread = VectorXd::Zero(nb);  // sum_l W_ol^2 (quad + b); built per output below
  std::vector<VectorXd> qb(L);
  std::vector<VectorXd> proj(L);
  for (int l = 0; l < L; ++l) {
    model.var[l].validate();
    const MatrixXd S_B = encode_rows(Xb, Tb, model.schema, model.map, model.fn_copy(l));
    const FunctionBlock fb =
        make_function_block(model.fn_inducing(l).S, S_B, model.cfg.fn_params[l], model.var[l]);
    out.kl += kl_term(model.var[l], fb.chol);
    qb[l] = fb.quad + fb.b_diag;
    proj[l] = fb.proj;
    for (int o = 0; o < n_op; ++o) {
      mean.col(o).array() += model.cfg.W(o, l) * fb.proj.array();
    }
  }

  const double scale = n_total / static_cast<double>(nb);
  double ll = 0.0;
  for (int o = 0; o < n_op; ++o) {
    const double noise = std::exp(model.cfg.log_noise_vec(o));
    spread.setZero();
    for (int l = 0; l < L; ++l) {
      spread.array() += model.cfg.W(o, l) * model.cfg.W(o, l) * qb[l].array();
    }
    for (int i = 0; i < nb; ++i) {
      const double e = Yb(i, o) - mean(i, o);
      ll += -0.5 * (ln_2pi + std::log(noise)) - (e * e + spread(i)) / (2.0 * noise);
    }
  }
  out.lt = scale * ll;
  out.elbo = out.lt - out.kl;
  if (!std::isfinite(out.elbo)) throw NonFinite("multi_elbo: non-finite value");
  return out;
}

MultiPrediction multi_predict(const MultiSVModel& model, const MatrixXd& Xq,
                              const MatrixXi& Tq, bool with_noise) {
  model.validate();
  const int nq = static_cast<int>(Xq.rows());
  const int n_op = model.cfg.n_outputs;
  const int L = model.cfg.n_latent;
  const MatrixXd Xs = model.norm.encode_x(Xq);

  MultiPrediction pred;
  pred.mean = MatrixXd::Zero(nq, n_op);
  pred.mean.rowwise() = model.cfg.beta_vec.transpose();
  pred.var = MatrixXd::Zero(nq, n_op);

  for (int l = 0; l < L; ++l) {
    const KernelParams& kp = model.cfg.fn_params[l];
    const MatrixXd Sq = encode_rows(Xs, Tq, model.schema, model.map, model.fn_copy(l));
    const MatrixXd& S_I = model.fn_inducing(l).S;
    const MatrixXd K_Iq = cross_covariance(S_I, Sq, kp);
    const CholFactor chol = cholesky_with_jitter(SymMatrix(cross_covariance(S_I, S_I, kp)),
                                                 kernel_jitter(kp.sigma2()));
    const MatrixXd H = chol_solve(chol, K_Iq).transpose();  // n_q x n_I
    const VectorXd m_l = H * model.var[l].mu;
    const MatrixXd HL = H * model.var[l].sigma_lower;
    VectorXd c_l(nq);
    for (int i = 0; i < nq; ++i) {
      c_l(i) = HL.row(i).squaredNorm() + kp.sigma2() - H.row(i).dot(K_Iq.col(i));
    }
    for (int o = 0; o < n_op; ++o) {
      pred.mean.col(o) += model.cfg.W(o, l) * m_l;
      pred.var.col(o) += model.cfg.W(o, l) * model.cfg.W(o, l) * c_l;
    }
  }
  for (int o = 0; o < n_op; ++o) {
    if (with_noise) pred.var.col(o).array() += std::exp(model.cfg.log_noise_vec(o));
    const double f = model.norm.y_var_factor(o);
    pred.var.col(o) = pred.var.col(o).cwiseMax(0.0) * f;
    pred.mean.col(o) =
        (model.norm.y_mean(o) + model.norm.y_scale(o) * pred.mean.col(o).array()).matrix();
  }
  return pred;
}

}  // namespace svlvgp
