#include "svlvgp/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace svlvgp {

namespace {
constexpr double ln_2pi = 1.8378770664093454835606594728112;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw DataError("train config: batch_size must be >= 1");
  if (max_iters < 1) throw DataError("train config: max_iters must be >= 1");
  if (adam_lr <= 0 || natgrad_gamma < 0) throw DataError("train config: step sizes must be > 0");
  if (z_freeze_fraction < 0 || z_freeze_fraction > 1) {
    throw DataError("train config: z_freeze_fraction must be in [0,1]");
  }
  if (convergence_window < 1 || convergence_tol < 0) {
    throw DataError("train config: bad convergence settings");
  }
  if (restarts < 1) throw DataError("train config: restarts must be >= 1");
}

void TrainingTrace::append(int it, double e, double k, double l, double s) {
  iteration.push_back(it);
  elbo.push_back(e);
  kl.push_back(k);
  lt.push_back(l);
  seconds.push_back(s);
}

void write_trace_csv(const TrainingTrace& trace, const std::string& path) {
  std::string out = "iteration,elbo,kl,lt,seconds\n";
  for (size_t i = 0; i < trace.size(); ++i) {
    out += std::to_string(trace.iteration[i]) + ',' + format_double(trace.elbo[i]) + ',' +
           format_double(trace.kl[i]) + ',' + format_double(trace.lt[i]) + ',' +
           format_double(trace.seconds[i]) + '\n';
  }
  atomic_write_text(path, out);
}

// ---------------------------------------------------------------------------
// Shared adjoint pieces
// ---------------------------------------------------------------------------

namespace {

// Adds the latent-coordinate columns of d_S into per-variable latent-vector
// gradients, routed by each row's levels. The quantitative columns of d_S
// are not consumed here (training inputs are data, not parameters).
void scatter_latent_grads(const MatrixXd& d_S, const MatrixXi& T, const MixedSchema& schema,
                          int g, std::vector<MatrixXd>& z_grads) {
  for (int j = 0; j < schema.q; ++j) {
    for (int i = 0; i < d_S.rows(); ++i) {
      z_grads[j].row(T(i, j) - 1) += d_S.block(i, schema.p + j * g, 1, g);
    }
  }
}

std::vector<MatrixXd> zero_z_grads(const MixedSchema& schema, int g) {
  std::vector<MatrixXd> out(schema.q);
  for (int j = 0; j < schema.q; ++j) out[j] = MatrixXd::Zero(schema.levels[j], g);
  return out;
}

struct BlockBackward {
  double d_log_sigma2 = 0.0;
  VectorXd d_log_phi, d_log_phi_z;
  MatrixXd d_SI, d_SB;
  VarGrads var;
};

// Reverse pass through one function block. proj_bar is dELBO/dproj per batch
// row; quad_bar is dELBO/d(quad_i) (also the adjoint of b_i before flooring).
// The KL term's adjoints (weight -1 in the ELBO) are included here.
BlockBackward block_backward(const FunctionBlock& fb, const KernelParams& params,
                             const VariationalGaussian& var, const VectorXd& proj_bar,
                             const VectorXd& quad_bar) {
  const int n_i = static_cast<int>(fb.S_I.rows());
  const int n_b = static_cast<int>(fb.S_B.rows());
  const auto chol_l = fb.chol.lower.triangularView<Eigen::Lower>();

  // b_i adjoint, zeroed where the floor clipped.
  VectorXd b_bar = quad_bar;
  for (int i : fb.b_floored) b_bar(i) = 0.0;

  // Precision pieces of the prior block.
  const MatrixXd P = chol_solve(fb.chol, MatrixXd::Identity(n_i, n_i));
  const VectorXd P_mu = chol_solve(fb.chol, var.mu);
  const MatrixXd PL = chol_solve(fb.chol, var.sigma_lower);

  BlockBackward out;

  // Variational gradients (natural-gradient inputs).
  const auto sigma_l = var.sigma_lower.triangularView<Eigen::Lower>();
  MatrixXd sigma_inv = sigma_l.solve(MatrixXd::Identity(n_i, n_i));
  sigma_inv = (sigma_inv.transpose() * sigma_inv).eval();
  out.var.g_mu = fb.A.transpose() * proj_bar - P_mu;
  out.var.g_sigma = fb.A.transpose() * quad_bar.asDiagonal() * fb.A -
                    0.5 * (P - sigma_inv);
  out.var.g_sigma = (0.5 * (out.var.g_sigma + out.var.g_sigma.transpose())).eval();
  const MatrixXd d_sig_full = 2.0 * out.var.g_sigma * var.sigma_lower;
  out.var.d_sigma_lower = d_sig_full.triangularView<Eigen::Lower>();

  // A and covariance-block adjoints.
  MatrixXd A_bar = proj_bar * var.mu.transpose();                       // proj = A mu
  A_bar.noalias() += 2.0 * quad_bar.asDiagonal() * (fb.U * var.sigma_lower.transpose());
  A_bar.noalias() -= b_bar.asDiagonal() * fb.K_IB.transpose();          // b_i = s2 - k_i . a_i

  MatrixXd Kib_bar = -(fb.A.transpose() * b_bar.asDiagonal());
  const MatrixXd Vt = chol_solve(fb.chol, MatrixXd(A_bar.transpose()));  // through A = (K_II^{-1}K_IB)^T
  Kib_bar.noalias() += Vt;
  MatrixXd Kii_bar = -Vt * fb.A;
  Kii_bar.noalias() += -0.5 * (P - PL * PL.transpose() - P_mu * P_mu.transpose());

  // Kernel-parameter and point-coordinate accumulation.
  KernelAdjoint adj_ii, adj_ib;
  adj_ii.init(params, n_i, n_i, true);
  adj_ib.init(params, n_i, n_b, true);
  accumulate_cov_adjoint(fb.S_I, fb.S_I, fb.K_II, Kii_bar, params, adj_ii);
  accumulate_cov_adjoint(fb.S_I, fb.S_B, fb.K_IB, Kib_bar, params, adj_ib);

  out.d_log_sigma2 = adj_ii.d_log_sigma2 + adj_ib.d_log_sigma2;
  out.d_log_sigma2 += params.sigma2() * b_bar.sum();        // direct sigma2 term in b_i
  out.d_log_sigma2 += fb.chol.jitter_used * Kii_bar.trace();  // jitter rides on sigma2
  out.d_log_phi = adj_ii.d_log_phi + adj_ib.d_log_phi;
  out.d_log_phi_z = adj_ii.d_log_phi_z + adj_ib.d_log_phi_z;
  out.d_SI = adj_ii.d_A + adj_ii.d_B + adj_ib.d_A;
  out.d_SB = adj_ib.d_B;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Objective gradients
// ---------------------------------------------------------------------------

double nll_value_grad(const KernelParams& params, const LatentMap& map,
                      const MixedSchema& schema, const MatrixXd& X, const MatrixXi& T,
                      const VectorXd& y, ExactGrads* grads) {
  const int n = static_cast<int>(y.size());
  const MatrixXd S = encode_rows(X, T, schema, map, 0);
  const MatrixXd K_cov = cross_covariance(S, S, params);
  MatrixXd K = K_cov;
  K.diagonal().array() += params.noise_var();
  const double sigma2 = params.sigma2();
  const double noise = params.noise_var();
  const CholFactor chol =
      cholesky_with_jitter(SymMatrix(std::move(K)), kernel_jitter(sigma2 + noise));

  const VectorXd r = y.array() - params.beta;
  const VectorXd alpha = chol_solve(chol, r);
  const double quad = r.dot(alpha);
  const double c = 1.0 / (2.0 * sigma2);
  const double value = 0.5 * logdet(chol) + c * quad;
  if (!std::isfinite(value)) throw NonFinite("neg_log_likelihood: non-finite value");
  if (!grads) return value;

  const MatrixXd P = chol_solve(chol, MatrixXd::Identity(n, n));
  MatrixXd K_bar = 0.5 * P - c * alpha * alpha.transpose();

  KernelAdjoint adj;
  adj.init(params, n, n, true);
  accumulate_cov_adjoint(S, S, K_cov, K_bar, params, adj);

  grads->beta = -2.0 * c * alpha.sum();
  const double tr_bar = K_bar.trace();
  const double jit_share = chol.jitter_used / (sigma2 + noise);
  grads->log_noise = noise * (1.0 + jit_share) * tr_bar;
  grads->log_sigma2 = adj.d_log_sigma2 - c * quad + sigma2 * jit_share * tr_bar;
  grads->log_phi = adj.d_log_phi;
  grads->log_phi_z = adj.d_log_phi_z;
  grads->z = zero_z_grads(schema, map.g);
  const MatrixXd d_S = adj.d_A + adj.d_B;
  scatter_latent_grads(d_S, T, schema, map.g, grads->z);
  return value;
}

ElboBreakdown sv_elbo_grad(const SVModel& model, const MatrixXd& Xb, const MatrixXi& Tb,
                           const VectorXd& yb, double n_total, SvGrads* grads) {
  if (yb.size() < 1) throw DimensionMismatch("sv_elbo: empty batch");
  model.var.validate();
  const MatrixXd S_B = encode_rows(Xb, Tb, model.schema, model.map, 0);
  const FunctionBlock fb = make_function_block(model.inducing.S, S_B, model.params, model.var);

  const double noise = model.params.noise_var();
  const double scale = n_total / static_cast<double>(yb.size());
  const VectorXd e = yb.array() - model.params.beta - fb.proj.array();
  const VectorXd total = e.array().square() + fb.quad.array() + fb.b_diag.array();
  const double ll = -0.5 * static_cast<double>(yb.size()) * (ln_2pi + std::log(noise)) -
                    total.sum() / (2.0 * noise);

  ElboBreakdown out;
  out.lt = scale * ll;
  out.kl = kl_term(model.var, fb.chol);
  out.elbo = out.lt - out.kl;
  if (!std::isfinite(out.elbo)) throw NonFinite("sv_elbo: non-finite value");
  if (!grads) return out;

  const VectorXd proj_bar = (scale / noise) * e;
  const VectorXd quad_bar = VectorXd::Constant(yb.size(), -scale / (2.0 * noise));
  BlockBackward bb = block_backward(fb, model.params, model.var, proj_bar, quad_bar);

  grads->beta = scale * e.sum() / noise;
  grads->log_noise = scale * (total.sum() / (2.0 * noise) - 0.5 * static_cast<double>(yb.size()));
  grads->log_sigma2 = bb.d_log_sigma2;
  grads->log_phi = std::move(bb.d_log_phi);
  grads->log_phi_z = std::move(bb.d_log_phi_z);
  grads->z = zero_z_grads(model.schema, model.map.g);
  scatter_latent_grads(bb.d_SB, Tb, model.schema, model.map.g, grads->z);
  grads->inducing = std::move(bb.d_SI);
  grads->var = std::move(bb.var);
  return out;
}

ElboBreakdown lmc_elbo_grad(const MultiSVModel& model, const MatrixXd& Xb, const MatrixXi& Tb,
                            const MatrixXd& Yb, double n_total, LmcGrads* grads) {
  model.validate();
  const int nb = static_cast<int>(Yb.rows());
  const int n_op = model.cfg.n_outputs;
  const int L = model.cfg.n_latent;
  if (nb < 1 || Yb.cols() != n_op) throw DimensionMismatch("multi_elbo: bad batch shape");
  const double scale = n_total / static_cast<double>(nb);

  // Forward pieces per function; encodings cached per latent-map copy.
  std::vector<MatrixXd> S_B_by_copy(model.map.copies());
  for (int c = 0; c < model.map.copies(); ++c) {
    S_B_by_copy[c] = encode_rows(Xb, Tb, model.schema, model.map, c);
  }
  std::vector<FunctionBlock> fb(L);
  ElboBreakdown out;
  for (int l = 0; l < L; ++l) {
    model.var[l].validate();
    fb[l] = make_function_block(model.fn_inducing(l).S, S_B_by_copy[model.fn_copy(l)],
                                model.cfg.fn_params[l], model.var[l]);
    out.kl += kl_term(model.var[l], fb[l].chol);
  }

  MatrixXd e(nb, n_op);
  for (int o = 0; o < n_op; ++o) {
    VectorXd mean = VectorXd::Constant(nb, model.cfg.beta_vec(o));
    for (int l = 0; l < L; ++l) mean += model.cfg.W(o, l) * fb[l].proj;
    e.col(o) = Yb.col(o) - mean;
  }
  double ll = 0.0;
  MatrixXd total(nb, n_op);  // e^2 + sum_l W_ol^2 (quad + b)
  for (int o = 0; o < n_op; ++o) {
    const double noise = std::exp(model.cfg.log_noise_vec(o));
    VectorXd spread = VectorXd::Zero(nb);
    for (int l = 0; l < L; ++l) {
      const double w = model.cfg.W(o, l);
      spread.array() += w * w * (fb[l].quad.array() + fb[l].b_diag.array());
    }
    total.col(o) = e.col(o).array().square() + spread.array();
    ll += -0.5 * nb * (ln_2pi + std::log(noise)) - total.col(o).sum() / (2.0 * noise);
  }
  out.lt = scale * ll;
  out.elbo = out.lt - out.kl;
  if (!std::isfinite(out.elbo)) throw NonFinite("multi_elbo: non-finite value");
  if (!grads) return out;

  grads->beta = VectorXd::Zero(n_op);
  grads->log_noise = VectorXd::Zero(n_op);
  grads->W = MatrixXd::Zero(n_op, L);
  grads->log_phi.assign(L, VectorXd());
  grads->log_phi_z.assign(L, VectorXd());
  grads->z.resize(model.map.copies());
  for (int c = 0; c < model.map.copies(); ++c) {
    grads->z[c] = zero_z_grads(model.schema, model.map.g);
  }
  grads->inducing.assign(model.inducing.size(),
                         MatrixXd::Zero(model.inducing[0].S.rows(), model.inducing[0].S.cols()));
  grads->var.resize(L);

  VectorXd inv_noise(n_op);
  for (int o = 0; o < n_op; ++o) {
    const double noise = std::exp(model.cfg.log_noise_vec(o));
    inv_noise(o) = 1.0 / noise;
    grads->beta(o) = scale * e.col(o).sum() * inv_noise(o);
    grads->log_noise(o) = scale * (total.col(o).sum() * 0.5 * inv_noise(o) - 0.5 * nb);
  }

  for (int l = 0; l < L; ++l) {
    // kappa_l = dELBO/d(quad_i + b_i): constant over batch rows.
    double kappa = 0.0;
    VectorXd proj_bar = VectorXd::Zero(nb);
    for (int o = 0; o < n_op; ++o) {
      const double w = model.cfg.W(o, l);
      kappa += -scale * w * w * 0.5 * inv_noise(o);
      proj_bar += (scale * w * inv_noise(o)) * e.col(o);
      grads->W(o, l) =
          scale * inv_noise(o) *
          (e.col(o).dot(fb[l].proj) - model.cfg.W(o, l) * (fb[l].quad.sum() + fb[l].b_diag.sum()));
    }
    const VectorXd quad_bar = VectorXd::Constant(nb, kappa);
    BlockBackward bb =
        block_backward(fb[l], model.cfg.fn_params[l], model.var[l], proj_bar, quad_bar);
    grads->log_phi[l] = std::move(bb.d_log_phi);
    grads->log_phi_z[l] = std::move(bb.d_log_phi_z);
    scatter_latent_grads(bb.d_SB, Tb, model.schema, model.map.g, grads->z[model.fn_copy(l)]);
    grads->inducing[model.inducing.size() == 1 ? 0 : l] += bb.d_SI;
    grads->var[l] = std::move(bb.var);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer steps
// ---------------------------------------------------------------------------

VariationalGaussian natgrad_step(const VariationalGaussian& var, const VectorXd& g_mu,
                                 const MatrixXd& g_sigma, double gamma) {
  var.validate();
  const int n = var.size();
  if (g_mu.size() != n || g_sigma.rows() != n || g_sigma.cols() != n) {
    throw DimensionMismatch("natgrad_step: gradient shapes disagree with state");
  }
  if (gamma == 0.0) return var;

  const auto sl = var.sigma_lower.triangularView<Eigen::Lower>();
  MatrixXd w = sl.solve(MatrixXd::Identity(n, n));
  const MatrixXd precision = w.transpose() * w;  // Sigma^{-1}
  VectorXd theta1 = sl.solve(var.mu);
  var.sigma_lower.transpose().triangularView<Eigen::Upper>().solveInPlace(theta1);
  const VectorXd nat1 = g_mu - 2.0 * g_sigma * var.mu;

  double step = gamma;
  for (int attempt = 0; attempt <= 10; ++attempt, step *= 0.5) {
    MatrixXd m = precision - 2.0 * step * g_sigma;
    m = 0.5 * (m + m.transpose()).eval();
    Eigen::LLT<MatrixXd> llt_m(m);
    if (llt_m.info() != Eigen::Success) continue;
    MatrixXd sigma_new = llt_m.solve(MatrixXd::Identity(n, n));
    sigma_new = 0.5 * (sigma_new + sigma_new.transpose()).eval();
    Eigen::LLT<MatrixXd> llt_s(sigma_new);
    if (llt_s.info() != Eigen::Success) continue;
    VariationalGaussian out;
    out.mu = llt_m.solve(theta1 + step * nat1);
    out.sigma_lower = llt_s.matrixL();
    if (!(out.sigma_lower.diagonal().array() > 0.0).all() || !out.mu.allFinite()) continue;
    return out;
  }
  throw StepRejected("natgrad_step: covariance update not PD after 10 halvings");
}

void AdamState::step(VectorXd& theta, const VectorXd& grad, const std::vector<bool>& active,
                     const TrainConfig& cfg) {
  ++t;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (int i = 0; i < theta.size(); ++i) {
    if (!active[i]) continue;
    const double g = grad(i);
    m(i) = cfg.adam_beta1 * m(i) + (1.0 - cfg.adam_beta1) * g;
    v(i) = cfg.adam_beta2 * v(i) + (1.0 - cfg.adam_beta2) * g * g;
    const double mhat = m(i) / bc1;
    const double vhat = v(i) / bc2;
    theta(i) += cfg.adam_lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
}

// ---------------------------------------------------------------------------
// Parameter packing
// ---------------------------------------------------------------------------

namespace {

struct FlatLayout {
  struct Group {
    std::string name;
    int offset;
    int size;
    bool is_log;  // clamped to +-40 after each step
  };
  std::vector<Group> groups;
  int total = 0;

  void add(const std::string& name, int size) {
    groups.push_back({name, total, size, name.rfind("log_", 0) == 0});
    total += size;
  }
  const Group* find(const std::string& name) const {
    for (const auto& g : groups) {
      if (g.name == name) return &g;
    }
    return nullptr;
  }
};

void clamp_logs(VectorXd& theta, const FlatLayout& layout) {
  for (const auto& g : layout.groups) {
    if (!g.is_log) continue;
    theta.segment(g.offset, g.size) =
        theta.segment(g.offset, g.size).cwiseMax(-40.0).cwiseMin(40.0);
  }
}

void check_finite_by_group(const VectorXd& grad, const FlatLayout& layout) {
  for (const auto& g : layout.groups) {
    if (!grad.segment(g.offset, g.size).allFinite()) {
      throw NonFinite("gradient: non-finite values in group " + g.name);
    }
  }
}

int map_size(const std::vector<MatrixXd>& blocks) {
  int s = 0;
  for (const auto& b : blocks) s += static_cast<int>(b.size());
  return s;
}

void copy_blocks_out(const std::vector<MatrixXd>& blocks, VectorXd& flat, int& pos) {
  for (const auto& b : blocks) {
    for (int c = 0; c < b.cols(); ++c) {
      for (int r = 0; r < b.rows(); ++r) flat(pos++) = b(r, c);
    }
  }
}

void copy_blocks_in(std::vector<MatrixXd>& blocks, const VectorXd& flat, int& pos) {
  for (auto& b : blocks) {
    for (int c = 0; c < b.cols(); ++c) {
      for (int r = 0; r < b.rows(); ++r) b(r, c) = flat(pos++);
    }
  }
}

void copy_matrix_out(const MatrixXd& m, VectorXd& flat, int& pos) {
  for (int c = 0; c < m.cols(); ++c) {
    for (int r = 0; r < m.rows(); ++r) flat(pos++) = m(r, c);
  }
}

void copy_matrix_in(MatrixXd& m, const VectorXd& flat, int& pos) {
  for (int c = 0; c < m.cols(); ++c) {
    for (int r = 0; r < m.rows(); ++r) m(r, c) = flat(pos++);
  }
}

// --- single-output SV packing ---

FlatLayout sv_layout(const SVModel& m, bool with_inducing) {
  FlatLayout lay;
  lay.add("beta", 1);
  lay.add("log_noise", 1);
  lay.add("log_sigma2", 1);
  lay.add("log_phi", static_cast<int>(m.params.log_phi.size()));
  lay.add("z", map_size(m.map.z[0]));
  if (with_inducing) lay.add("inducing", static_cast<int>(m.inducing.S.size()));
  return lay;
}

VectorXd sv_pack(const SVModel& m, const FlatLayout& lay, bool with_inducing) {
  VectorXd flat(lay.total);
  int pos = 0;
  flat(pos++) = m.params.beta;
  flat(pos++) = m.params.log_noise;
  flat(pos++) = m.params.log_sigma2;
  for (int i = 0; i < m.params.log_phi.size(); ++i) flat(pos++) = m.params.log_phi(i);
  copy_blocks_out(m.map.z[0], flat, pos);
  if (with_inducing) copy_matrix_out(m.inducing.S, flat, pos);
  return flat;
}

void sv_unpack(SVModel& m, const VectorXd& flat, bool with_inducing) {
  int pos = 0;
  m.params.beta = flat(pos++);
  m.params.log_noise = flat(pos++);
  m.params.log_sigma2 = flat(pos++);
  for (int i = 0; i < m.params.log_phi.size(); ++i) m.params.log_phi(i) = flat(pos++);
  copy_blocks_in(m.map.z[0], flat, pos);
  if (with_inducing) copy_matrix_in(m.inducing.S, flat, pos);
}

VectorXd sv_pack_grads(const SvGrads& g, const FlatLayout& lay, bool with_inducing) {
  VectorXd flat(lay.total);
  int pos = 0;
  flat(pos++) = g.beta;
  flat(pos++) = g.log_noise;
  flat(pos++) = g.log_sigma2;
  for (int i = 0; i < g.log_phi.size(); ++i) flat(pos++) = g.log_phi(i);
  copy_blocks_out(g.z, flat, pos);
  if (with_inducing) copy_matrix_out(g.inducing, flat, pos);
  return flat;
}

// --- dense MLE packing (beta profiled out) ---

struct ExactState {
  KernelParams params;
  LatentMap map;
};

FlatLayout exact_layout(const ExactState& s) {
  FlatLayout lay;
  lay.add("log_noise", 1);
  lay.add("log_sigma2", 1);
  lay.add("log_phi", static_cast<int>(s.params.log_phi.size()));
  lay.add("z", map_size(s.map.z[0]));
  return lay;
}

VectorXd exact_pack(const ExactState& s, const FlatLayout& lay) {
  VectorXd flat(lay.total);
  int pos = 0;
  flat(pos++) = s.params.log_noise;
  flat(pos++) = s.params.log_sigma2;
  for (int i = 0; i < s.params.log_phi.size(); ++i) flat(pos++) = s.params.log_phi(i);
  copy_blocks_out(s.map.z[0], flat, pos);
  return flat;
}

void exact_unpack(ExactState& s, const VectorXd& flat) {
  int pos = 0;
  s.params.log_noise = flat(pos++);
  s.params.log_sigma2 = flat(pos++);
  for (int i = 0; i < s.params.log_phi.size(); ++i) s.params.log_phi(i) = flat(pos++);
  copy_blocks_in(s.map.z[0], flat, pos);
}

VectorXd exact_pack_grads(const ExactGrads& g, const FlatLayout& lay) {
  VectorXd flat(lay.total);
  int pos = 0;
  flat(pos++) = g.log_noise;
  flat(pos++) = g.log_sigma2;
  for (int i = 0; i < g.log_phi.size(); ++i) flat(pos++) = g.log_phi(i);
  copy_blocks_out(g.z, flat, pos);
  return flat;
}

// --- LMC packing ---

FlatLayout lmc_layout(const MultiSVModel& m) {
  FlatLayout lay;
  const int L = m.cfg.n_latent;
  lay.add("beta", m.cfg.n_outputs);
  lay.add("log_noise", m.cfg.n_outputs);
  lay.add("W", static_cast<int>(m.cfg.W.size()));
  lay.add("log_phi", L * static_cast<int>(m.cfg.fn_params[0].log_phi.size()));
  if (m.cfg.structure == LatentStructure::Shared) {
    lay.add("log_phi_z", L * static_cast<int>(m.cfg.fn_params[0].log_phi_z.size()));
  }
  int zsize = 0;
  for (const auto& copy : m.map.z) zsize += map_size(copy);
  lay.add("z", zsize);
  int isize = 0;
  for (const auto& ind : m.inducing) isize += static_cast<int>(ind.S.size());
  lay.add("inducing", isize);
  return lay;
}

VectorXd lmc_pack(const MultiSVModel& m, const FlatLayout& lay) {
  VectorXd flat(lay.total);
  int pos = 0;
  for (int o = 0; o < m.cfg.n_outputs; ++o) flat(pos++) = m.cfg.beta_vec(o);
  for (int o = 0; o < m.cfg.n_outputs; ++o) flat(pos++) = m.cfg.log_noise_vec(o);
  copy_matrix_out(m.cfg.W, flat, pos);
  for (const auto& kp : m.cfg.fn_params) {
    for (int i = 0; i < kp.log_phi.size(); ++i) flat(pos++) = kp.log_phi(i);
  }
  if (m.cfg.structure == LatentStructure::Shared) {
    for (const auto& kp : m.cfg.fn_params) {
      for (int i = 0; i < kp.log_phi_z.size(); ++i) flat(pos++) = kp.log_phi_z(i);
    }
  }
  for (const auto& copy : m.map.z) copy_blocks_out(copy, flat, pos);
  for (const auto& ind : m.inducing) copy_matrix_out(ind.S, flat, pos);
  return flat;
}

void lmc_unpack(MultiSVModel& m, const VectorXd& flat) {
  int pos = 0;
  for (int o = 0; o < m.cfg.n_outputs; ++o) m.cfg.beta_vec(o) = flat(pos++);
  for (int o = 0; o < m.cfg.n_outputs; ++o) m.cfg.log_noise_vec(o) = flat(pos++);
  copy_matrix_in(m.cfg.W, flat, pos);
  for (auto& kp : m.cfg.fn_params) {
    for (int i = 0; i < kp.log_phi.size(); ++i) kp.log_phi(i) = flat(pos++);
  }
  if (m.cfg.structure == LatentStructure::Shared) {
    for (auto& kp : m.cfg.fn_params) {
      for (int i = 0; i < kp.log_phi_z.size(); ++i) kp.log_phi_z(i) = flat(pos++);
    }
  }
  for (auto& copy : m.map.z) copy_blocks_in(copy, flat, pos);
  for (auto& ind : m.inducing) copy_matrix_in(ind.S, flat, pos);
}

VectorXd lmc_pack_grads(const MultiSVModel& m, const LmcGrads& g, const FlatLayout& lay) {
  VectorXd flat(lay.total);
  int pos = 0;
  for (int o = 0; o < m.cfg.n_outputs; ++o) flat(pos++) = g.beta(o);
  for (int o = 0; o < m.cfg.n_outputs; ++o) flat(pos++) = g.log_noise(o);
  copy_matrix_out(g.W, flat, pos);
  for (const auto& v : g.log_phi) {
    for (int i = 0; i < v.size(); ++i) flat(pos++) = v(i);
  }
  if (m.cfg.structure == LatentStructure::Shared) {
    for (const auto& v : g.log_phi_z) {
      for (int i = 0; i < v.size(); ++i) flat(pos++) = v(i);
    }
  }
  for (const auto& copy : g.z) copy_blocks_out(copy, flat, pos);
  for (const auto& ind : g.inducing) copy_matrix_out(ind, flat, pos);
  return flat;
}

// --- loop bookkeeping shared by the three fit paths ---

struct BatchSampler {
  std::vector<int> pool;
  std::vector<int> batch;

  explicit BatchSampler(int n) : pool(n) {
    for (int i = 0; i < n; ++i) pool[i] = i;
  }
  // Draws n_b distinct indices; pool order restored afterwards so the cost
  // per draw stays O(n_b) regardless of n.
  const std::vector<int>& draw(int n_b, SeededRng& rng) {
    const int n = static_cast<int>(pool.size());
    batch.resize(n_b);
    if (n_b >= n) {
      for (int i = 0; i < n; ++i) batch[i] = i;
      return batch;
    }
    std::vector<std::pair<int, int>> swaps;
    swaps.reserve(n_b);
    for (int i = 0; i < n_b; ++i) {
      const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[i], pool[j]);
      swaps.emplace_back(i, j);
      batch[i] = pool[i];
    }
    for (auto it = swaps.rbegin(); it != swaps.rend(); ++it) {
      std::swap(pool[it->first], pool[it->second]);
    }
    return batch;
  }
};

void gather_batch(const Dataset& d, const std::vector<int>& idx, MatrixXd& Xb, MatrixXi& Tb,
                  MatrixXd& Yb) {
  const int m = static_cast<int>(idx.size());
  Xb.resize(m, d.X.cols());
  Tb.resize(m, d.T.cols());
  Yb.resize(m, d.Y.cols());
  for (int i = 0; i < m; ++i) {
    Xb.row(i) = d.X.row(idx[i]);
    Tb.row(i) = d.T.row(idx[i]);
    Yb.row(i) = d.Y.row(idx[i]);
  }
}

// Convergence windows over the objective trace: tracks window means, flags
// the best window (snapshot point), and signals the stop condition.
struct WindowMonitor {
  int window;
  double tol;
  bool check;
  double sum = 0.0;
  int count = 0;
  double prev_mean = std::numeric_limits<double>::quiet_NaN();
  double best_mean = -std::numeric_limits<double>::infinity();

  struct Verdict {
    bool is_best = false;
    bool stop = false;
  };

  Verdict add(double value, bool boundary) {
    sum += value;
    ++count;
    Verdict v;
    if (!boundary || count == 0) return v;
    const double mean = sum / count;
    if (mean > best_mean) {
      best_mean = mean;
      v.is_best = true;
    }
    if (check && std::isfinite(prev_mean)) {
      if (mean - prev_mean < tol * std::max(1.0, std::abs(prev_mean))) v.stop = true;
    }
    prev_mean = mean;
    sum = 0.0;
    count = 0;
    return v;
  }
};

double now_seconds(const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

VariationalGaussian prior_variational(const MatrixXd& S_I, const KernelParams& params) {
  VariationalGaussian var;
  var.mu = VectorXd::Zero(S_I.rows());
  const CholFactor chol = cholesky_with_jitter(SymMatrix(cross_covariance(S_I, S_I, params)),
                                               kernel_jitter(params.sigma2()));
  var.sigma_lower = chol.lower;
  return var;
}

double column_variance(const VectorXd& y) {
  const double mean = y.mean();
  const double var = (y.array() - mean).square().mean();
  return std::max(var, 1e-12);
}

}  // namespace

// ---------------------------------------------------------------------------
// Fit loops
// ---------------------------------------------------------------------------

SvFitResult fit_sv(const Dataset& data, int n_inducing, int g, const TrainConfig& cfg) {
  data.validate();
  cfg.validate();
  if (data.n_outputs() != 1) {
    throw DimensionMismatch("fit_sv: single-output data required");
  }
  const Dataset d = cfg.normalize ? data.normalized() : data;
  const int n = d.n();
  const int n_b = std::min(cfg.batch_size, n);
  SeededRng rng(cfg.seed);

  SvFitResult res;
  SVModel& m = res.model;
  m.schema = d.schema;
  m.norm = d.norm;
  m.map = LatentMap::random(d.schema, g, LatentStructure::Shared, 1, rng);
  m.params = KernelParams::make(d.schema.p, d.schema.q, g);
  const double var_y = column_variance(d.Y.col(0));
  m.params.beta = d.Y.col(0).mean();
  m.params.log_sigma2 = std::log(var_y);
  m.params.log_noise = std::log(1e-2 * var_y);
  if (cfg.tie_inducing) {
    m.inducing.S = encode_rows(d.X, d.T, d.schema, m.map, 0);
  } else {
    m.inducing = init_inducing(d.X, d.T, d.schema, m.map, 0, n_inducing, rng);
  }
  m.var = prior_variational(m.inducing.S, m.params);

  const FlatLayout lay = sv_layout(m, !cfg.tie_inducing);
  VectorXd theta = sv_pack(m, lay, !cfg.tie_inducing);
  AdamState adam(lay.total);
  std::vector<bool> active(lay.total, true);
  const FlatLayout::Group* zgroup = lay.find("z");
  const int freeze_at = static_cast<int>(cfg.z_freeze_fraction * cfg.max_iters);

  WindowMonitor mon{cfg.convergence_window, cfg.convergence_tol, cfg.convergence_check};
  SVModel best = m;
  bool have_best = false;
  BatchSampler sampler(n);
  MatrixXd Xb;
  MatrixXi Tb;
  MatrixXd Yb;
  const auto start = std::chrono::steady_clock::now();

  for (int it = 1; it <= cfg.max_iters; ++it) {
    if (it == freeze_at + 1 && zgroup) {
      for (int i = 0; i < zgroup->size; ++i) active[zgroup->offset + i] = false;
    }
    const auto& idx = sampler.draw(n_b, rng);
    gather_batch(d, idx, Xb, Tb, Yb);
    if (cfg.tie_inducing) m.inducing.S = encode_rows(d.X, d.T, d.schema, m.map, 0);

    SvGrads grads;
    ElboBreakdown eb;
    try {
      eb = sv_elbo_grad(m, Xb, Tb, Yb.col(0), n, &grads);
      if (cfg.tie_inducing) {
        // Inducing rows are re-encoded from the training table, so their
        // coordinate gradients belong to the latent vectors.
        scatter_latent_grads(grads.inducing, d.T, d.schema, m.map.g, grads.z);
      }
      m.var = natgrad_step(m.var, grads.var.g_mu, grads.var.g_sigma, cfg.natgrad_gamma);
      VectorXd gflat = sv_pack_grads(grads, lay, !cfg.tie_inducing);
      check_finite_by_group(gflat, lay);
      adam.step(theta, gflat, active, cfg);
      clamp_logs(theta, lay);
      sv_unpack(m, theta, !cfg.tie_inducing);
    } catch (const std::exception& ex) {
      res.failure = ex.what();
      break;
    }
    res.trace.append(it, eb.elbo, eb.kl, eb.lt, now_seconds(start));

    const bool boundary = (it % cfg.convergence_window == 0) || it == cfg.max_iters;
    const auto verdict = mon.add(eb.elbo, boundary);
    if (verdict.is_best) {
      if (cfg.tie_inducing) m.inducing.S = encode_rows(d.X, d.T, d.schema, m.map, 0);
      best = m;
      have_best = true;
    }
    if (verdict.stop) break;
  }
  if (have_best) res.model = best;
  if (cfg.tie_inducing) {
    res.model.inducing.S = encode_rows(d.X, d.T, d.schema, res.model.map, 0);
  }
  return res;
}

ExactFitResult fit_exact(const Dataset& data, const TrainConfig& cfg) {
  data.validate();
  cfg.validate();
  if (data.n_outputs() != 1) {
    throw DimensionMismatch("fit_exact: single-output data required");
  }
  if (data.n() > default_dense_cap) {
    throw DimensionMismatch("fit_exact: n exceeds dense cap");
  }
  const Dataset d = cfg.normalize ? data.normalized() : data;
  const int n = d.n();
  SeededRng root(cfg.seed);
  const double var_y = column_variance(d.Y.col(0));
  const VectorXd ones = VectorXd::Ones(n);

  ExactFitResult res;
  res.restart_nll.assign(cfg.restarts, std::numeric_limits<double>::quiet_NaN());
  double best_nll = std::numeric_limits<double>::infinity();
  std::string last_error = "no restarts ran";

  for (int r = 0; r < cfg.restarts; ++r) {
    SeededRng rng = root.fork(r);
    ExactState s;
    s.map = LatentMap::random(d.schema, 2, LatentStructure::Shared, 1, rng);
    s.params = KernelParams::make(d.schema.p, d.schema.q, 2);
    s.params.beta = d.Y.col(0).mean();
    s.params.log_sigma2 = std::log(var_y);
    s.params.log_noise = std::log(1e-2 * var_y);

    try {
      const FlatLayout lay = exact_layout(s);
      VectorXd theta = exact_pack(s, lay);
      AdamState adam(lay.total);
      std::vector<bool> active(lay.total, true);
      WindowMonitor mon{cfg.convergence_window, cfg.convergence_tol, cfg.convergence_check};
      TrainingTrace trace;
      ExactState best_state = s;
      bool have_best = false;
      const auto start = std::chrono::steady_clock::now();

      for (int it = 1; it <= cfg.max_iters; ++it) {
        // Profile beta by generalized least squares at the current kernel.
        {
          const MatrixXd S = encode_rows(d.X, d.T, d.schema, s.map, 0);
          MatrixXd K = cross_covariance(S, S, s.params);
          K.diagonal().array() += s.params.noise_var();
          const CholFactor chol = cholesky_with_jitter(
              SymMatrix(std::move(K)), kernel_jitter(s.params.sigma2() + s.params.noise_var()));
          const VectorXd kinv_y = chol_solve(chol, d.Y.col(0));
          const VectorXd kinv_1 = chol_solve(chol, ones);
          s.params.beta = kinv_y.sum() / kinv_1.sum();
        }
        ExactGrads grads;
        const double nll =
            nll_value_grad(s.params, s.map, d.schema, d.X, d.T, d.Y.col(0), &grads);
        VectorXd gflat = -exact_pack_grads(grads, lay);  // ascend -NLL
        check_finite_by_group(gflat, lay);
        adam.step(theta, gflat, active, cfg);
        clamp_logs(theta, lay);
        exact_unpack(s, theta);
        trace.append(it, -nll, 0.0, -nll, now_seconds(start));

        const bool boundary = (it % cfg.convergence_window == 0) || it == cfg.max_iters;
        const auto verdict = mon.add(-nll, boundary);
        if (verdict.is_best) {
          best_state = s;
          have_best = true;
        }
        if (verdict.stop) break;
      }
      if (have_best) s = best_state;
      // Final profiled beta and score at the selected state.
      const MatrixXd S = encode_rows(d.X, d.T, d.schema, s.map, 0);
      MatrixXd K = cross_covariance(S, S, s.params);
      K.diagonal().array() += s.params.noise_var();
      const CholFactor chol = cholesky_with_jitter(
          SymMatrix(std::move(K)), kernel_jitter(s.params.sigma2() + s.params.noise_var()));
      s.params.beta = chol_solve(chol, d.Y.col(0)).sum() / chol_solve(chol, ones).sum();
      const double nll =
          neg_log_likelihood(s.params, s.map, d.schema, d.X, d.T, d.Y.col(0));
      res.restart_nll[r] = nll;
      if (nll < best_nll) {
        best_nll = nll;
        res.best_restart = r;
        res.model = make_exact_model(d.schema, d.norm, s.params, s.map, d.X, d.T, d.Y.col(0));
        res.trace = std::move(trace);
      }
    } catch (const std::exception& ex) {
      last_error = ex.what();
    }
  }
  if (res.best_restart < 0) {
    throw AllRestartsFailed("fit_exact: every restart failed; last error: " + last_error);
  }
  return res;
}

LmcFitResult fit_lmc(const Dataset& data, const LmcFitSpec& spec, const TrainConfig& cfg) {
  data.validate();
  cfg.validate();
  const Dataset d = cfg.normalize ? data.normalized() : data;
  const int n = d.n();
  const int n_op = d.n_outputs();
  const int L = spec.n_latent;
  const int n_b = std::min(cfg.batch_size, n);
  SeededRng rng(cfg.seed);

  LmcFitResult res;
  MultiSVModel& m = res.model;
  m.schema = d.schema;
  m.norm = d.norm;
  m.cfg.n_outputs = n_op;
  m.cfg.n_latent = L;
  m.cfg.structure = spec.structure;
  m.cfg.shared_inducing = spec.structure == LatentStructure::Shared && spec.shared_inducing;
  const int copies = spec.structure == LatentStructure::Shared ? 1 : L;
  m.map = LatentMap::random(d.schema, spec.g, spec.structure, copies, rng);
  m.cfg.W.resize(n_op, L);
  for (int o = 0; o < n_op; ++o) {
    for (int l = 0; l < L; ++l) {
      m.cfg.W(o, l) = (o == l ? 1.0 : 0.0) + 0.05 * rng.normal();
    }
  }
  m.cfg.beta_vec.resize(n_op);
  m.cfg.log_noise_vec.resize(n_op);
  for (int o = 0; o < n_op; ++o) {
    m.cfg.beta_vec(o) = d.Y.col(o).mean();
    m.cfg.log_noise_vec(o) = std::log(1e-2 * column_variance(d.Y.col(o)));
  }
  m.cfg.fn_params.assign(L, KernelParams::make(d.schema.p, d.schema.q, spec.g));

  const int n_sets = m.cfg.inducing_sets();
  m.inducing.resize(n_sets);
  for (int s = 0; s < n_sets; ++s) {
    const int copy = copies == 1 ? 0 : s;
    m.inducing[s] = init_inducing(d.X, d.T, d.schema, m.map, copy, spec.n_inducing, rng);
  }
  m.var.resize(L);
  for (int l = 0; l < L; ++l) {
    m.var[l] = prior_variational(m.fn_inducing(l).S, m.cfg.fn_params[l]);
  }
  m.validate();

  const FlatLayout lay = lmc_layout(m);
  VectorXd theta = lmc_pack(m, lay);
  AdamState adam(lay.total);
  std::vector<bool> active(lay.total, true);
  const FlatLayout::Group* zgroup = lay.find("z");
  const int freeze_at = static_cast<int>(cfg.z_freeze_fraction * cfg.max_iters);

  WindowMonitor mon{cfg.convergence_window, cfg.convergence_tol, cfg.convergence_check};
  MultiSVModel best = m;
  bool have_best = false;
  BatchSampler sampler(n);
  MatrixXd Xb, Yb;
  MatrixXi Tb;
  const auto start = std::chrono::steady_clock::now();

  for (int it = 1; it <= cfg.max_iters; ++it) {
    if (it == freeze_at + 1 && zgroup) {
      for (int i = 0; i < zgroup->size; ++i) active[zgroup->offset + i] = false;
    }
    const auto& idx = sampler.draw(n_b, rng);
    gather_batch(d, idx, Xb, Tb, Yb);

    LmcGrads grads;
    ElboBreakdown eb;
    try {
      eb = lmc_elbo_grad(m, Xb, Tb, Yb, n, &grads);
      for (int l = 0; l < L; ++l) {
        m.var[l] = natgrad_step(m.var[l], grads.var[l].g_mu, grads.var[l].g_sigma,
                                cfg.natgrad_gamma);
      }
      VectorXd gflat = lmc_pack_grads(m, grads, lay);
      check_finite_by_group(gflat, lay);
      adam.step(theta, gflat, active, cfg);
      clamp_logs(theta, lay);
      lmc_unpack(m, theta);
    } catch (const std::exception& ex) {
      res.failure = ex.what();
      break;
    }
    res.trace.append(it, eb.elbo, eb.kl, eb.lt, now_seconds(start));

    const bool boundary = (it % cfg.convergence_window == 0) || it == cfg.max_iters;
    const auto verdict = mon.add(eb.elbo, boundary);
    if (verdict.is_best) {
      best = m;
      have_best = true;
    }
    if (verdict.stop) break;
  }
  if (have_best) res.model = best;
  return res;
}

}  // namespace svlvgp
