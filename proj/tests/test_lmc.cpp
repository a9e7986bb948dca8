#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "svlvgp/lmc.hpp"
#include "svlvgp/rng.hpp"

using namespace svlvgp;

namespace {

struct LmcProblem {
  MultiSVModel model;
  MatrixXd X;
  MatrixXi T;
  MatrixXd Y;
};

VariationalGaussian random_var(int m, SeededRng& rng) {
  VariationalGaussian v;
  v.mu.resize(m);
  v.sigma_lower = MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    v.mu(i) = 0.4 * rng.normal();
    for (int j = 0; j < i; ++j) v.sigma_lower(i, j) = 0.15 * rng.normal();
    v.sigma_lower(i, i) = 0.4 + rng.uniform();
  }
  return v;
}

LmcProblem lmc_problem(int n, int n_inducing, int n_latent, LatentStructure structure,
                       bool shared_inducing, std::uint64_t seed) {
  LmcProblem pr;
  MultiSVModel& m = pr.model;
  m.schema.p = 1;
  m.schema.q = 1;
  m.schema.levels = {3};
  const int n_op = 2;
  m.norm = Normalization::identity(1, n_op);
  m.cfg.n_outputs = n_op;
  m.cfg.n_latent = n_latent;
  m.cfg.structure = structure;
  m.cfg.shared_inducing = shared_inducing;

  SeededRng rng(seed);
  const int copies = structure == LatentStructure::Shared ? 1 : n_latent;
  m.map = LatentMap::random(m.schema, 2, structure, copies, rng);

  m.cfg.W.resize(n_op, n_latent);
  for (int o = 0; o < n_op; ++o) {
    for (int l = 0; l < n_latent; ++l) {
      m.cfg.W(o, l) = (o == l ? 1.0 : 0.0) + 0.3 * rng.normal();
    }
  }
  m.cfg.beta_vec.resize(n_op);
  m.cfg.beta_vec << 0.1, -0.2;
  m.cfg.log_noise_vec.resize(n_op);
  m.cfg.log_noise_vec << std::log(0.05), std::log(0.08);
  for (int l = 0; l < n_latent; ++l) {
    KernelParams kp = KernelParams::make(1, 1, 2);
    kp.log_phi(0) = std::log(0.5 + 0.3 * l);
    m.cfg.fn_params.push_back(kp);
  }

  pr.X.resize(n, 1);
  pr.T.resize(n, 1);
  pr.Y.resize(n, n_op);
  for (int i = 0; i < n; ++i) {
    pr.X(i, 0) = rng.uniform(-1.0, 1.0);
    pr.T(i, 0) = 1 + static_cast<int>(rng.below(3));
    pr.Y(i, 0) = std::sin(2.0 * pr.X(i, 0)) + 0.2 * pr.T(i, 0) + 0.05 * rng.normal();
    pr.Y(i, 1) = std::cos(1.5 * pr.X(i, 0)) - 0.1 * pr.T(i, 0) + 0.05 * rng.normal();
  }

  for (int s = 0; s < m.cfg.inducing_sets(); ++s) {
    m.inducing.push_back(
        init_inducing(pr.X, pr.T, m.schema, m.map, m.map.copies() == 1 ? 0 : s, n_inducing, rng));
  }
  for (int l = 0; l < n_latent; ++l) m.var.push_back(random_var(n_inducing, rng));
  m.validate();
  return pr;
}

}  // namespace

TEST_CASE("coregional covariance against hand-computed mixing") {
  LMCConfig cfg;
  cfg.n_outputs = 2;
  cfg.n_latent = 2;
  cfg.W.resize(2, 2);
  cfg.W << -0.02, 1.14, -0.03, 1.12;
  cfg.beta_vec = VectorXd::Zero(2);
  cfg.log_noise_vec = VectorXd::Zero(2);
  cfg.fn_params = {KernelParams::make(1, 1, 2), KernelParams::make(1, 1, 2)};
  cfg.fn_params[1].log_phi(0) = std::log(2.0);
  cfg.validate();

  VectorXd s(3);
  s << 0.3, -0.1, 0.2;
  const std::vector<VectorXd> same = {s};
  CHECK(coregional_cov(cfg, 1, 1, same, same) == doctest::Approx(1.3).epsilon(1e-12));
  CHECK(coregional_cov(cfg, 1, 2, same, same) == doctest::Approx(1.2774).epsilon(1e-12));
  CHECK(coregional_cov(cfg, 2, 2, same, same) == doctest::Approx(1.2553).epsilon(1e-12));
  CHECK(coregional_cov(cfg, 2, 1, same, same) == coregional_cov(cfg, 1, 2, same, same));

  VectorXd s2(3);
  s2 << 0.1, 0.0, -0.3;
  const std::vector<VectorXd> a = {s, s};    // per-function coordinates, here equal
  const std::vector<VectorXd> b = {s2, s2};
  double direct = 0.0;
  for (int l = 0; l < 2; ++l) {
    direct += cfg.W(0, l) * gaussian_correlation(s, s2, cfg.fn_params[l]) * cfg.W(1, l);
  }
  CHECK(coregional_cov(cfg, 1, 2, a, b) == doctest::Approx(direct).epsilon(1e-13));
  CHECK_THROWS_AS(coregional_cov(cfg, 0, 1, a, b), DimensionMismatch);
  CHECK_THROWS_AS(coregional_cov(cfg, 1, 3, a, b), DimensionMismatch);
}

TEST_CASE("configuration validation pins the scale convention") {
  LmcProblem pr = lmc_problem(10, 4, 2, LatentStructure::Shared, true, 3);
  LMCConfig bad = pr.model.cfg;
  bad.fn_params[0].log_sigma2 = 0.1;
  CHECK_THROWS_AS(bad.validate(), DataError);

  bad = pr.model.cfg;
  bad.W.resize(2, 1);
  CHECK_THROWS_AS(bad.validate(), DimensionMismatch);

  bad = pr.model.cfg;
  bad.n_latent = 3;  // more functions than outputs
  CHECK_THROWS_AS(bad.validate(), DimensionMismatch);

  MultiSVModel wrong = pr.model;
  wrong.var.pop_back();
  CHECK_THROWS_AS(wrong.validate(), DimensionMismatch);

  wrong = pr.model;
  SeededRng map_rng(1);
  wrong.map = LatentMap::random(pr.model.schema, 2, LatentStructure::Independent, 2, map_rng);
  CHECK_THROWS_AS(wrong.validate(), DimensionMismatch);
}

TEST_CASE("one latent function with unit weight reduces to the single-output model") {
  LmcProblem pr = lmc_problem(12, 5, 1, LatentStructure::Shared, true, 11);
  pr.model.cfg.n_outputs = 1;
  pr.model.cfg.W = MatrixXd::Constant(1, 1, 1.0);
  pr.model.cfg.beta_vec = VectorXd::Constant(1, 0.1);
  pr.model.cfg.log_noise_vec = VectorXd::Constant(1, std::log(0.05));
  pr.model.validate();
  const MatrixXd Y1 = pr.Y.col(0);

  SVModel sv;
  sv.schema = pr.model.schema;
  sv.norm = Normalization::identity(1, 1);
  sv.params = pr.model.cfg.fn_params[0];
  sv.params.beta = 0.1;
  sv.params.log_noise = std::log(0.05);
  sv.map = pr.model.map;
  sv.inducing = pr.model.inducing[0];
  sv.var = pr.model.var[0];

  const ElboBreakdown multi = multi_elbo(pr.model, pr.X, pr.T, Y1, 12);
  const ElboBreakdown single = sv_elbo(sv, pr.X, pr.T, VectorXd(Y1.col(0)), 12);
  CHECK(multi.elbo == doctest::Approx(single.elbo).epsilon(1e-12));
  CHECK(multi.kl == doctest::Approx(single.kl).epsilon(1e-12));
  CHECK(multi.lt == doctest::Approx(single.lt).epsilon(1e-12));

  MatrixXd Xq(3, 1);
  Xq << -0.4, 0.2, 0.7;
  MatrixXi Tq(3, 1);
  Tq << 2, 1, 3;
  const MultiPrediction mp = multi_predict(pr.model, Xq, Tq);
  const GpPrediction sp = sv_predict(sv, Xq, Tq);
  for (int i = 0; i < 3; ++i) {
    CHECK(mp.mean(i, 0) == doctest::Approx(sp.mean(i)).epsilon(1e-10));
    CHECK(mp.var(i, 0) == doctest::Approx(sp.var(i)).epsilon(1e-10));
  }
  const MultiPrediction mp_noisy = multi_predict(pr.model, Xq, Tq, true);
  const GpPrediction sp_noisy = sv_predict(sv, Xq, Tq, false, true);
  for (int i = 0; i < 3; ++i) {
    CHECK(mp_noisy.var(i, 0) == doctest::Approx(sp_noisy.var(i)).epsilon(1e-10));
  }
}

TEST_CASE("identity mixing decouples the outputs") {
  LmcProblem pr = lmc_problem(14, 6, 2, LatentStructure::Independent, false, 19);
  pr.model.cfg.W = MatrixXd::Identity(2, 2);
  pr.model.validate();

  double separate = 0.0;
  for (int o = 0; o < 2; ++o) {
    SVModel sv;
    sv.schema = pr.model.schema;
    sv.norm = Normalization::identity(1, 1);
    sv.params = pr.model.cfg.fn_params[o];
    sv.params.beta = pr.model.cfg.beta_vec(o);
    sv.params.log_noise = pr.model.cfg.log_noise_vec(o);
    sv.map.g = pr.model.map.g;
    sv.map.structure = LatentStructure::Shared;
    sv.map.z = {pr.model.map.z[o]};
    sv.inducing = pr.model.inducing[o];
    sv.var = pr.model.var[o];
    separate += sv_elbo(sv, pr.X, pr.T, VectorXd(pr.Y.col(o)), 14).elbo;

    MatrixXd Xq(2, 1);
    Xq << -0.3, 0.5;
    MatrixXi Tq(2, 1);
    Tq << 1, 2;
    const GpPrediction sp = sv_predict(sv, Xq, Tq);
    const MultiPrediction mp = multi_predict(pr.model, Xq, Tq);
    for (int i = 0; i < 2; ++i) {
      CHECK(mp.mean(i, o) == doctest::Approx(sp.mean(i)).epsilon(1e-10));
      CHECK(mp.var(i, o) == doctest::Approx(sp.var(i)).epsilon(1e-10));
    }
  }
  const ElboBreakdown joint = multi_elbo(pr.model, pr.X, pr.T, pr.Y, 14);
  CHECK(joint.elbo == doctest::Approx(separate).epsilon(1e-10));
}

TEST_CASE("kl accumulates over latent functions") {
  const LmcProblem pr = lmc_problem(12, 5, 2, LatentStructure::Shared, true, 23);
  const ElboBreakdown bd = multi_elbo(pr.model, pr.X, pr.T, pr.Y, 12);
  CHECK(bd.elbo == doctest::Approx(bd.lt - bd.kl).epsilon(1e-12));

  double kl_sum = 0.0;
  for (int l = 0; l < 2; ++l) {
    const MatrixXd& S_I = pr.model.fn_inducing(l).S;
    const CholFactor f =
        cholesky_with_jitter(SymMatrix(cross_covariance(S_I, S_I, pr.model.cfg.fn_params[l])),
                             kernel_jitter(1.0));
    kl_sum += kl_term(pr.model.var[l], f);
  }
  CHECK(bd.kl == doctest::Approx(kl_sum).epsilon(1e-10));
  CHECK(bd.kl >= 0.0);
}

TEST_CASE("shared structure with per-function inducing keeps one map copy") {
  const LmcProblem pr = lmc_problem(12, 4, 2, LatentStructure::Shared, false, 29);
  CHECK(pr.model.cfg.inducing_sets() == 2);
  CHECK(pr.model.map.copies() == 1);
  CHECK(&pr.model.fn_inducing(0) != &pr.model.fn_inducing(1));
  const ElboBreakdown bd = multi_elbo(pr.model, pr.X, pr.T, pr.Y, 12);
  CHECK(std::isfinite(bd.elbo));

  const LmcProblem tied = lmc_problem(12, 4, 2, LatentStructure::Shared, true, 29);
  CHECK(tied.model.cfg.inducing_sets() == 1);
  CHECK(&tied.model.fn_inducing(0) == &tied.model.fn_inducing(1));
}

TEST_CASE("per-output normalization decodes means and variances separately") {
  const LmcProblem pr = lmc_problem(12, 5, 2, LatentStructure::Shared, true, 31);
  MultiSVModel scaled = pr.model;
  scaled.norm.y_mean << 1.0, -2.0;
  scaled.norm.y_scale << 2.0, 3.0;

  MatrixXd Xq(2, 1);
  Xq << -0.2, 0.4;
  MatrixXi Tq(2, 1);
  Tq << 3, 1;
  const MultiPrediction raw = multi_predict(pr.model, Xq, Tq);
  const MultiPrediction dec = multi_predict(scaled, Xq, Tq);
  for (int i = 0; i < 2; ++i) {
    for (int o = 0; o < 2; ++o) {
      const double mean_scale = scaled.norm.y_scale(o);
      CHECK(dec.mean(i, o) == doctest::Approx(scaled.norm.y_mean(o) +
                                              mean_scale * raw.mean(i, o)).epsilon(1e-10));
      CHECK(dec.var(i, o) ==
            doctest::Approx(mean_scale * mean_scale * raw.var(i, o)).epsilon(1e-10));
    }
  }
}
