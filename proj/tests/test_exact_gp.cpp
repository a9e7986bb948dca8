#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "svlvgp/exact_gp.hpp"
#include "svlvgp/rng.hpp"

using namespace svlvgp;

namespace {

constexpr double kLn2Pi = 1.8378770664093454835606594728112;

struct Problem {
  MixedSchema schema;
  LatentMap map;
  KernelParams params;
  MatrixXd X;
  MatrixXi T;
  VectorXd y;
};

Problem mixed_problem(int n, std::uint64_t seed) {
  Problem pr;
  pr.schema.p = 1;
  pr.schema.q = 1;
  pr.schema.levels = {3};
  SeededRng rng(seed);
  pr.map = LatentMap::random(pr.schema, 2, LatentStructure::Shared, 1, rng);
  pr.params = KernelParams::make(1, 1, 2);
  pr.params.beta = 0.3;
  pr.params.log_sigma2 = std::log(1.5);
  pr.params.log_phi(0) = std::log(0.8);
  pr.params.log_noise = std::log(0.05);
  pr.X.resize(n, 1);
  pr.T.resize(n, 1);
  pr.y.resize(n);
  for (int i = 0; i < n; ++i) {
    pr.X(i, 0) = rng.uniform(-1.0, 1.0);
    pr.T(i, 0) = 1 + static_cast<int>(rng.below(3));
    pr.y(i) = std::sin(2.0 * pr.X(i, 0)) + 0.2 * pr.T(i, 0) + 0.01 * rng.normal();
  }
  return pr;
}

}  // namespace

TEST_CASE("single-observation posterior matches the closed form") {
  MixedSchema schema;
  schema.p = 1;
  schema.q = 0;
  LatentMap map;
  map.g = 2;
  map.z = {{}};
  KernelParams params = KernelParams::make(1, 0, 2);
  params.beta = 0.5;
  params.log_sigma2 = 0.0;  // sigma2 = 1
  params.log_noise = 0.0;   // noise = 1
  MatrixXd X(1, 1);
  X << 0.0;
  MatrixXi T(1, 0);
  VectorXd y(1);
  y << 2.5;

  const ExactModel m = make_exact_model(schema, Normalization::identity(1, 1), params, map, X, T, y);
  CHECK(m.n() == 1);
  CHECK(m.alpha(0) == doctest::Approx(1.0).epsilon(1e-7));

  MatrixXd Xq(2, 1);
  Xq << 0.0, 1.0;
  MatrixXi Tq(2, 0);
  const GpPrediction pred = exact_predict(m, Xq, Tq);
  CHECK(pred.mean(0) == doctest::Approx(1.5).epsilon(1e-7));
  CHECK(pred.var(0) == doctest::Approx(0.5).epsilon(1e-6));
  const double r = std::exp(-1.0);
  CHECK(pred.mean(1) == doctest::Approx(0.5 + r * 1.0).epsilon(1e-7));
  CHECK(pred.var(1) == doctest::Approx(1.0 - r * r / 2.0).epsilon(1e-6));
}

TEST_CASE("near-noiseless fit interpolates the training data") {
  Problem pr = mixed_problem(6, 3);
  for (int i = 0; i < 6; ++i) pr.y(i) = std::sin(2.0 * pr.X(i, 0)) + 0.2 * pr.T(i, 0);
  pr.params.log_noise = std::log(1e-10);
  const ExactModel m =
      make_exact_model(pr.schema, Normalization::identity(1, 1), pr.params, pr.map, pr.X, pr.T, pr.y);
  const GpPrediction pred = exact_predict(m, pr.X, pr.T);
  for (int i = 0; i < pr.y.size(); ++i) {
    CHECK(pred.mean(i) == doctest::Approx(pr.y(i)).epsilon(1e-4));
    CHECK(pred.var(i) >= 0.0);
    CHECK(pred.var(i) < 1e-4);
  }
}

TEST_CASE("predictions agree with directly assembled gp algebra") {
  const Problem pr = mixed_problem(8, 17);
  const ExactModel m =
      make_exact_model(pr.schema, Normalization::identity(1, 1), pr.params, pr.map, pr.X, pr.T, pr.y);

  MatrixXd Xq(3, 1);
  Xq << -0.4, 0.1, 0.9;
  MatrixXi Tq(3, 1);
  Tq << 1, 2, 3;

  const MatrixXd S = encode_rows(pr.X, pr.T, pr.schema, pr.map, 0);
  const MatrixXd Sq = encode_rows(Xq, Tq, pr.schema, pr.map, 0);
  MatrixXd K = cross_covariance(S, S, pr.params);
  K.diagonal().array() += pr.params.noise_var() + m.chol.jitter_used;
  const MatrixXd Kq = cross_covariance(Sq, S, pr.params);
  const Eigen::LDLT<MatrixXd> solver(K);
  const VectorXd resid = pr.y.array() - pr.params.beta;
  const VectorXd mean = pr.params.beta + (Kq * solver.solve(resid)).array();
  for (int i = 0; i < 3; ++i) {
    const VectorXd ki = Kq.row(i).transpose();
    const double var = pr.params.sigma2() - ki.dot(solver.solve(ki));
    CHECK(exact_predict(m, Xq, Tq).mean(i) == doctest::Approx(mean(i)).epsilon(1e-9));
    CHECK(exact_predict(m, Xq, Tq).var(i) == doctest::Approx(var).epsilon(1e-7));
  }
}

TEST_CASE("objective values decompose over the stored factorization") {
  const Problem pr = mixed_problem(10, 29);
  const ExactModel m =
      make_exact_model(pr.schema, Normalization::identity(1, 1), pr.params, pr.map, pr.X, pr.T, pr.y);
  const double ld = logdet(m.chol);
  const double quad = (pr.y.array() - pr.params.beta).matrix().dot(m.alpha);

  const double nll = neg_log_likelihood(pr.params, pr.map, pr.schema, pr.X, pr.T, pr.y);
  CHECK(nll == doctest::Approx(0.5 * ld + quad / (2.0 * pr.params.sigma2())).epsilon(1e-12));

  const double lm = log_marginal(pr.params, pr.map, pr.schema, pr.X, pr.T, pr.y);
  CHECK(lm == doctest::Approx(-0.5 * pr.y.size() * kLn2Pi - 0.5 * ld - 0.5 * quad).epsilon(1e-12));
}

TEST_CASE("normalization is applied on the way in and inverted on the way out") {
  const Problem pr = mixed_problem(12, 41);
  MatrixXd X_orig = 3.0 * pr.X.array() + 10.0;
  VectorXd y_orig = 5.0 * pr.y.array() - 2.0;

  Dataset d;
  d.schema = pr.schema;
  d.X = X_orig;
  d.T = pr.T;
  d.Y = y_orig;
  d.norm = Normalization::identity(1, 1);
  d.validate();
  const Dataset dn = d.normalized();

  const ExactModel m_norm = make_exact_model(dn.schema, dn.norm, pr.params, pr.map, dn.X, dn.T,
                                             VectorXd(dn.Y.col(0)));
  const ExactModel m_raw = make_exact_model(dn.schema, Normalization::identity(1, 1), pr.params,
                                            pr.map, dn.X, dn.T, VectorXd(dn.Y.col(0)));

  MatrixXd Xq_orig(2, 1);
  Xq_orig << 8.5, 11.0;
  MatrixXi Tq(2, 1);
  Tq << 2, 3;
  const GpPrediction orig_units = exact_predict(m_norm, Xq_orig, Tq);
  const MatrixXd Xq_stored = dn.norm.encode_x(Xq_orig);
  const GpPrediction stored_units = exact_predict(m_raw, Xq_stored, Tq);

  for (int i = 0; i < 2; ++i) {
    const double mean_expect = dn.norm.y_mean(0) + dn.norm.y_scale(0) * stored_units.mean(i);
    const double var_expect = dn.norm.y_var_factor(0) * stored_units.var(i);
    CHECK(orig_units.mean(i) == doctest::Approx(mean_expect).epsilon(1e-10));
    CHECK(orig_units.var(i) == doctest::Approx(var_expect).epsilon(1e-10));
  }
}

TEST_CASE("full covariance is symmetric with the marginal variances on its diagonal") {
  const Problem pr = mixed_problem(9, 53);
  const ExactModel m =
      make_exact_model(pr.schema, Normalization::identity(1, 1), pr.params, pr.map, pr.X, pr.T, pr.y);
  MatrixXd Xq(4, 1);
  Xq << -0.8, -0.1, 0.3, 0.8;
  MatrixXi Tq(4, 1);
  Tq << 1, 1, 2, 3;
  const GpPrediction pred = exact_predict(m, Xq, Tq, true);
  REQUIRE(pred.cov.rows() == 4);
  CHECK((pred.cov - pred.cov.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  for (int i = 0; i < 4; ++i) {
    CHECK(pred.cov(i, i) == doctest::Approx(pred.var(i)).epsilon(1e-9));
  }
  const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(pred.cov);
  CHECK(eig.eigenvalues().minCoeff() > -1e-8);
}

TEST_CASE("the dense path refuses oversized problems") {
  MixedSchema schema;
  schema.p = 1;
  schema.q = 0;
  LatentMap map;
  map.g = 2;
  map.z = {{}};
  const KernelParams params = KernelParams::make(1, 0, 2);
  const int n = default_dense_cap + 1;
  const MatrixXd X = MatrixXd::Zero(n, 1);
  const MatrixXi T(n, 0);
  const VectorXd y = VectorXd::Zero(n);
  CHECK_THROWS_AS(neg_log_likelihood(params, map, schema, X, T, y), DimensionMismatch);
}
