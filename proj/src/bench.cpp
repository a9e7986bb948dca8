#include "svlvgp/bench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "svlvgp/errors.hpp"

namespace svlvgp {

namespace {
constexpr double pi = 3.1415926535897932384626433832795;

double lin_space(double lo, double hi, int i, int n) {
  return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
}
}  // namespace

double single_bench_truth(double x1, double x2, int t) {
  static const double coef[5] = {1.0, 13.0, 1.5, 9.0, 4.5};
  return 7.0 * std::sin(2.0 * pi * x1 - pi) + coef[t - 1] * std::sin(2.0 * pi * x2 - pi);
}

std::array<double, 2> multi_bench_truth(double x1, double x2, int t1, int t2) {
  const double sum = x1 * (t2 - 3) / 80.0 + x2 * (t1 - 3) / 80.0;
  const double c1 = std::cos(50.0 * (t1 - 3) / std::sqrt(2.0));
  const double c2 = std::cos(50.0 * (t2 - 3) / std::sqrt(2.0));
  const double y1 = sum + std::cos(x1) * c1 * std::cos(x2 / std::sqrt(2.0)) * c2;
  const double y2 =
      sum + std::cos(x1) * c1 * std::cos(x2 / std::sqrt(2.0) - pi / 2.0) * c2;
  return {y1, y2};
}

Dataset gen_single(int n_x1, int n_x2, const NoiseSpec& noise) {
  if (n_x1 < 2 || n_x2 < 2) throw DataError("gen_single: grid sizes must be >= 2");
  if (noise.sd < 0) throw DataError("gen_single: noise sd must be >= 0");
  Dataset d;
  d.schema.p = 2;
  d.schema.q = 1;
  d.schema.levels = {5};
  const int n = n_x1 * n_x2 * 5;
  d.X.resize(n, 2);
  d.T.resize(n, 1);
  d.Y.resize(n, 1);
  SeededRng rng(noise.seed);
  int row = 0;
  for (int i = 0; i < n_x1; ++i) {
    const double x1 = lin_space(0.0, 1.0, i, n_x1);
    for (int j = 0; j < n_x2; ++j) {
      const double x2 = lin_space(0.0, 1.0, j, n_x2);
      for (int t = 1; t <= 5; ++t, ++row) {
        d.X(row, 0) = x1;
        d.X(row, 1) = x2;
        d.T(row, 0) = t;
        double y = single_bench_truth(x1, x2, t);
        if (noise.sd > 0) y += noise.sd * rng.normal();
        d.Y(row, 0) = y;
      }
    }
  }
  d.norm = Normalization::identity(2, 1);
  d.validate();
  return d;
}

Dataset gen_multi(int n_x1, int n_x2, const NoiseSpec& noise1, const NoiseSpec& noise2) {
  if (n_x1 < 2 || n_x2 < 2) throw DataError("gen_multi: grid sizes must be >= 2");
  if (noise1.sd < 0 || noise2.sd < 0) throw DataError("gen_multi: noise sd must be >= 0");
  Dataset d;
  d.schema.p = 2;
  d.schema.q = 2;
  d.schema.levels = {5, 5};
  const int n = n_x1 * n_x2 * 25;
  d.X.resize(n, 2);
  d.T.resize(n, 2);
  d.Y.resize(n, 2);
  SeededRng rng1(noise1.seed);
  SeededRng rng2(noise2.seed);
  int row = 0;
  for (int i = 0; i < n_x1; ++i) {
    const double x1 = lin_space(-100.0, 100.0, i, n_x1);
    for (int j = 0; j < n_x2; ++j) {
      const double x2 = lin_space(-100.0, 100.0, j, n_x2);
      for (int t1 = 1; t1 <= 5; ++t1) {
        for (int t2 = 1; t2 <= 5; ++t2, ++row) {
          d.X(row, 0) = x1;
          d.X(row, 1) = x2;
          d.T(row, 0) = t1;
          d.T(row, 1) = t2;
          const auto y = multi_bench_truth(x1, x2, t1, t2);
          d.Y(row, 0) = y[0] + (noise1.sd > 0 ? noise1.sd * rng1.normal() : 0.0);
          d.Y(row, 1) = y[1] + (noise2.sd > 0 ? noise2.sd * rng2.normal() : 0.0);
        }
      }
    }
  }
  d.norm = Normalization::identity(2, 2);
  d.validate();
  return d;
}

CVReport crossvalidate(const Fitter& fitter, const Dataset& data, int k, std::uint64_t seed) {
  data.validate();
  if (k < 2) throw DataError("crossvalidate: k must be >= 2");
  const int n = data.n();
  if (n < k) throw DataError("crossvalidate: need at least k rows");
  const int n_op = data.n_outputs();

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  SeededRng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[i], order[j]);
  }

  CVReport report;
  report.seed = seed;
  report.fold_rmse =
      MatrixXd::Constant(k, n_op, std::numeric_limits<double>::quiet_NaN());
  report.fold_failures.assign(k, "");

  for (int f = 0; f < k; ++f) {
    const int lo = static_cast<int>(static_cast<long long>(f) * n / k);
    const int hi = static_cast<int>(static_cast<long long>(f + 1) * n / k);
    std::vector<int> test_idx(order.begin() + lo, order.begin() + hi);
    std::vector<int> train_idx;
    train_idx.reserve(n - (hi - lo));
    train_idx.insert(train_idx.end(), order.begin(), order.begin() + lo);
    train_idx.insert(train_idx.end(), order.begin() + hi, order.end());

    const Dataset train = data.rows(train_idx);
    const Dataset test = data.rows(test_idx);
    try {
      const Predictor predict = fitter(train, seed + 1000003ull * (f + 1));
      const MatrixXd mean = predict(test.X, test.T);
      if (mean.rows() != test.n() || mean.cols() != n_op) {
        throw DimensionMismatch("crossvalidate: predictor returned wrong shape");
      }
      for (int o = 0; o < n_op; ++o) {
        report.fold_rmse(f, o) =
            std::sqrt((mean.col(o) - test.Y.col(o)).squaredNorm() / test.n());
      }
    } catch (const std::exception& ex) {
      report.fold_failures[f] = ex.what();
    }
  }

  report.mean_rmse = VectorXd::Zero(n_op);
  report.sd_rmse = VectorXd::Zero(n_op);
  for (int o = 0; o < n_op; ++o) {
    std::vector<double> vals;
    for (int f = 0; f < k; ++f) {
      if (report.fold_failures[f].empty()) vals.push_back(report.fold_rmse(f, o));
    }
    if (vals.empty()) {
      report.mean_rmse(o) = std::numeric_limits<double>::quiet_NaN();
      report.sd_rmse(o) = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    double mean = 0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(vals.size());
    report.mean_rmse(o) = mean;
    report.sd_rmse(o) = std::sqrt(var);
  }
  return report;
}

std::string cv_report_csv(const CVReport& report) {
  const int n_op = static_cast<int>(report.fold_rmse.cols());
  std::string out = "fold";
  for (int o = 1; o <= n_op; ++o) out += ",rmse_" + std::to_string(o);
  out += ",status\n";
  for (int f = 0; f < report.folds(); ++f) {
    out += std::to_string(f + 1);
    for (int o = 0; o < n_op; ++o) out += ',' + format_double(report.fold_rmse(f, o));
    out += ',';
    out += report.fold_failures[f].empty() ? "ok" : "failed";
    out += '\n';
  }
  out += "mean";
  for (int o = 0; o < n_op; ++o) out += ',' + format_double(report.mean_rmse(o));
  out += ",\nsd";
  for (int o = 0; o < n_op; ++o) out += ',' + format_double(report.sd_rmse(o));
  out += ",\n";
  return out;
}

std::string cv_report_summary(const CVReport& report) {
  const int n_op = static_cast<int>(report.fold_rmse.cols());
  std::string out;
  int failed = 0;
  for (const auto& f : report.fold_failures) {
    if (!f.empty()) ++failed;
  }
  out += std::to_string(report.folds()) + "-fold cross-validation (seed " +
         std::to_string(report.seed) + ")\n";
  for (int o = 0; o < n_op; ++o) {
    out += "  output " + std::to_string(o + 1) + ": rmse " +
           format_double(report.mean_rmse(o)) + " +- " + format_double(report.sd_rmse(o)) +
           "\n";
  }
  if (failed > 0) {
    out += "  " + std::to_string(failed) + " fold(s) failed; first error: ";
    for (const auto& f : report.fold_failures) {
      if (!f.empty()) {
        out += f;
        break;
      }
    }
    out += '\n';
  }
  return out;
}

}  // namespace svlvgp
