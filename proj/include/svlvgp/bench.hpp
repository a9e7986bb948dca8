#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "svlvgp/data.hpp"
#include "svlvgp/rng.hpp"

namespace svlvgp {

struct NoiseSpec {
  double sd = 0.0;
  std::uint64_t seed = 0;
};

// Noise-free test-function values, exposed so ideal-predictor baselines can
// be constructed in tests and CV sanity checks.
double single_bench_truth(double x1, double x2, int t);
std::array<double, 2> multi_bench_truth(double x1, double x2, int t1, int t2);

// Uniform n_x1 x n_x2 x 5 grid on [0,1]^2 x {1..5}; one response.
Dataset gen_single(int n_x1, int n_x2, const NoiseSpec& noise);

// Uniform n_x1 x n_x2 x 5 x 5 grid on [-100,100]^2 x {1..5}^2; two responses
// with independent per-output noise.
Dataset gen_multi(int n_x1, int n_x2, const NoiseSpec& noise1, const NoiseSpec& noise2);

// Predicts response means (rows x outputs) in original units.
using Predictor = std::function<MatrixXd(const MatrixXd& Xq, const MatrixXi& Tq)>;
// Trains on a fold's training split; fold_seed decorrelates restarts/batches
// across folds.
using Fitter = std::function<Predictor(const Dataset& train, std::uint64_t fold_seed)>;

struct CVReport {
  MatrixXd fold_rmse;                     // k x n_outputs; NaN where the fit failed
  VectorXd mean_rmse, sd_rmse;            // per output, over successful folds
  std::uint64_t seed = 0;
  std::vector<std::string> fold_failures;  // empty string = fold succeeded

  int folds() const { return static_cast<int>(fold_rmse.rows()); }
};

CVReport crossvalidate(const Fitter& fitter, const Dataset& data, int k, std::uint64_t seed);

std::string cv_report_csv(const CVReport& report);
std::string cv_report_summary(const CVReport& report);

}  // namespace svlvgp
