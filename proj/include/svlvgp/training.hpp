#pragma once

#include <optional>
#include <string>
#include <vector>

#include "svlvgp/lmc.hpp"

namespace svlvgp {

struct TrainConfig {
  int batch_size = 100;
  int max_iters = 20000;
  double adam_lr = 1e-2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double natgrad_gamma = 0.1;
  double z_freeze_fraction = 0.8;
  std::uint64_t seed = 0;
  bool convergence_check = true;
  int convergence_window = 500;
  double convergence_tol = 1e-4;
  // Ties the inducing set to the encoded training inputs (n_I = n, locations
  // re-encoded as Z moves, never optimized directly). Used for dense-oracle
  // comparisons where B must vanish identically.
  bool tie_inducing = false;
  bool normalize = true;
  int restarts = 8;  // dense MLE multi-start

  void validate() const;
};

struct TrainingTrace {
  std::vector<int> iteration;
  std::vector<double> elbo, kl, lt, seconds;

  void append(int it, double e, double k, double l, double s);
  size_t size() const { return iteration.size(); }
};

void write_trace_csv(const TrainingTrace& trace, const std::string& path);

// Gradient of the ELBO w.r.t. one function's variational state. g_sigma is
// the symmetric full-matrix derivative dELBO/dSigma; d_sigma_lower is the
// chain through Sigma = L L^T onto the factor (lower triangle), which is
// what a finite-difference probe of the factor sees.
struct VarGrads {
  VectorXd g_mu;
  MatrixXd g_sigma;
  MatrixXd d_sigma_lower;
};

struct ExactGrads {
  double beta = 0, log_sigma2 = 0, log_noise = 0;
  VectorXd log_phi, log_phi_z;
  std::vector<MatrixXd> z;  // per variable, single copy
};

struct SvGrads {
  double beta = 0, log_sigma2 = 0, log_noise = 0;
  VectorXd log_phi, log_phi_z;
  std::vector<MatrixXd> z;
  MatrixXd inducing;
  VarGrads var;
};

struct LmcGrads {
  VectorXd beta;
  VectorXd log_noise;
  MatrixXd W;
  std::vector<VectorXd> log_phi;    // per function
  std::vector<VectorXd> log_phi_z;  // per function
  std::vector<std::vector<MatrixXd>> z;  // [copy][variable]
  std::vector<MatrixXd> inducing;        // per inducing set
  std::vector<VarGrads> var;             // per function
};

// Analytic reverse-mode derivatives; each agrees with central finite
// differences to 1e-4 relative error (enforced by the test suite). All three
// return the objective value so value and gradient always come from one
// evaluation.
double nll_value_grad(const KernelParams& params, const LatentMap& map,
                      const MixedSchema& schema, const MatrixXd& X, const MatrixXi& T,
                      const VectorXd& y, ExactGrads* grads);
ElboBreakdown sv_elbo_grad(const SVModel& model, const MatrixXd& Xb, const MatrixXi& Tb,
                           const VectorXd& yb, double n_total, SvGrads* grads);
ElboBreakdown lmc_elbo_grad(const MultiSVModel& model, const MatrixXd& Xb, const MatrixXi& Tb,
                            const MatrixXd& Yb, double n_total, LmcGrads* grads);

// One natural-gradient ascent step on (mu, Sigma) in the Gaussian natural
// coordinates (Sigma^{-1} mu, -1/2 Sigma^{-1}). Halves gamma up to 10 times
// if the updated precision loses positive definiteness.
VariationalGaussian natgrad_step(const VariationalGaussian& var, const VectorXd& g_mu,
                                 const MatrixXd& g_sigma, double gamma);

// Adam in ascent form over a flat parameter vector with a coordinate mask;
// masked coordinates and their moments stay untouched (needed for the
// bit-identical Z freeze).
struct AdamState {
  VectorXd m, v;
  int t = 0;

  explicit AdamState(int size) : m(VectorXd::Zero(size)), v(VectorXd::Zero(size)) {}
  void step(VectorXd& theta, const VectorXd& grad, const std::vector<bool>& active,
            const TrainConfig& cfg);
};

struct ExactFitResult {
  ExactModel model;
  TrainingTrace trace;  // best restart's trace; elbo column holds -NLL
  int best_restart = -1;
  std::vector<double> restart_nll;
};
ExactFitResult fit_exact(const Dataset& data, const TrainConfig& cfg);

struct SvFitResult {
  SVModel model;
  TrainingTrace trace;
  std::optional<std::string> failure;
};
SvFitResult fit_sv(const Dataset& data, int n_inducing, int g, const TrainConfig& cfg);

struct LmcFitSpec {
  int n_inducing = 100;
  int g = 2;
  int n_latent = 1;
  LatentStructure structure = LatentStructure::Shared;
  bool shared_inducing = true;
};
struct LmcFitResult {
  MultiSVModel model;
  TrainingTrace trace;
  std::optional<std::string> failure;
};
LmcFitResult fit_lmc(const Dataset& data, const LmcFitSpec& spec, const TrainConfig& cfg);

}  // namespace svlvgp
