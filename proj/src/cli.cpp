#include "svlvgp/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "svlvgp/bench.hpp"
#include "svlvgp/model_io.hpp"

namespace svlvgp::cli {

namespace {

// Flag values that fail semantic checks (bad grid string, unknown family)
// are usage errors, distinct from bad input data.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string msg) {
  for (auto& c : msg) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return msg;
}

int report(int code, const std::string& msg) {
  std::cerr << "error[" << code << "]: " << one_line(msg) << "\n";
  return code;
}

int code_for(const std::exception& ex) {
  if (dynamic_cast<const UsageError*>(&ex)) return 2;
  if (dynamic_cast<const DataError*>(&ex) || dynamic_cast<const RoundTripMismatch*>(&ex)) {
    return 3;
  }
  if (dynamic_cast<const NotPositiveDefinite*>(&ex) || dynamic_cast<const NonFinite*>(&ex) ||
      dynamic_cast<const StepRejected*>(&ex) || dynamic_cast<const AllRestartsFailed*>(&ex)) {
    return 4;
  }
  if (dynamic_cast<const std::invalid_argument*>(&ex) ||
      dynamic_cast<const std::out_of_range*>(&ex)) {
    return 3;
  }
  return 4;
}

std::vector<int> parse_grid(const std::string& text, size_t parts, const char* example) {
  std::vector<int> out;
  std::string cur;
  for (char c : text + "x") {
    if (c == 'x' || c == 'X') {
      try {
        size_t used = 0;
        out.push_back(std::stoi(cur, &used));
        if (used != cur.size() || out.back() < 1) throw std::invalid_argument(cur);
      } catch (const std::exception&) {
        throw UsageError("bad --grid \"" + text + "\"; expected something like " + example);
      }
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (out.size() != parts) {
    throw UsageError("bad --grid \"" + text + "\"; expected " + std::to_string(parts) +
                     " factors like " + example);
  }
  return out;
}

enum class Family { Exact, Sv, LmcShared, LmcIndependent };

Family parse_family(const std::string& s) {
  if (s == "sv-lvgp" || s == "sv") return Family::Sv;
  if (s == "exact-lvgp" || s == "exact") return Family::Exact;
  if (s == "lmc-sv-lvgp-s" || s == "lmc-sv-shared") return Family::LmcShared;
  if (s == "lmc-sv-lvgp-i" || s == "lmc-sv-independent") return Family::LmcIndependent;
  throw UsageError("unknown --model family \"" + s +
                   "\"; use sv-lvgp, exact-lvgp, lmc-sv-lvgp-s, or lmc-sv-lvgp-i");
}

struct GenSingleFlags {
  std::string grid = "100x100x5";
  double noise_sd = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

struct GenMultiFlags {
  std::string grid = "30x30x5x5";
  double noise_sd1 = 0.0;
  double noise_sd2 = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

struct TrainFlags {
  std::string model = "sv-lvgp";
  std::string data;
  std::string out;
  std::string trace;
  int inducing = 100;
  int latent_dim = 2;
  int n_latent = 2;
  bool per_function_inducing = false;
  bool no_convergence_check = false;
  bool no_normalize = false;
  TrainConfig cfg;

  TrainConfig effective() const {
    TrainConfig c = cfg;
    c.convergence_check = !no_convergence_check;
    c.normalize = !no_normalize;
    return c;
  }
};

struct PredictFlags {
  std::string model;
  std::string queries;
  std::string out;
};

struct CvFlags {
  TrainFlags train;
  int folds = 10;
  std::uint64_t seed = 0;
  std::string out;
};

struct PathFlags {
  std::string model;
  std::string out;
};

void add_train_options(CLI::App* cmd, TrainFlags& f, bool data_required) {
  cmd->add_option("--model", f.model,
                  "model family: sv-lvgp | exact-lvgp | lmc-sv-lvgp-s | lmc-sv-lvgp-i")
      ->capture_default_str();
  auto* data = cmd->add_option("--data", f.data, "training dataset CSV");
  if (data_required) data->required();
  cmd->add_option("--inducing", f.inducing, "number of inducing points")->capture_default_str();
  cmd->add_option("--latent-dim", f.latent_dim, "latent dimension g per categorical variable")
      ->capture_default_str();
  cmd->add_option("--n-latent", f.n_latent, "latent functions L (lmc families only)")
      ->capture_default_str();
  cmd->add_flag("--per-function-inducing", f.per_function_inducing,
                "separate inducing set per latent function (lmc-sv-lvgp-s only)");
  cmd->add_option("--batch", f.cfg.batch_size, "minibatch size")->capture_default_str();
  cmd->add_option("--max-iters", f.cfg.max_iters, "iteration budget")->capture_default_str();
  cmd->add_option("--lr", f.cfg.adam_lr, "step size for the kernel/latent parameters")
      ->capture_default_str();
  cmd->add_option("--natgrad-gamma", f.cfg.natgrad_gamma,
                  "natural-gradient step for the variational state")
      ->capture_default_str();
  cmd->add_option("--z-freeze-fraction", f.cfg.z_freeze_fraction,
                  "fraction of the budget after which latent vectors freeze")
      ->capture_default_str();
  cmd->add_option("--window", f.cfg.convergence_window, "convergence window (iterations)")
      ->capture_default_str();
  cmd->add_option("--tol", f.cfg.convergence_tol, "relative improvement tolerance")
      ->capture_default_str();
  cmd->add_flag("--no-convergence-check", f.no_convergence_check,
                "always run the full iteration budget");
  cmd->add_flag("--tie-inducing", f.cfg.tie_inducing,
                "inducing set = encoded training inputs (dense-equivalence mode)");
  cmd->add_flag("--no-normalize", f.no_normalize, "train on raw units");
  cmd->add_option("--restarts", f.cfg.restarts, "random restarts (exact-lvgp only)")
      ->capture_default_str();
  cmd->add_option("--seed", f.cfg.seed, "random seed")->capture_default_str();
}

// --- subcommand bodies ---

int do_gen_single(const GenSingleFlags& f) {
  const auto grid = parse_grid(f.grid, 3, "20x20x5");
  if (grid[2] != 5) {
    throw UsageError("the third grid factor is the fixed five-level categorical; write " +
                     std::to_string(grid[0]) + "x" + std::to_string(grid[1]) + "x5");
  }
  const Dataset d = gen_single(grid[0], grid[1], NoiseSpec{f.noise_sd, f.seed});
  write_dataset_csv(d, f.out);
  std::cout << "gen-single grid=" << f.grid << " noise-sd=" << f.noise_sd << " seed=" << f.seed
            << ": wrote " << d.n() << " rows to " << f.out << "\n";
  return 0;
}

int do_gen_multi(const GenMultiFlags& f) {
  const auto grid = parse_grid(f.grid, 4, "30x30x5x5");
  if (grid[2] != 5 || grid[3] != 5) {
    throw UsageError("the categorical grid factors are fixed at five levels; write " +
                     std::to_string(grid[0]) + "x" + std::to_string(grid[1]) + "x5x5");
  }
  const Dataset d = gen_multi(grid[0], grid[1], NoiseSpec{f.noise_sd1, f.seed},
                              NoiseSpec{f.noise_sd2, f.seed + 1});
  write_dataset_csv(d, f.out);
  std::cout << "gen-multi grid=" << f.grid << " noise-sd=" << f.noise_sd1 << ","
            << f.noise_sd2 << " seed=" << f.seed << ": wrote " << d.n() << " rows to " << f.out
            << "\n";
  return 0;
}

std::string default_trace_path(const std::string& out) {
  std::filesystem::path p(out);
  p.replace_extension(".trace.csv");
  return p.string();
}

int do_train(const TrainFlags& f) {
  const Family fam = parse_family(f.model);
  const TrainConfig cfg = f.effective();
  cfg.validate();
  const Dataset data = read_dataset_csv(f.data);
  const std::string trace_path = f.trace.empty() ? default_trace_path(f.out) : f.trace;

  ModelArtifact artifact;
  TrainingTrace trace;
  std::string note;
  if (fam == Family::Sv) {
    if (data.n_outputs() != 1) {
      throw DataError("sv-lvgp trains one response; dataset has " +
                      std::to_string(data.n_outputs()) + " (use an lmc family)");
    }
    SvFitResult res = fit_sv(data, f.inducing, f.latent_dim, cfg);
    if (res.failure && res.trace.size() == 0) throw std::runtime_error(*res.failure);
    if (res.failure) note = *res.failure;
    trace = std::move(res.trace);
    artifact = make_artifact(std::move(res.model), cfg, trace);
  } else if (fam == Family::Exact) {
    if (data.n_outputs() != 1) {
      throw DataError("exact-lvgp trains one response; dataset has " +
                      std::to_string(data.n_outputs()) + " (use an lmc family)");
    }
    ExactFitResult res = fit_exact(data, cfg);
    trace = std::move(res.trace);
    artifact = make_artifact(std::move(res.model), cfg, trace);
  } else {
    LmcFitSpec spec;
    spec.n_inducing = f.inducing;
    spec.g = f.latent_dim;
    spec.n_latent = f.n_latent;
    spec.structure =
        fam == Family::LmcShared ? LatentStructure::Shared : LatentStructure::Independent;
    spec.shared_inducing = !f.per_function_inducing;
    LmcFitResult res = fit_lmc(data, spec, cfg);
    if (res.failure && res.trace.size() == 0) throw std::runtime_error(*res.failure);
    if (res.failure) note = *res.failure;
    trace = std::move(res.trace);
    artifact = make_artifact(std::move(res.model), cfg, trace);
  }

  save_artifact(artifact, f.out);
  write_trace_csv(trace, trace_path);
  if (!note.empty()) {
    std::cerr << "warning: training stopped early (" << one_line(note)
              << "); best snapshot saved\n";
  }
  std::cout << "trained " << artifact.family << " on " << data.n() << " rows";
  if (trace.size() > 0) std::cout << " (" << trace.size() << " iterations)";
  std::cout << ": wrote " << f.out << " and " << trace_path << "\n";
  return 0;
}

int do_predict(const PredictFlags& f) {
  const ModelArtifact artifact = load_artifact(f.model);
  const QueryTable q = read_query_csv(f.queries);
  const MixedSchema& schema = artifact.schema();
  if (q.schema.p != schema.p || q.schema.q != schema.q) {
    throw DataError("query file has " + std::to_string(q.schema.p) + " quantitative and " +
                    std::to_string(q.schema.q) + " categorical columns; the model expects " +
                    std::to_string(schema.p) + " and " + std::to_string(schema.q));
  }
  const PredictOutput out = artifact_predict(artifact, q.X, q.T);

  std::string csv;
  for (int j = 1; j <= schema.p; ++j) csv += "x_" + std::to_string(j) + ",";
  for (int j = 1; j <= schema.q; ++j) csv += "t_" + std::to_string(j) + ",";
  for (int o = 1; o <= artifact.n_outputs(); ++o) {
    csv += "mean_" + std::to_string(o) + ",var_" + std::to_string(o);
    csv += o == artifact.n_outputs() ? "\n" : ",";
  }
  for (int i = 0; i < out.mean.rows(); ++i) {
    for (int j = 0; j < schema.p; ++j) csv += format_double(q.X(i, j)) + ",";
    for (int j = 0; j < schema.q; ++j) csv += std::to_string(q.T(i, j)) + ",";
    for (int o = 0; o < artifact.n_outputs(); ++o) {
      csv += format_double(out.mean(i, o)) + "," + format_double(out.var(i, o));
      csv += o == artifact.n_outputs() - 1 ? "\n" : ",";
    }
  }
  atomic_write_text(f.out, csv);
  std::cout << "predicted " << out.mean.rows() << " rows with " << artifact.family
            << " model: wrote " << f.out << "\n";
  return 0;
}

int do_cv(const CvFlags& f) {
  const Family fam = parse_family(f.train.model);
  const TrainConfig base = f.train.effective();
  base.validate();
  const Dataset data = read_dataset_csv(f.train.data);
  if ((fam == Family::Sv || fam == Family::Exact) && data.n_outputs() != 1) {
    throw DataError("single-output families need a one-response dataset; got " +
                    std::to_string(data.n_outputs()));
  }

  const int inducing = f.train.inducing;
  const int g = f.train.latent_dim;
  Fitter fitter;
  if (fam == Family::Sv) {
    fitter = [&, inducing, g](const Dataset& train, std::uint64_t fold_seed) -> Predictor {
      TrainConfig c = base;
      c.seed = fold_seed;
      SvFitResult res = fit_sv(train, inducing, g, c);
      if (res.failure && res.trace.size() == 0) throw std::runtime_error(*res.failure);
      return [model = std::move(res.model)](const MatrixXd& Xq, const MatrixXi& Tq) {
        return MatrixXd(sv_predict(model, Xq, Tq).mean);
      };
    };
  } else if (fam == Family::Exact) {
    fitter = [&](const Dataset& train, std::uint64_t fold_seed) -> Predictor {
      TrainConfig c = base;
      c.seed = fold_seed;
      ExactFitResult res = fit_exact(train, c);
      return [model = std::move(res.model)](const MatrixXd& Xq, const MatrixXi& Tq) {
        return MatrixXd(exact_predict(model, Xq, Tq).mean);
      };
    };
  } else {
    LmcFitSpec spec;
    spec.n_inducing = inducing;
    spec.g = g;
    spec.n_latent = f.train.n_latent;
    spec.structure =
        fam == Family::LmcShared ? LatentStructure::Shared : LatentStructure::Independent;
    spec.shared_inducing = !f.train.per_function_inducing;
    fitter = [&, spec](const Dataset& train, std::uint64_t fold_seed) -> Predictor {
      TrainConfig c = base;
      c.seed = fold_seed;
      LmcFitResult res = fit_lmc(train, spec, c);
      if (res.failure && res.trace.size() == 0) throw std::runtime_error(*res.failure);
      return [model = std::move(res.model)](const MatrixXd& Xq, const MatrixXi& Tq) {
        return multi_predict(model, Xq, Tq).mean;
      };
    };
  }

  const CVReport rep = crossvalidate(fitter, data, f.folds, f.seed);
  atomic_write_text(f.out, cv_report_csv(rep));
  std::cout << cv_report_summary(rep) << "wrote " << f.out << "\n";
  return 0;
}

int do_latent_export(const PathFlags& f) {
  const ModelArtifact artifact = load_artifact(f.model);
  const LatentMap& map = artifact.exact ? artifact.exact->map
                         : artifact.sv  ? artifact.sv->map
                                        : artifact.lmc->map;
  write_latent_csv(canonicalize(map), artifact.schema(), f.out);
  std::cout << "wrote canonical latent space to " << f.out << "\n";
  return 0;
}

int do_trace_export(const PathFlags& f) {
  const ModelArtifact artifact = load_artifact(f.model);
  write_trace_csv(artifact.trace_summary, f.out);
  std::cout << "wrote " << artifact.trace_summary.size() << " trace rows to " << f.out << "\n";
  return 0;
}

int do_roundtrip(const std::string& model) {
  std::cout << roundtrip_verify(model);
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  if (const char* env = std::getenv("SVLVGP_THREADS")) {
    const int k = std::atoi(env);
    if (k > 0) Eigen::setNbThreads(k);
  }

  CLI::App app{
      "Gaussian-process regression for mixed categorical/quantitative inputs: "
      "latent-variable embeddings, sparse variational inference, multi-output "
      "coregionalization"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a TOML/INI file");

  GenSingleFlags gs;
  auto* c_gs = app.add_subcommand("gen-single",
                                  "generate the single-response sine benchmark dataset");
  c_gs->add_option("--grid", gs.grid, "grid as N1xN2x5")->capture_default_str();
  c_gs->add_option("--noise-sd", gs.noise_sd, "Gaussian noise SD")->capture_default_str();
  c_gs->add_option("--seed", gs.seed, "noise seed")->capture_default_str();
  c_gs->add_option("--out", gs.out, "output CSV")->required();

  GenMultiFlags gm;
  auto* c_gm = app.add_subcommand("gen-multi",
                                  "generate the two-response benchmark dataset");
  c_gm->add_option("--grid", gm.grid, "grid as N1xN2x5x5")->capture_default_str();
  c_gm->add_option("--noise-sd1", gm.noise_sd1, "noise SD for response 1")
      ->capture_default_str();
  c_gm->add_option("--noise-sd2", gm.noise_sd2, "noise SD for response 2")
      ->capture_default_str();
  c_gm->add_option("--seed", gm.seed, "noise seed (response 2 uses seed+1)")
      ->capture_default_str();
  c_gm->add_option("--out", gm.out, "output CSV")->required();

  TrainFlags tr;
  auto* c_tr = app.add_subcommand("train", "fit a model and write a JSON artifact");
  add_train_options(c_tr, tr, true);
  c_tr->add_option("--out", tr.out, "artifact JSON path")->required();
  c_tr->add_option("--trace", tr.trace, "trace CSV path (default: artifact stem + .trace.csv)");

  PredictFlags pr;
  auto* c_pr = app.add_subcommand("predict", "predict means/variances from an artifact");
  c_pr->add_option("--model", pr.model, "artifact JSON")->required();
  c_pr->add_option("--queries", pr.queries, "query CSV (y columns optional, ignored)")
      ->required();
  c_pr->add_option("--out", pr.out, "output CSV")->required();

  CvFlags cv;
  auto* c_cv = app.add_subcommand("cv", "k-fold cross-validation RMSE");
  add_train_options(c_cv, cv.train, true);
  c_cv->add_option("--folds", cv.folds, "fold count")->capture_default_str();
  c_cv->add_option("--cv-seed", cv.seed, "fold-assignment seed")->capture_default_str();
  c_cv->add_option("--out", cv.out, "report CSV path")->required();

  PathFlags le;
  auto* c_le = app.add_subcommand("latent-export",
                                  "export the canonicalized latent space as CSV");
  c_le->add_option("--model", le.model, "artifact JSON")->required();
  c_le->add_option("--out", le.out, "output CSV")->required();

  PathFlags te;
  auto* c_te = app.add_subcommand("trace-export", "export the artifact's trace summary as CSV");
  c_te->add_option("--model", te.model, "artifact JSON")->required();
  c_te->add_option("--out", te.out, "output CSV")->required();

  std::string rt_model;
  auto* c_rt = app.add_subcommand("roundtrip",
                                  "verify artifact serialization: canonical bytes and probes");
  c_rt->add_option("--model", rt_model, "artifact JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    return report(2, e.what());
  }

  try {
    if (c_gs->parsed()) return do_gen_single(gs);
    if (c_gm->parsed()) return do_gen_multi(gm);
    if (c_tr->parsed()) return do_train(tr);
    if (c_pr->parsed()) return do_predict(pr);
    if (c_cv->parsed()) return do_cv(cv);
    if (c_le->parsed()) return do_latent_export(le);
    if (c_te->parsed()) return do_trace_export(te);
    if (c_rt->parsed()) return do_roundtrip(rt_model);
  } catch (const std::exception& ex) {
    return report(code_for(ex), ex.what());
  }
  return report(2, "no subcommand given");
}

}  // namespace svlvgp::cli
