#include "svlvgp/model_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace svlvgp {

using nlohmann::json;  // std::map-backed: object keys serialize sorted

namespace {

// --- encoding helpers ---

json vec_json(const VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json mat_json(const MatrixXd& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

// --- decoding helpers; every structural complaint names its location ---

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw DataError("artifact: " + where + " " + what);
}

void expect_fields(const json& j, std::initializer_list<const char*> allowed,
                   const std::string& where) {
  if (!j.is_object()) bad(where, "must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (item.key() == a) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw DataError("artifact: unknown field \"" + item.key() + "\" in " + where +
                      " (format_version " + std::to_string(ModelArtifact::current_format_version) +
                      " reader)");
    }
  }
}

const json& field(const json& j, const char* name, const std::string& where) {
  auto it = j.find(name);
  if (it == j.end()) bad(where, std::string("is missing field \"") + name + "\"");
  return *it;
}

double num(const json& j, const std::string& where) {
  if (!j.is_number()) bad(where, "must be a number");
  return j.get<double>();
}

int integer(const json& j, const std::string& where) {
  if (!j.is_number_integer()) bad(where, "must be an integer");
  return j.get<int>();
}

VectorXd vec_from(const json& j, const std::string& where) {
  if (!j.is_array()) bad(where, "must be an array");
  VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v(i) = num(j[i], where);
  return v;
}

MatrixXd mat_from(const json& j, const std::string& where) {
  if (!j.is_array()) bad(where, "must be an array of rows");
  const int rows = static_cast<int>(j.size());
  if (rows == 0) return MatrixXd(0, 0);
  if (!j[0].is_array()) bad(where, "rows must be arrays");
  const int cols = static_cast<int>(j[0].size());
  MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (!j[r].is_array() || static_cast<int>(j[r].size()) != cols) {
      bad(where, "must be rectangular");
    }
    for (int c = 0; c < cols; ++c) m(r, c) = num(j[r][c], where);
  }
  return m;
}

// --- component (de)serializers ---

json schema_json(const MixedSchema& s) {
  json j;
  j["p"] = s.p;
  j["q"] = s.q;
  j["levels"] = s.levels;
  json labels = json::array();
  for (const auto& var : s.level_labels) labels.push_back(var);
  j["level_labels"] = std::move(labels);
  return j;
}

MixedSchema schema_from(const json& j) {
  expect_fields(j, {"p", "q", "levels", "level_labels"}, "schema");
  MixedSchema s;
  s.p = integer(field(j, "p", "schema.p"), "schema.p");
  s.q = integer(field(j, "q", "schema.q"), "schema.q");
  for (const auto& l : field(j, "levels", "schema.levels")) {
    s.levels.push_back(integer(l, "schema.levels"));
  }
  for (const auto& var : field(j, "level_labels", "schema.level_labels")) {
    std::vector<std::string> names;
    for (const auto& n : var) {
      if (!n.is_string()) bad("schema.level_labels", "must hold strings");
      names.push_back(n.get<std::string>());
    }
    s.level_labels.push_back(std::move(names));
  }
  s.validate();
  return s;
}

json norm_json(const Normalization& n) {
  json j;
  j["x_mean"] = vec_json(n.x_mean);
  j["x_scale"] = vec_json(n.x_scale);
  j["y_mean"] = vec_json(n.y_mean);
  j["y_scale"] = vec_json(n.y_scale);
  return j;
}

Normalization norm_from(const json& j) {
  expect_fields(j, {"x_mean", "x_scale", "y_mean", "y_scale"}, "normalization");
  Normalization n;
  n.x_mean = vec_from(field(j, "x_mean", "normalization"), "normalization.x_mean");
  n.x_scale = vec_from(field(j, "x_scale", "normalization"), "normalization.x_scale");
  n.y_mean = vec_from(field(j, "y_mean", "normalization"), "normalization.y_mean");
  n.y_scale = vec_from(field(j, "y_scale", "normalization"), "normalization.y_scale");
  if ((n.x_scale.array() <= 0).any() || (n.y_scale.array() <= 0).any()) {
    bad("normalization", "scales must be positive");
  }
  return n;
}

json params_json(const KernelParams& p) {
  json j;
  j["beta"] = p.beta;
  j["log_sigma2"] = p.log_sigma2;
  j["log_phi"] = vec_json(p.log_phi);
  j["log_phi_z"] = vec_json(p.log_phi_z);
  j["log_noise"] = p.log_noise;
  return j;
}

KernelParams params_from(const json& j, const std::string& where) {
  expect_fields(j, {"beta", "log_sigma2", "log_phi", "log_phi_z", "log_noise"}, where);
  KernelParams p;
  p.beta = num(field(j, "beta", where), where + ".beta");
  p.log_sigma2 = num(field(j, "log_sigma2", where), where + ".log_sigma2");
  p.log_phi = vec_from(field(j, "log_phi", where), where + ".log_phi");
  p.log_phi_z = vec_from(field(j, "log_phi_z", where), where + ".log_phi_z");
  p.log_noise = num(field(j, "log_noise", where), where + ".log_noise");
  return p;
}

json latent_json(const LatentMap& m) {
  json j;
  j["g"] = m.g;
  j["structure"] = m.structure == LatentStructure::Shared ? "shared" : "independent";
  json copies = json::array();
  for (const auto& copy : m.z) {
    json vars = json::array();
    for (const auto& block : copy) vars.push_back(mat_json(block));
    copies.push_back(std::move(vars));
  }
  j["copies"] = std::move(copies);
  return j;
}

LatentMap latent_from(const json& j, const MixedSchema& schema) {
  expect_fields(j, {"g", "structure", "copies"}, "latent");
  LatentMap m;
  m.g = integer(field(j, "g", "latent.g"), "latent.g");
  const std::string st = field(j, "structure", "latent.structure").get<std::string>();
  if (st == "shared") {
    m.structure = LatentStructure::Shared;
  } else if (st == "independent") {
    m.structure = LatentStructure::Independent;
  } else {
    bad("latent.structure", "must be \"shared\" or \"independent\"");
  }
  for (const auto& copy : field(j, "copies", "latent.copies")) {
    std::vector<MatrixXd> blocks;
    for (const auto& block : copy) blocks.push_back(mat_from(block, "latent.copies"));
    m.z.push_back(std::move(blocks));
  }
  m.validate(schema);
  return m;
}

json variational_json(const VariationalGaussian& v) {
  json j;
  j["mu"] = vec_json(v.mu);
  j["sigma_lower"] = mat_json(v.sigma_lower);
  return j;
}

VariationalGaussian variational_from(const json& j, const std::string& where) {
  expect_fields(j, {"mu", "sigma_lower"}, where);
  VariationalGaussian v;
  v.mu = vec_from(field(j, "mu", where), where + ".mu");
  v.sigma_lower = mat_from(field(j, "sigma_lower", where), where + ".sigma_lower");
  if (v.sigma_lower.rows() != v.sigma_lower.cols() || v.sigma_lower.rows() != v.mu.size()) {
    bad(where, "factor must be square and sized like mu");
  }
  for (int r = 0; r < v.sigma_lower.rows(); ++r) {
    for (int c = r + 1; c < v.sigma_lower.cols(); ++c) {
      if (v.sigma_lower(r, c) != 0.0) bad(where + ".sigma_lower", "must be lower triangular");
    }
  }
  if (!(v.sigma_lower.diagonal().array() > 0.0).all()) {
    throw DataError("artifact: " + where +
                    " violates the invariant: covariance factor diagonal must be positive");
  }
  return v;
}

json train_json(const TrainConfig& c) {
  json j;
  j["batch_size"] = c.batch_size;
  j["max_iters"] = c.max_iters;
  j["adam_lr"] = c.adam_lr;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["natgrad_gamma"] = c.natgrad_gamma;
  j["z_freeze_fraction"] = c.z_freeze_fraction;
  j["seed"] = c.seed;
  j["convergence_check"] = c.convergence_check;
  j["convergence_window"] = c.convergence_window;
  j["convergence_tol"] = c.convergence_tol;
  j["tie_inducing"] = c.tie_inducing;
  j["normalize"] = c.normalize;
  j["restarts"] = c.restarts;
  return j;
}

TrainConfig train_from(const json& j) {
  expect_fields(j,
                {"batch_size", "max_iters", "adam_lr", "adam_beta1", "adam_beta2", "adam_eps",
                 "natgrad_gamma", "z_freeze_fraction", "seed", "convergence_check",
                 "convergence_window", "convergence_tol", "tie_inducing", "normalize",
                 "restarts"},
                "train");
  TrainConfig c;
  c.batch_size = integer(field(j, "batch_size", "train"), "train.batch_size");
  c.max_iters = integer(field(j, "max_iters", "train"), "train.max_iters");
  c.adam_lr = num(field(j, "adam_lr", "train"), "train.adam_lr");
  c.adam_beta1 = num(field(j, "adam_beta1", "train"), "train.adam_beta1");
  c.adam_beta2 = num(field(j, "adam_beta2", "train"), "train.adam_beta2");
  c.adam_eps = num(field(j, "adam_eps", "train"), "train.adam_eps");
  c.natgrad_gamma = num(field(j, "natgrad_gamma", "train"), "train.natgrad_gamma");
  c.z_freeze_fraction = num(field(j, "z_freeze_fraction", "train"), "train.z_freeze_fraction");
  c.seed = field(j, "seed", "train").get<std::uint64_t>();
  c.convergence_check = field(j, "convergence_check", "train").get<bool>();
  c.convergence_window = integer(field(j, "convergence_window", "train"), "train");
  c.convergence_tol = num(field(j, "convergence_tol", "train"), "train.convergence_tol");
  c.tie_inducing = field(j, "tie_inducing", "train").get<bool>();
  c.normalize = field(j, "normalize", "train").get<bool>();
  c.restarts = integer(field(j, "restarts", "train"), "train.restarts");
  c.validate();
  return c;
}

json trace_json(const TrainingTrace& t) {
  json j;
  j["iteration"] = t.iteration;
  json e = json::array(), k = json::array(), l = json::array();
  for (size_t i = 0; i < t.size(); ++i) {
    e.push_back(t.elbo[i]);
    k.push_back(t.kl[i]);
    l.push_back(t.lt[i]);
  }
  j["elbo"] = std::move(e);
  j["kl"] = std::move(k);
  j["lt"] = std::move(l);
  return j;
}

TrainingTrace trace_from(const json& j) {
  expect_fields(j, {"iteration", "elbo", "kl", "lt"}, "trace_summary");
  TrainingTrace t;
  for (const auto& v : field(j, "iteration", "trace_summary")) {
    t.iteration.push_back(integer(v, "trace_summary.iteration"));
  }
  auto nums = [&](const char* name) {
    std::vector<double> out;
    for (const auto& v : field(j, name, "trace_summary")) {
      out.push_back(num(v, std::string("trace_summary.") + name));
    }
    return out;
  };
  t.elbo = nums("elbo");
  t.kl = nums("kl");
  t.lt = nums("lt");
  t.seconds.assign(t.iteration.size(), 0.0);
  if (t.elbo.size() != t.iteration.size() || t.kl.size() != t.iteration.size() ||
      t.lt.size() != t.iteration.size()) {
    bad("trace_summary", "columns must have equal lengths");
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelArtifact
// ---------------------------------------------------------------------------

const MixedSchema& ModelArtifact::schema() const {
  if (exact) return exact->schema;
  if (sv) return sv->schema;
  return lmc->schema;
}

const Normalization& ModelArtifact::norm() const {
  if (exact) return exact->norm;
  if (sv) return sv->norm;
  return lmc->norm;
}

int ModelArtifact::n_outputs() const { return lmc ? lmc->cfg.n_outputs : 1; }

void ModelArtifact::validate() const {
  if (format_version != current_format_version) {
    throw DataError("artifact: unsupported format_version " + std::to_string(format_version) +
                    "; this build reads version " + std::to_string(current_format_version));
  }
  const int engaged = (exact ? 1 : 0) + (sv ? 1 : 0) + (lmc ? 1 : 0);
  if (engaged != 1) throw DataError("artifact: exactly one model payload must be present");
  if (exact && family != "exact") throw DataError("artifact: family tag does not match payload");
  if (sv && family != "sv") throw DataError("artifact: family tag does not match payload");
  if (lmc) {
    const std::string expect = lmc->cfg.structure == LatentStructure::Shared
                                   ? "lmc-sv-shared"
                                   : "lmc-sv-independent";
    if (family != expect) throw DataError("artifact: family tag does not match payload");
    lmc->validate();
  }
  if (sv) {
    sv->schema.validate();
    sv->map.validate(sv->schema);
    sv->var.validate();
  }
  if (exact) {
    exact->schema.validate();
    exact->map.validate(exact->schema);
    if (exact->S.rows() != exact->y.size()) {
      throw DataError("artifact: exact payload has mismatched training sizes");
    }
  }
  train.validate();
}

ModelArtifact make_artifact(ExactModel model, const TrainConfig& cfg,
                            const TrainingTrace& trace) {
  ModelArtifact a;
  a.family = "exact";
  a.exact = std::move(model);
  a.train = cfg;
  a.rng_algorithm = std::string(SeededRng::algorithm);
  a.trace_summary = summarize_trace(trace);
  return a;
}

ModelArtifact make_artifact(SVModel model, const TrainConfig& cfg, const TrainingTrace& trace) {
  ModelArtifact a;
  a.family = "sv";
  a.sv = std::move(model);
  a.train = cfg;
  a.rng_algorithm = std::string(SeededRng::algorithm);
  a.trace_summary = summarize_trace(trace);
  return a;
}

ModelArtifact make_artifact(MultiSVModel model, const TrainConfig& cfg,
                            const TrainingTrace& trace) {
  ModelArtifact a;
  a.family = model.cfg.structure == LatentStructure::Shared ? "lmc-sv-shared"
                                                            : "lmc-sv-independent";
  a.lmc = std::move(model);
  a.train = cfg;
  a.rng_algorithm = std::string(SeededRng::algorithm);
  a.trace_summary = summarize_trace(trace);
  return a;
}

PredictOutput artifact_predict(const ModelArtifact& artifact, const MatrixXd& Xq,
                               const MatrixXi& Tq) {
  PredictOutput out;
  if (artifact.exact) {
    const GpPrediction p = exact_predict(*artifact.exact, Xq, Tq);
    out.mean = p.mean;
    out.var = p.var;
  } else if (artifact.sv) {
    const GpPrediction p = sv_predict(*artifact.sv, Xq, Tq);
    out.mean = p.mean;
    out.var = p.var;
  } else {
    const MultiPrediction p = multi_predict(*artifact.lmc, Xq, Tq);
    out.mean = p.mean;
    out.var = p.var;
  }
  return out;
}

TrainingTrace summarize_trace(const TrainingTrace& trace, int max_rows) {
  TrainingTrace out;
  const int n = static_cast<int>(trace.size());
  if (n == 0) return out;
  const int stride = (n + max_rows - 1) / max_rows;
  for (int i = 0; i < n; i += stride) {
    out.append(trace.iteration[i], trace.elbo[i], trace.kl[i], trace.lt[i], 0.0);
  }
  if (out.iteration.back() != trace.iteration[n - 1]) {
    out.append(trace.iteration[n - 1], trace.elbo[n - 1], trace.kl[n - 1], trace.lt[n - 1],
               0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------

std::string artifact_to_json(const ModelArtifact& artifact) {
  artifact.validate();
  json j;
  j["format_version"] = artifact.format_version;
  j["family"] = artifact.family;
  j["schema"] = schema_json(artifact.schema());
  j["normalization"] = norm_json(artifact.norm());
  j["train"] = train_json(artifact.train);
  j["rng_algorithm"] = artifact.rng_algorithm;
  j["trace_summary"] = trace_json(artifact.trace_summary);

  json m;
  if (artifact.exact) {
    const ExactModel& e = *artifact.exact;
    m["params"] = params_json(e.params);
    m["latent"] = latent_json(e.map);
    m["train_s"] = mat_json(e.S);
    m["train_y"] = vec_json(e.y);
  } else if (artifact.sv) {
    const SVModel& s = *artifact.sv;
    m["params"] = params_json(s.params);
    m["latent"] = latent_json(s.map);
    m["inducing"] = mat_json(s.inducing.S);
    m["variational"] = variational_json(s.var);
  } else {
    const MultiSVModel& l = *artifact.lmc;
    m["n_latent"] = l.cfg.n_latent;
    m["shared_inducing"] = l.cfg.shared_inducing;
    m["W"] = mat_json(l.cfg.W);
    m["beta_vec"] = vec_json(l.cfg.beta_vec);
    m["log_noise_vec"] = vec_json(l.cfg.log_noise_vec);
    json fp = json::array();
    for (const auto& kp : l.cfg.fn_params) fp.push_back(params_json(kp));
    m["fn_params"] = std::move(fp);
    m["latent"] = latent_json(l.map);
    json ind = json::array();
    for (const auto& set : l.inducing) ind.push_back(mat_json(set.S));
    m["inducing"] = std::move(ind);
    json vars = json::array();
    for (const auto& v : l.var) vars.push_back(variational_json(v));
    m["variational"] = std::move(vars);
  }
  j["model"] = std::move(m);
  return j.dump();
}

ModelArtifact artifact_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& ex) {
    throw DataError(std::string("artifact: not valid JSON: ") + ex.what());
  }
  expect_fields(j,
                {"format_version", "family", "schema", "normalization", "train",
                 "rng_algorithm", "trace_summary", "model"},
                "artifact");
  ModelArtifact a;
  a.format_version = integer(field(j, "format_version", "artifact"), "format_version");
  if (a.format_version != ModelArtifact::current_format_version) {
    throw DataError("artifact: unsupported format_version " + std::to_string(a.format_version) +
                    "; this build reads version " +
                    std::to_string(ModelArtifact::current_format_version));
  }
  a.family = field(j, "family", "artifact").get<std::string>();
  const MixedSchema schema = schema_from(field(j, "schema", "artifact"));
  const Normalization norm = norm_from(field(j, "normalization", "artifact"));
  a.train = train_from(field(j, "train", "artifact"));
  a.rng_algorithm = field(j, "rng_algorithm", "artifact").get<std::string>();
  a.trace_summary = trace_from(field(j, "trace_summary", "artifact"));

  const json& m = field(j, "model", "artifact");
  if (a.family == "exact") {
    expect_fields(m, {"params", "latent", "train_s", "train_y"}, "model");
    ExactModel e;
    e.schema = schema;
    e.norm = norm;
    e.params = params_from(field(m, "params", "model"), "model.params");
    e.map = latent_from(field(m, "latent", "model"), schema);
    e.S = mat_from(field(m, "train_s", "model"), "model.train_s");
    e.y = vec_from(field(m, "train_y", "model"), "model.train_y");
    if (e.S.rows() != e.y.size() || e.S.cols() != e.map.encoded_width(schema)) {
      bad("model", "training block shapes disagree with the schema");
    }
    MatrixXd K = cross_covariance(e.S, e.S, e.params);
    K.diagonal().array() += e.params.noise_var();
    e.chol = cholesky_with_jitter(SymMatrix(std::move(K)),
                                  kernel_jitter(e.params.sigma2() + e.params.noise_var()));
    e.alpha = chol_solve(e.chol, VectorXd(e.y.array() - e.params.beta));
    a.exact = std::move(e);
  } else if (a.family == "sv") {
    expect_fields(m, {"params", "latent", "inducing", "variational"}, "model");
    SVModel s;
    s.schema = schema;
    s.norm = norm;
    s.params = params_from(field(m, "params", "model"), "model.params");
    s.map = latent_from(field(m, "latent", "model"), schema);
    s.inducing.S = mat_from(field(m, "inducing", "model"), "model.inducing");
    s.var = variational_from(field(m, "variational", "model"), "model.variational");
    if (s.inducing.S.cols() != s.map.encoded_width(schema) ||
        s.inducing.count() != s.var.size()) {
      bad("model", "inducing block shapes disagree with the schema");
    }
    a.sv = std::move(s);
  } else if (a.family == "lmc-sv-shared" || a.family == "lmc-sv-independent") {
    expect_fields(m,
                  {"n_latent", "shared_inducing", "W", "beta_vec", "log_noise_vec", "fn_params",
                   "latent", "inducing", "variational"},
                  "model");
    MultiSVModel l;
    l.schema = schema;
    l.norm = norm;
    l.map = latent_from(field(m, "latent", "model"), schema);
    l.cfg.structure = l.map.structure;
    l.cfg.n_latent = integer(field(m, "n_latent", "model"), "model.n_latent");
    l.cfg.shared_inducing = field(m, "shared_inducing", "model").get<bool>();
    l.cfg.W = mat_from(field(m, "W", "model"), "model.W");
    l.cfg.beta_vec = vec_from(field(m, "beta_vec", "model"), "model.beta_vec");
    l.cfg.log_noise_vec = vec_from(field(m, "log_noise_vec", "model"), "model.log_noise_vec");
    l.cfg.n_outputs = static_cast<int>(l.cfg.beta_vec.size());
    for (const auto& kp : field(m, "fn_params", "model")) {
      l.cfg.fn_params.push_back(params_from(kp, "model.fn_params"));
    }
    int set_i = 0;
    for (const auto& set : field(m, "inducing", "model")) {
      InducingSet s;
      s.S = mat_from(set, "model.inducing[" + std::to_string(set_i++) + "]");
      l.inducing.push_back(std::move(s));
    }
    int var_i = 0;
    for (const auto& v : field(m, "variational", "model")) {
      l.var.push_back(variational_from(v, "model.variational[" + std::to_string(var_i++) + "]"));
    }
    a.lmc = std::move(l);
  } else {
    throw DataError("artifact: unknown family \"" + a.family + "\"");
  }
  a.validate();
  return a;
}

void save_artifact(const ModelArtifact& artifact, const std::string& path) {
  atomic_write_text(path, artifact_to_json(artifact) + "\n");
}

ModelArtifact load_artifact(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("artifact: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return artifact_from_json(buf.str());
}

// ---------------------------------------------------------------------------
// Probes and round-trip verification
// ---------------------------------------------------------------------------

void probe_queries(const MixedSchema& schema, const Normalization& norm, MatrixXd& Xq,
                   MatrixXi& Tq) {
  constexpr int n_probe = 16;
  SeededRng rng(0x70726f6265ull);
  Xq.resize(n_probe, schema.p);
  Tq.resize(n_probe, schema.q);
  for (int r = 0; r < n_probe; ++r) {
    for (int jx = 0; jx < schema.p; ++jx) {
      Xq(r, jx) = norm.x_mean(jx) + norm.x_scale(jx) * (2.0 * rng.uniform() - 1.0);
    }
    for (int jt = 0; jt < schema.q; ++jt) {
      Tq(r, jt) =
          1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schema.levels[jt])));
    }
  }
}

PredictOutput run_probes(const ModelArtifact& artifact) {
  MatrixXd Xq;
  MatrixXi Tq;
  probe_queries(artifact.schema(), artifact.norm(), Xq, Tq);
  return artifact_predict(artifact, Xq, Tq);
}

namespace {

// Depth-first search for the first leaf where two JSON documents differ;
// returns a JSON-pointer-style path.
bool first_divergence(const json& a, const json& b, std::string path, std::string& where) {
  if (a.type() != b.type()) {
    where = path.empty() ? "/" : path;
    return true;
  }
  if (a.is_object()) {
    for (const auto& item : a.items()) {
      if (!b.contains(item.key())) {
        where = path + "/" + item.key();
        return true;
      }
      if (first_divergence(item.value(), b[item.key()], path + "/" + item.key(), where)) {
        return true;
      }
    }
    for (const auto& item : b.items()) {
      if (!a.contains(item.key())) {
        where = path + "/" + item.key();
        return true;
      }
    }
    return false;
  }
  if (a.is_array()) {
    const size_t n = std::min(a.size(), b.size());
    for (size_t i = 0; i < n; ++i) {
      if (first_divergence(a[i], b[i], path + "/" + std::to_string(i), where)) return true;
    }
    if (a.size() != b.size()) {
      where = path + "/" + std::to_string(n);
      return true;
    }
    return false;
  }
  if (a != b) {
    where = path.empty() ? "/" : path;
    return true;
  }
  return false;
}

bool bits_equal(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

std::string roundtrip_verify(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("artifact: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  json on_disk;
  try {
    on_disk = json::parse(text);
  } catch (const json::exception& ex) {
    throw DataError(std::string("artifact: not valid JSON: ") + ex.what());
  }
  const std::string canon_a = on_disk.dump();

  const ModelArtifact loaded = artifact_from_json(text);
  const std::string canon_b = artifact_to_json(loaded);
  if (canon_a != canon_b) {
    std::string where = "/";
    first_divergence(on_disk, json::parse(canon_b), "", where);
    throw RoundTripMismatch("artifact round trip: first divergence at " + where);
  }

  const PredictOutput before = run_probes(loaded);
  const ModelArtifact reloaded = artifact_from_json(canon_b);
  const PredictOutput after = run_probes(reloaded);
  if (!bits_equal(before.mean, after.mean)) {
    throw RoundTripMismatch("artifact round trip: probe means differ after re-serialization");
  }
  if (!bits_equal(before.var, after.var)) {
    throw RoundTripMismatch("artifact round trip: probe variances differ after re-serialization");
  }
  return "round trip OK: canonical form stable (" + std::to_string(canon_b.size()) +
         " bytes); 16 probe predictions bit-identical\n";
}

}  // namespace svlvgp
