#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "svlvgp/cli.hpp"
#include "svlvgp/data.hpp"
#include "svlvgp/model_io.hpp"

using namespace svlvgp;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "svlvgp");
  std::vector<char*> argv;
  argv.reserve(args.size());
  for (auto& a : args) argv.push_back(a.data());

  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  CliResult r;
  try {
    r.code = cli::run(static_cast<int>(argv.size()), argv.data());
  } catch (...) {
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    throw;
  }
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

struct TmpDir {
  fs::path root;
  explicit TmpDir(const std::string& name) : root(fs::path("cli_tmp") / name) {
    fs::create_directories(root);
  }
  ~TmpDir() {
    std::error_code ec;
    fs::remove_all(root, ec);
  }
  std::string operator/(const std::string& leaf) const { return (root / leaf).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return out;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("help and usage errors") {
  TmpDir tmp("usage");

  CliResult none = run_cli({});
  CHECK(none.code == 2);
  CHECK(none.err.rfind("error[2]: ", 0) == 0);

  CliResult help = run_cli({"--help"});
  CHECK(help.code == 0);
  CHECK(contains(help.out, "train"));
  CHECK(contains(help.out, "predict"));
  CHECK(contains(help.out, "gen-single"));
  CHECK(help.err.empty());

  CliResult sub_help = run_cli({"train", "--help"});
  CHECK(sub_help.code == 0);
  CHECK(contains(sub_help.out, "--inducing"));

  CHECK(run_cli({"frobnicate"}).code == 2);
  CHECK(run_cli({"gen-single"}).code == 2);

  CliResult two = run_cli({"gen-single", "--grid", "4x4", "--out", tmp / "d.csv"});
  CHECK(two.code == 2);
  CHECK(contains(two.err, "--grid"));

  CliResult three = run_cli({"gen-single", "--grid", "4x4x3", "--out", tmp / "d.csv"});
  CHECK(three.code == 2);
  CHECK(contains(three.err, "five-level"));
  CHECK(contains(three.err, "4x4x5"));

  CliResult junk = run_cli({"gen-single", "--grid", "4xax5", "--out", tmp / "d.csv"});
  CHECK(junk.code == 2);

  CliResult fam = run_cli({"train", "--model", "gplvm", "--data", tmp / "nope.csv", "--out",
                           tmp / "m.json"});
  CHECK(fam.code == 2);
  CHECK(contains(fam.err, "unknown --model family \"gplvm\""));

  CliResult multi_level =
      run_cli({"gen-multi", "--grid", "3x3x5x4", "--out", tmp / "d.csv"});
  CHECK(multi_level.code == 2);
  CHECK(contains(multi_level.err, "3x3x5x5"));
}

TEST_CASE("gen-single writes the advertised grid") {
  TmpDir tmp("gen_single");
  const std::string path = tmp / "d.csv";

  CliResult r = run_cli({"gen-single", "--grid", "3x3x5", "--noise-sd", "0.1", "--seed", "1",
                         "--out", path});
  CHECK(r.code == 0);
  CHECK(r.err.empty());
  CHECK(contains(r.out, "gen-single grid=3x3x5"));
  CHECK(contains(r.out, "wrote 45 rows to " + path));

  Dataset d = read_dataset_csv(path);
  CHECK(d.n() == 45);
  CHECK(d.schema.p == 2);
  CHECK(d.schema.q == 1);
  CHECK(d.schema.levels == std::vector<int>{5});
  CHECK(d.n_outputs() == 1);
  CHECK(d.T(0, 0) == 1);
  CHECK(d.T(1, 0) == 2);

  const std::string again = tmp / "d2.csv";
  REQUIRE(run_cli({"gen-single", "--grid", "3x3x5", "--noise-sd", "0.1", "--seed", "1", "--out",
                   again})
              .code == 0);
  CHECK(slurp(path) == slurp(again));

  const std::string other = tmp / "d3.csv";
  REQUIRE(run_cli({"gen-single", "--grid", "3x3x5", "--noise-sd", "0.1", "--seed", "9", "--out",
                   other})
              .code == 0);
  CHECK(slurp(path) != slurp(other));
}

TEST_CASE("gen-multi writes two outputs") {
  TmpDir tmp("gen_multi");
  const std::string path = tmp / "dm.csv";

  CliResult r = run_cli({"gen-multi", "--grid", "2x2x5x5", "--out", path});
  CHECK(r.code == 0);
  CHECK(contains(r.out, "gen-multi grid=2x2x5x5"));
  CHECK(contains(r.out, "wrote 100 rows to " + path));

  Dataset d = read_dataset_csv(path);
  CHECK(d.n() == 100);
  CHECK(d.schema.q == 2);
  CHECK(d.n_outputs() == 2);
}

TEST_CASE("sv train, predict, roundtrip, and exports") {
  TmpDir tmp("sv_pipeline");
  const std::string data = tmp / "d.csv";
  const std::string model = tmp / "model.json";
  const std::string trace = tmp / "model.trace.csv";

  REQUIRE(run_cli({"gen-single", "--grid", "3x3x5", "--noise-sd", "0.1", "--seed", "1", "--out",
                   data})
              .code == 0);

  CliResult tr = run_cli({"train", "--model", "sv-lvgp", "--data", data, "--out", model,
                          "--inducing", "8", "--batch", "45", "--max-iters", "40",
                          "--no-convergence-check", "--seed", "2"});
  CHECK(tr.code == 0);
  CHECK(contains(tr.out, "trained sv on 45 rows"));
  CHECK(contains(tr.out, "(40 iterations)"));
  CHECK(contains(tr.out, "wrote " + model + " and " + trace));
  REQUIRE(fs::exists(model));
  REQUIRE(fs::exists(trace));

  ModelArtifact artifact = load_artifact(model);
  CHECK(artifact.family == "sv");
  CHECK(artifact.schema().p == 2);
  CHECK(artifact.n_outputs() == 1);

  const std::string pred = tmp / "pred.csv";
  CliResult pr = run_cli({"predict", "--model", model, "--queries", data, "--out", pred});
  CHECK(pr.code == 0);
  CHECK(contains(pr.out, "predicted 45 rows with sv model: wrote " + pred));
  auto rows = lines_of(slurp(pred));
  REQUIRE(rows.size() == 46);
  CHECK(rows[0] == "x_1,x_2,t_1,mean_1,var_1");
  auto cells = split_csv(rows[1]);
  REQUIRE(cells.size() == 5);
  const double mean = std::stod(cells[3]);
  const double var = std::stod(cells[4]);
  CHECK(std::isfinite(mean));
  CHECK(var > 0.0);

  CliResult rt = run_cli({"roundtrip", "--model", model});
  CHECK(rt.code == 0);
  CHECK(contains(rt.out, "round trip OK"));
  CHECK(contains(rt.out, "16 probe predictions bit-identical"));

  const std::string latent = tmp / "latent.csv";
  CliResult le = run_cli({"latent-export", "--model", model, "--out", latent});
  CHECK(le.code == 0);
  CHECK(contains(le.out, "wrote canonical latent space to " + latent));
  auto lat_rows = lines_of(slurp(latent));
  REQUIRE(lat_rows.size() == 6);
  CHECK(lat_rows[0] == "variable,level,label,copy,z_1,z_2");

  const std::string trace_out = tmp / "trace_export.csv";
  CliResult te = run_cli({"trace-export", "--model", model, "--out", trace_out});
  CHECK(te.code == 0);
  CHECK(contains(te.out, "wrote 40 trace rows to " + trace_out));
  auto tr_rows = lines_of(slurp(trace_out));
  REQUIRE(tr_rows.size() == 41);
  CHECK(tr_rows[0] == "iteration,elbo,kl,lt,seconds");

  const std::string custom_trace = tmp / "custom.csv";
  const std::string model2 = tmp / "model2.json";
  CliResult tr2 = run_cli({"train", "--model", "sv", "--data", data, "--out", model2,
                           "--trace", custom_trace, "--inducing", "8", "--batch", "45",
                           "--max-iters", "10", "--no-convergence-check", "--seed", "2"});
  CHECK(tr2.code == 0);
  CHECK(fs::exists(custom_trace));
  CHECK_FALSE(fs::exists(tmp / "model2.trace.csv"));
}

TEST_CASE("exact family trains and predicts") {
  TmpDir tmp("exact");
  const std::string data = tmp / "d.csv";
  const std::string model = tmp / "m.json";

  REQUIRE(run_cli({"gen-single", "--grid", "3x3x5", "--noise-sd", "0.1", "--seed", "1", "--out",
                   data})
              .code == 0);

  CliResult tr = run_cli({"train", "--model", "exact-lvgp", "--data", data, "--out", model,
                          "--restarts", "2", "--max-iters", "30", "--no-convergence-check",
                          "--seed", "3"});
  CHECK(tr.code == 0);
  CHECK(contains(tr.out, "trained exact on 45 rows"));
  CHECK(load_artifact(model).family == "exact");

  const std::string pred = tmp / "p.csv";
  CHECK(run_cli({"predict", "--model", model, "--queries", data, "--out", pred}).code == 0);
  auto rows = lines_of(slurp(pred));
  REQUIRE(rows.size() == 46);
  CHECK(rows[0] == "x_1,x_2,t_1,mean_1,var_1");

  CliResult rt = run_cli({"roundtrip", "--model", model});
  CHECK(rt.code == 0);
  CHECK(contains(rt.out, "round trip OK"));
}

TEST_CASE("lmc families handle two-output data") {
  TmpDir tmp("lmc");
  const std::string data = tmp / "dm.csv";
  const std::string model = tmp / "m.json";

  REQUIRE(run_cli({"gen-multi", "--grid", "2x2x5x5", "--noise-sd1", "0.05", "--noise-sd2",
                   "0.05", "--seed", "1", "--out", data})
              .code == 0);

  CliResult wrong = run_cli({"train", "--model", "sv-lvgp", "--data", data, "--out", model,
                             "--max-iters", "5"});
  CHECK(wrong.code == 3);
  CHECK(wrong.err.rfind("error[3]: ", 0) == 0);
  CHECK(contains(wrong.err, "use an lmc family"));

  CliResult tr = run_cli({"train", "--model", "lmc-sv-shared", "--data", data, "--out", model,
                          "--n-latent", "2", "--inducing", "8", "--batch", "50", "--max-iters",
                          "25", "--no-convergence-check", "--seed", "3"});
  CHECK(tr.code == 0);
  CHECK(contains(tr.out, "trained lmc-sv-shared on 100 rows"));
  CHECK(load_artifact(model).family == "lmc-sv-shared");

  const std::string pred = tmp / "p.csv";
  CliResult pr = run_cli({"predict", "--model", model, "--queries", data, "--out", pred});
  CHECK(pr.code == 0);
  auto rows = lines_of(slurp(pred));
  REQUIRE(rows.size() == 101);
  CHECK(rows[0] == "x_1,x_2,t_1,t_2,mean_1,var_1,mean_2,var_2");
  auto cells = split_csv(rows[1]);
  REQUIRE(cells.size() == 8);
  CHECK(std::isfinite(std::stod(cells[4])));
  CHECK(std::stod(cells[5]) > 0.0);
  CHECK(std::isfinite(std::stod(cells[6])));

  CliResult rt = run_cli({"roundtrip", "--model", model});
  CHECK(rt.code == 0);
  CHECK(contains(rt.out, "round trip OK"));

  const std::string latent = tmp / "latent.csv";
  CHECK(run_cli({"latent-export", "--model", model, "--out", latent}).code == 0);
  auto lat_rows = lines_of(slurp(latent));
  CHECK(lat_rows[0] == "variable,level,label,copy,z_1,z_2");
  REQUIRE(lat_rows.size() == 11);

  const std::string model_i = tmp / "mi.json";
  CliResult tri = run_cli({"train", "--model", "lmc-sv-lvgp-i", "--data", data, "--out",
                           model_i, "--n-latent", "2", "--inducing", "6",
                           "--per-function-inducing", "--batch", "50", "--max-iters", "15",
                           "--no-convergence-check", "--seed", "4"});
  CHECK(tri.code == 0);
  CHECK(contains(tri.out, "trained lmc-sv-independent on 100 rows"));
  CHECK(load_artifact(model_i).family == "lmc-sv-independent");
}

TEST_CASE("cv writes a fold report") {
  TmpDir tmp("cv");
  const std::string data = tmp / "d.csv";
  const std::string report = tmp / "cv.csv";

  REQUIRE(run_cli({"gen-single", "--grid", "3x3x5", "--noise-sd", "0.1", "--seed", "1", "--out",
                   data})
              .code == 0);

  CliResult r = run_cli({"cv", "--model", "sv-lvgp", "--data", data, "--folds", "3",
                         "--cv-seed", "4", "--out", report, "--inducing", "6", "--batch", "30",
                         "--max-iters", "25", "--no-convergence-check"});
  CHECK(r.code == 0);
  CHECK(contains(r.out, "3-fold cross-validation (seed 4)"));
  CHECK(contains(r.out, "wrote " + report));

  auto rows = lines_of(slurp(report));
  REQUIRE(rows.size() >= 6);
  CHECK(rows[0] == "fold,rmse_1,status");
  int ok_rows = 0;
  for (const auto& row : rows) {
    if (contains(row, ",ok")) ++ok_rows;
  }
  CHECK(ok_rows == 3);
  CHECK(contains(slurp(report), "mean,"));
  CHECK(contains(slurp(report), "sd,"));

  CHECK(run_cli({"cv", "--model", "sv-lvgp", "--data", data, "--folds", "1", "--out", report})
            .code == 3);
}

TEST_CASE("missing and malformed inputs exit with data errors") {
  TmpDir tmp("data_errors");

  CliResult no_data = run_cli({"train", "--model", "sv-lvgp", "--data", tmp / "missing.csv",
                               "--out", tmp / "m.json"});
  CHECK(no_data.code == 3);
  CHECK(no_data.err.rfind("error[3]: ", 0) == 0);

  const std::string bad_csv = tmp / "bad.csv";
  std::ofstream(bad_csv) << "x_1,t_1,y_1\n0.5,abc,1.0\n";
  CHECK(run_cli({"train", "--model", "sv-lvgp", "--data", bad_csv, "--out", tmp / "m.json"})
            .code == 3);

  CHECK(run_cli({"predict", "--model", tmp / "missing.json", "--queries", bad_csv, "--out",
                 tmp / "p.csv"})
            .code == 3);
  CHECK(run_cli({"roundtrip", "--model", tmp / "missing.json"}).code == 3);
}

TEST_CASE("artifact corruption is reported with context") {
  TmpDir tmp("corrupt");
  const std::string data = tmp / "d.csv";
  const std::string model = tmp / "m.json";
  const std::string pred = tmp / "p.csv";

  REQUIRE(run_cli({"gen-single", "--grid", "3x3x5", "--noise-sd", "0.1", "--seed", "1", "--out",
                   data})
              .code == 0);
  REQUIRE(run_cli({"train", "--model", "sv-lvgp", "--data", data, "--out", model, "--inducing",
                   "6", "--batch", "45", "--max-iters", "10", "--no-convergence-check",
                   "--seed", "2"})
              .code == 0);

  nlohmann::json good = nlohmann::json::parse(slurp(model));

  {
    nlohmann::json bad = good;
    bad["extra"] = 1;
    const std::string path = tmp / "unknown_field.json";
    std::ofstream(path) << bad.dump();
    CliResult r = run_cli({"predict", "--model", path, "--queries", data, "--out", pred});
    CHECK(r.code == 3);
    CHECK(contains(r.err, "unknown field \"extra\""));
  }
  {
    nlohmann::json bad = good;
    bad["format_version"] = 2;
    const std::string path = tmp / "version.json";
    std::ofstream(path) << bad.dump();
    CliResult r = run_cli({"predict", "--model", path, "--queries", data, "--out", pred});
    CHECK(r.code == 3);
    CHECK(contains(r.err, "unsupported format_version 2"));
  }
  {
    nlohmann::json bad = good;
    auto& diag = bad["model"]["variational"]["sigma_lower"][0][0];
    diag = -1.0;
    const std::string path = tmp / "negative_diag.json";
    std::ofstream(path) << bad.dump();
    CliResult r = run_cli({"predict", "--model", path, "--queries", data, "--out", pred});
    CHECK(r.code == 3);
    CHECK(contains(r.err, "covariance factor diagonal must be positive"));
  }
  {
    const std::string path = tmp / "not_json.json";
    std::ofstream(path) << "{nope";
    CliResult r = run_cli({"predict", "--model", path, "--queries", data, "--out", pred});
    CHECK(r.code == 3);
    CHECK(contains(r.err, "not valid JSON"));
  }

  const std::string narrow = tmp / "narrow.csv";
  std::ofstream(narrow) << "x_1,t_1\n0.5,1\n";
  CliResult shape = run_cli({"predict", "--model", model, "--queries", narrow, "--out", pred});
  CHECK(shape.code == 3);
  CHECK(contains(shape.err, "the model expects"));
}
