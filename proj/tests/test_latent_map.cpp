#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "svlvgp/latent_map.hpp"

using namespace svlvgp;

namespace {

MixedSchema schema_1_2() {
  MixedSchema s;
  s.p = 1;
  s.q = 2;
  s.levels = {3, 2};
  return s;
}

LatentMap map_for(const MixedSchema& schema, std::uint64_t seed, int g = 2,
                  LatentStructure structure = LatentStructure::Shared, int copies = 1) {
  SeededRng rng(seed);
  return LatentMap::random(schema, g, structure, copies, rng);
}

std::vector<double> pairwise_distances(const MatrixXd& block) {
  std::vector<double> d;
  for (int a = 0; a < block.rows(); ++a) {
    for (int b = a + 1; b < block.rows(); ++b) {
      d.push_back((block.row(a) - block.row(b)).norm());
    }
  }
  return d;
}

}  // namespace

TEST_CASE("random maps have the declared shape and range") {
  const MixedSchema schema = schema_1_2();
  const LatentMap map = map_for(schema, 5);
  map.validate(schema);
  CHECK(map.copies() == 1);
  CHECK(map.vars() == 2);
  CHECK(map.z[0][0].rows() == 3);
  CHECK(map.z[0][1].rows() == 2);
  CHECK(map.encoded_width(schema) == 1 + 2 * 2);
  for (int j = 0; j < 2; ++j) {
    CHECK(map.z[0][j].cwiseAbs().maxCoeff() <= 0.5);
  }
  const LatentMap again = map_for(schema, 5);
  CHECK(map.z[0][0] == again.z[0][0]);
  CHECK(map.z[0][1] == again.z[0][1]);

  const LatentMap indep = map_for(schema, 5, 2, LatentStructure::Independent, 3);
  indep.validate(schema);
  CHECK(indep.copies() == 3);
  CHECK(indep.z[1][0] != indep.z[0][0]);
}

TEST_CASE("validate rejects malformed maps") {
  const MixedSchema schema = schema_1_2();
  LatentMap map = map_for(schema, 1);

  LatentMap bad = map;
  bad.z[0].pop_back();
  CHECK_THROWS_AS(bad.validate(schema), DataError);

  bad = map;
  bad.z[0][0].conservativeResize(2, 2);
  CHECK_THROWS_AS(bad.validate(schema), DataError);

  bad = map;
  bad.z[0][1](0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bad.validate(schema), NonFinite);

  bad = map;
  bad.z.push_back(bad.z[0]);  // two copies under Shared structure
  CHECK_THROWS_AS(bad.validate(schema), DataError);
}

TEST_CASE("encoding splices latent vectors after the quantitative block") {
  const MixedSchema schema = schema_1_2();
  LatentMap map = map_for(schema, 9);
  MatrixXd X(2, 1);
  X << 0.7, -1.2;
  MatrixXi T(2, 2);
  T << 2, 1, 3, 2;
  const MatrixXd S = encode_rows(X, T, schema, map, 0);
  CHECK(S.rows() == 2);
  CHECK(S.cols() == 5);
  CHECK(S(0, 0) == 0.7);
  CHECK(S(0, 1) == map.z[0][0](1, 0));
  CHECK(S(0, 2) == map.z[0][0](1, 1));
  CHECK(S(0, 3) == map.z[0][1](0, 0));
  CHECK(S(0, 4) == map.z[0][1](0, 1));
  CHECK(S(1, 1) == map.z[0][0](2, 0));
  CHECK(S(1, 3) == map.z[0][1](1, 0));

  MixedPoint pt;
  pt.x = X.row(0).transpose();
  pt.t = {2, 1};
  const MatrixXd S1 = encode_points({pt}, schema, map, 0);
  CHECK(S1.row(0) == S.row(0));
}

TEST_CASE("levels outside the schema are rejected with their location") {
  const MixedSchema schema = schema_1_2();
  const LatentMap map = map_for(schema, 2);
  MatrixXd X(1, 1);
  X << 0.0;
  MatrixXi T(1, 2);
  T << 4, 1;
  CHECK_THROWS_WITH_AS(encode_rows(X, T, schema, map, 0),
                       "encode row 1: t_1=4 outside [1,3]", LevelOutOfRange);
  T << 1, 0;
  CHECK_THROWS_AS(encode_rows(X, T, schema, map, 0), LevelOutOfRange);
  CHECK_THROWS_AS(encode_rows(X, T, schema, map, 1), DimensionMismatch);
}

TEST_CASE("canonical form fixes translation, rotation, and reflection") {
  MixedSchema schema;
  schema.p = 0;
  schema.q = 1;
  schema.levels = {3};
  LatentMap map;
  map.g = 2;
  map.z = {{MatrixXd(3, 2)}};

  map.z[0][0] << 1, 1, 2, 1, 1.5, -1;
  LatentMap canon = canonicalize(map);
  CHECK(canon.z[0][0](0, 0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(canon.z[0][0](0, 1) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(canon.z[0][0](1, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(canon.z[0][0](1, 1) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(canon.z[0][0](2, 1) > 0.0);  // reflection leaves the third level above the axis

  map.z[0][0] << 0, 0, 0, 3, 1, 1;
  canon = canonicalize(map);
  CHECK(canon.z[0][0](1, 0) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(canon.z[0][0](1, 1) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("canonical form preserves pairwise distances") {
  MixedSchema schema;
  schema.p = 2;
  schema.q = 2;
  schema.levels = {4, 5};
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const LatentMap map = map_for(schema, seed);
    const LatentMap canon = canonicalize(map);
    for (int j = 0; j < 2; ++j) {
      const auto before = pairwise_distances(map.z[0][j]);
      const auto after = pairwise_distances(canon.z[0][j]);
      for (size_t k = 0; k < before.size(); ++k) {
        CHECK(after[k] == doctest::Approx(before[k]).epsilon(1e-12));
      }
      CHECK(canon.z[0][j].row(0).norm() < 1e-14);
    }
    // Re-canonicalizing is a no-op.
    const LatentMap twice = canonicalize(canon);
    CHECK((twice.z[0][0] - canon.z[0][0]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("canonical form leaves g != 2 and coincident anchors untouched") {
  MixedSchema schema;
  schema.p = 0;
  schema.q = 1;
  schema.levels = {2};
  LatentMap m3;
  m3.g = 3;
  m3.z = {{MatrixXd::Random(2, 3)}};
  const LatentMap c3 = canonicalize(m3);
  CHECK(c3.z[0][0] == m3.z[0][0]);

  LatentMap coincident;
  coincident.g = 2;
  coincident.z = {{MatrixXd(2, 2)}};
  coincident.z[0][0] << 0.4, 0.4, 0.4, 0.4;
  const LatentMap cc = canonicalize(coincident);
  CHECK(cc.z[0][0] == coincident.z[0][0]);
}

TEST_CASE("collinearity report on exactly collinear levels") {
  LatentMap map;
  map.g = 2;
  map.z = {{MatrixXd(3, 2)}};
  map.z[0][0] << 2, 0, 0, 0, 1, 0;
  const CollinearityReport rep = collinearity_report(map, 1, 0);
  CHECK(rep.explained_fraction == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(rep.ordering.size() == 3);
  CHECK(rep.ordering[0] == 1);
  CHECK(rep.ordering[1] == 3);
  CHECK(rep.ordering[2] == 2);
  CHECK(rep.ordering.front() < rep.ordering.back());

  // Mirroring the configuration cannot change the canonical ordering.
  LatentMap mirrored = map;
  mirrored.z[0][0] = -map.z[0][0];
  const CollinearityReport rep2 = collinearity_report(mirrored, 1, 0);
  CHECK(rep2.ordering == rep.ordering);
}

TEST_CASE("collinearity report on a square is exactly half explained") {
  LatentMap map;
  map.g = 2;
  map.z = {{MatrixXd(4, 2)}};
  map.z[0][0] << 0, 0, 1, 0, 0, 1, 1, 1;
  const CollinearityReport rep = collinearity_report(map, 1, 0);
  CHECK(rep.explained_fraction == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("latent csv lists every level with labels when present") {
  MixedSchema schema = schema_1_2();
  schema.level_labels = {{"lo", "mid", "hi"}, {"a", "b"}};
  const LatentMap map = map_for(schema, 3);
  const std::string path = "latent_map_test.csv";
  write_latent_csv(map, schema, path);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  CHECK(line == "variable,level,label,copy,z_1,z_2");
  int rows = 0;
  bool saw_mid = false;
  while (std::getline(in, line)) {
    ++rows;
    if (line.rfind("1,2,mid,1,", 0) == 0) saw_mid = true;
  }
  CHECK(rows == 5);
  CHECK(saw_mid);
  in.close();
  std::remove(path.c_str());
}
