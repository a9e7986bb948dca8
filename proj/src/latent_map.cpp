#include "svlvgp/latent_map.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace svlvgp {

LatentMap LatentMap::random(const MixedSchema& schema, int g, LatentStructure structure,
                            int copies, SeededRng& rng) {
  LatentMap map;
  map.g = g;
  map.structure = structure;
  map.z.resize(copies);
  for (int l = 0; l < copies; ++l) {
    map.z[l].resize(schema.q);
    for (int j = 0; j < schema.q; ++j) {
      MatrixXd& block = map.z[l][j];
      block.resize(schema.levels[j], g);
      for (int c = 0; c < block.rows(); ++c) {
        for (int d = 0; d < g; ++d) block(c, d) = rng.uniform(-0.5, 0.5);
      }
    }
  }
  return map;
}

void LatentMap::validate(const MixedSchema& schema) const {
  if (g < 1) throw DataError("latent map: g must be >= 1");
  if (structure == LatentStructure::Shared && copies() != 1) {
    throw DataError("latent map: Shared structure must store exactly one copy");
  }
  for (const auto& copy : z) {
    if (static_cast<int>(copy.size()) != schema.q) {
      throw DataError("latent map: copy has wrong variable count");
    }
    for (int j = 0; j < schema.q; ++j) {
      if (copy[j].rows() != schema.levels[j] || copy[j].cols() != g) {
        throw DataError("latent map: block shape mismatch for variable " + std::to_string(j + 1));
      }
      if (!copy[j].allFinite()) throw NonFinite("latent map: non-finite latent vector");
    }
  }
}

MatrixXd encode_rows(const MatrixXd& X, const MatrixXi& T, const MixedSchema& schema,
                     const LatentMap& map, int copy) {
  if (copy < 0 || copy >= map.copies()) {
    throw DimensionMismatch("encode: copy index " + std::to_string(copy) + " out of range");
  }
  if (X.cols() != schema.p || T.cols() != schema.q || X.rows() != T.rows()) {
    throw DimensionMismatch("encode: input widths disagree with schema");
  }
  const int n = static_cast<int>(X.rows());
  const int g = map.g;
  MatrixXd S(n, map.encoded_width(schema));
  S.leftCols(schema.p) = X;
  for (int j = 0; j < schema.q; ++j) {
    const MatrixXd& block = map.z[copy][j];
    for (int i = 0; i < n; ++i) {
      const int level = T(i, j);
      if (level < 1 || level > schema.levels[j]) {
        throw LevelOutOfRange("encode row " + std::to_string(i + 1) + ": t_" +
                              std::to_string(j + 1) + "=" + std::to_string(level) +
                              " outside [1," + std::to_string(schema.levels[j]) + "]");
      }
      S.block(i, schema.p + j * g, 1, g) = block.row(level - 1);
    }
  }
  return S;
}

MatrixXd encode_points(const std::vector<MixedPoint>& points, const MixedSchema& schema,
                       const LatentMap& map, int copy) {
  const int n = static_cast<int>(points.size());
  MatrixXd X(n, schema.p);
  MatrixXi T(n, schema.q);
  for (int i = 0; i < n; ++i) {
    if (points[i].x.size() != schema.p || static_cast<int>(points[i].t.size()) != schema.q) {
      throw DimensionMismatch("encode: point " + std::to_string(i + 1) + " width mismatch");
    }
    X.row(i) = points[i].x.transpose();
    for (int j = 0; j < schema.q; ++j) T(i, j) = points[i].t[j];
  }
  return encode_rows(X, T, schema, map, copy);
}

LatentMap canonicalize(const LatentMap& map) {
  LatentMap out = map;
  if (map.g != 2) return out;
  for (auto& copy : out.z) {
    for (MatrixXd& block : copy) {
      if (block.rows() < 2) continue;
      const Eigen::RowVector2d origin = block.row(0);
      Eigen::RowVector2d axis = block.row(1) - origin;
      const double norm = axis.norm();
      if (norm <= 1e-12) continue;  // coincident first levels: leave untouched
      const double c = axis(0) / norm;
      const double s = axis(1) / norm;
      for (int r = 0; r < block.rows(); ++r) {
        const Eigen::RowVector2d v = block.row(r) - origin;
        block(r, 0) = c * v(0) + s * v(1);
        block(r, 1) = -s * v(0) + c * v(1);
      }
      for (int r = 2; r < block.rows(); ++r) {
        if (std::abs(block(r, 1)) > 1e-12) {
          if (block(r, 1) < 0.0) block.col(1) = -block.col(1);
          break;
        }
      }
    }
  }
  return out;
}

CollinearityReport collinearity_report(const LatentMap& map, int variable, int copy) {
  const MatrixXd& block = map.z.at(copy).at(variable - 1);
  const int l = static_cast<int>(block.rows());
  const MatrixXd centered = block.rowwise() - block.colwise().mean();
  Eigen::JacobiSVD<MatrixXd> svd(centered, Eigen::ComputeThinV);
  const VectorXd sv = svd.singularValues();
  const double total = sv.array().square().sum();

  CollinearityReport rep;
  // A single cluster of coincident points is trivially collinear.
  rep.explained_fraction = total > 1e-24 ? sv(0) * sv(0) / total : 1.0;

  VectorXd proj = centered * svd.matrixV().col(0);
  std::vector<int> order(l);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return proj(a) < proj(b); });
  if (order.front() > order.back()) {
    std::reverse(order.begin(), order.end());
    rep.flipped = true;
  }
  rep.ordering.resize(l);
  for (int i = 0; i < l; ++i) rep.ordering[i] = order[i] + 1;
  return rep;
}

void write_latent_csv(const LatentMap& map, const MixedSchema& schema, const std::string& path) {
  std::string out = "variable,level,label,copy";
  for (int d = 0; d < map.g; ++d) out += ",z_" + std::to_string(d + 1);
  out += '\n';
  for (int l = 0; l < map.copies(); ++l) {
    for (int j = 0; j < schema.q; ++j) {
      const MatrixXd& block = map.z[l][j];
      for (int c = 0; c < block.rows(); ++c) {
        out += std::to_string(j + 1) + ',' + std::to_string(c + 1) + ',';
        if (j < static_cast<int>(schema.level_labels.size()) &&
            c < static_cast<int>(schema.level_labels[j].size())) {
          out += schema.level_labels[j][c];
        }
        out += ',' + std::to_string(l + 1);
        for (int d = 0; d < map.g; ++d) out += ',' + format_double(block(c, d));
        out += '\n';
      }
    }
  }
  atomic_write_text(path, out);
}

}  // namespace svlvgp
