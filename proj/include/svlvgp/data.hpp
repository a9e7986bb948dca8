#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "svlvgp/errors.hpp"

namespace svlvgp {

using Eigen::MatrixXd;
using Eigen::MatrixXi;
using Eigen::VectorXd;

// Shape of a mixed quantitative/qualitative input space: p quantitative
// coordinates followed by q categorical variables with levels[j] levels each.
// Level indices are 1-based externally, 0-based in internal storage.
struct MixedSchema {
  int p = 0;
  int q = 0;
  std::vector<int> levels;
  std::vector<std::vector<std::string>> level_labels;  // optional, per variable

  void validate() const;
  bool operator==(const MixedSchema& o) const {
    return p == o.p && q == o.q && levels == o.levels;
  }
};

struct MixedPoint {
  VectorXd x;
  std::vector<int> t;  // 1-based levels
};

// Per-column affine transform between original and stored units.
// stored = (orig - mean) / scale. Identity means raw data.
struct Normalization {
  VectorXd x_mean, x_scale;
  VectorXd y_mean, y_scale;

  static Normalization identity(int p, int n_outputs);
  // z-score parameters; columns with (near) zero spread keep scale 1.
  static Normalization fit(const MatrixXd& X, const MatrixXd& Y);

  bool is_identity() const;
  MatrixXd encode_x(const MatrixXd& X) const;
  MatrixXd decode_x(const MatrixXd& X) const;
  MatrixXd encode_y(const MatrixXd& Y) const;
  MatrixXd decode_y(const MatrixXd& Y) const;
  // Decodes predictive variances of output column o (scale^2 factor).
  double y_var_factor(int o) const { return y_scale(o) * y_scale(o); }
};

struct Dataset {
  MixedSchema schema;
  MatrixXd X;  // n x p
  MatrixXi T;  // n x q, 1-based levels
  MatrixXd Y;  // n x n_outputs
  Normalization norm;  // transform from original units to the stored values

  int n() const { return static_cast<int>(Y.rows()); }
  int n_outputs() const { return static_cast<int>(Y.cols()); }
  MixedPoint point(int i) const;
  void validate() const;

  // Copy with z-scored X and Y and the transform recorded in `norm`.
  Dataset normalized() const;
  Dataset rows(const std::vector<int>& idx) const;
};

// CSV with header x_1..x_p, t_1..t_q, y_1..y_Nop. Levels are inferred from
// the categorical columns (max observed level). Parse failures report the
// 1-based row and column.
Dataset read_dataset_csv(const std::string& path);

// Same format, but the y block may be absent (queries).
struct QueryTable {
  MixedSchema schema;  // levels from observed maxima
  MatrixXd X;
  MatrixXi T;
  MatrixXd Y;  // 0 columns when absent
};
QueryTable read_query_csv(const std::string& path);

void write_dataset_csv(const Dataset& d, const std::string& path);

// Shortest round-trip decimal text for a double.
std::string format_double(double v);

// Writes via temp file + rename so readers never see a partial file.
void atomic_write_text(const std::string& path, const std::string& text);

}  // namespace svlvgp
