#include "svlvgp/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace svlvgp {

void MixedSchema::validate() const {
  if (p < 0 || q < 0 || p + q < 1) {
    throw DataError("schema: need p >= 0, q >= 0, p+q >= 1");
  }
  if (static_cast<int>(levels.size()) != q) {
    throw DataError("schema: levels list length != q");
  }
  for (int j = 0; j < q; ++j) {
    if (levels[j] < 2) {
      throw DataError("schema: categorical variable " + std::to_string(j + 1) +
                      " needs >= 2 levels");
    }
  }
}

Normalization Normalization::identity(int p, int n_outputs) {
  Normalization z;
  z.x_mean = VectorXd::Zero(p);
  z.x_scale = VectorXd::Ones(p);
  z.y_mean = VectorXd::Zero(n_outputs);
  z.y_scale = VectorXd::Ones(n_outputs);
  return z;
}

Normalization Normalization::fit(const MatrixXd& X, const MatrixXd& Y) {
  auto column_stats = [](const MatrixXd& m, VectorXd& mean, VectorXd& scale) {
    const int cols = static_cast<int>(m.cols());
    mean.resize(cols);
    scale.resize(cols);
    for (int c = 0; c < cols; ++c) {
      mean(c) = m.col(c).mean();
      const double var = (m.col(c).array() - mean(c)).square().mean();
      const double sd = std::sqrt(var);
      scale(c) = sd > 1e-12 ? sd : 1.0;
    }
  };
  Normalization z;
  column_stats(X, z.x_mean, z.x_scale);
  column_stats(Y, z.y_mean, z.y_scale);
  return z;
}

bool Normalization::is_identity() const {
  return x_mean.isZero(0.0) && y_mean.isZero(0.0) &&
         (x_scale.array() == 1.0).all() && (y_scale.array() == 1.0).all();
}

MatrixXd Normalization::encode_x(const MatrixXd& X) const {
  return (X.rowwise() - x_mean.transpose()).array().rowwise() /
         x_scale.transpose().array();
}

MatrixXd Normalization::decode_x(const MatrixXd& X) const {
  return (X.array().rowwise() * x_scale.transpose().array()).matrix().rowwise() +
         x_mean.transpose();
}

MatrixXd Normalization::encode_y(const MatrixXd& Y) const {
  return (Y.rowwise() - y_mean.transpose()).array().rowwise() /
         y_scale.transpose().array();
}

MatrixXd Normalization::decode_y(const MatrixXd& Y) const {
  return (Y.array().rowwise() * y_scale.transpose().array()).matrix().rowwise() +
         y_mean.transpose();
}

MixedPoint Dataset::point(int i) const {
  MixedPoint pt;
  pt.x = X.row(i).transpose();
  pt.t.resize(schema.q);
  for (int j = 0; j < schema.q; ++j) pt.t[j] = T(i, j);
  return pt;
}

void Dataset::validate() const {
  schema.validate();
  const int rows = n();
  if (rows < 1) throw DataError("dataset: need n >= 1");
  if (X.rows() != rows || T.rows() != rows) {
    throw DataError("dataset: X/T/Y row counts disagree");
  }
  if (X.cols() != schema.p || T.cols() != schema.q) {
    throw DataError("dataset: X/T widths disagree with schema");
  }
  if (n_outputs() < 1) throw DataError("dataset: need >= 1 output");
  if (!X.allFinite() || !Y.allFinite()) {
    throw NonFinite("dataset: non-finite value in X or Y");
  }
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < schema.q; ++j) {
      if (T(i, j) < 1 || T(i, j) > schema.levels[j]) {
        throw LevelOutOfRange("dataset row " + std::to_string(i + 1) + ": t_" +
                              std::to_string(j + 1) + "=" + std::to_string(T(i, j)) +
                              " outside [1," + std::to_string(schema.levels[j]) + "]");
      }
    }
  }
}

Dataset Dataset::normalized() const {
  Dataset out = *this;
  out.norm = Normalization::fit(X, Y);
  out.X = out.norm.encode_x(X);
  out.Y = out.norm.encode_y(Y);
  return out;
}

Dataset Dataset::rows(const std::vector<int>& idx) const {
  Dataset out;
  out.schema = schema;
  out.norm = norm;
  const int m = static_cast<int>(idx.size());
  out.X.resize(m, X.cols());
  out.T.resize(m, T.cols());
  out.Y.resize(m, Y.cols());
  for (int i = 0; i < m; ++i) {
    out.X.row(i) = X.row(idx[i]);
    out.T.row(i) = T.row(idx[i]);
    out.Y.row(i) = Y.row(idx[i]);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void atomic_write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for write: " + tmp);
    out << text;
    if (!out.flush()) throw DataError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("rename to " + path + " failed: " + ec.message());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

// Parses headers of the form prefix_1..prefix_k starting at `pos`; returns k.
int count_block(const std::vector<std::string>& header, size_t& pos, const std::string& prefix) {
  int k = 0;
  while (pos < header.size()) {
    const std::string want = prefix + "_" + std::to_string(k + 1);
    if (header[pos] != want) break;
    ++k;
    ++pos;
  }
  return k;
}

double parse_double(const std::string& tok, int row, int col) {
  double v = 0.0;
  const char* begin = tok.data();
  const char* end = begin + tok.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw DataError("row " + std::to_string(row) + ", column " + std::to_string(col) +
                    ": not a number: '" + tok + "'");
  }
  return v;
}

int parse_level(const std::string& tok, int row, int col) {
  const double v = parse_double(tok, row, col);
  const double r = std::round(v);
  if (std::abs(v - r) > 1e-9 || r < 1 || r > 1e9) {
    throw DataError("row " + std::to_string(row) + ", column " + std::to_string(col) +
                    ": level must be a positive integer, got '" + tok + "'");
  }
  return static_cast<int>(r);
}

QueryTable read_table(const std::string& path, bool require_y) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  const auto header = split_csv_line(line);

  size_t pos = 0;
  const int p = count_block(header, pos, "x");
  const int q = count_block(header, pos, "t");
  const int n_op = count_block(header, pos, "y");
  if (pos != header.size()) {
    throw DataError(path + ": header must be x_1..x_p,t_1..t_q,y_1..y_N; unexpected column '" +
                    header[pos] + "'");
  }
  if (p + q < 1) throw DataError(path + ": no input columns in header");
  if (require_y && n_op < 1) throw DataError(path + ": no y columns in header");

  std::vector<double> xs, ys;
  std::vector<int> ts;
  int rows = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto toks = split_csv_line(line);
    if (static_cast<int>(toks.size()) != p + q + n_op) {
      throw DataError(path + ": row " + std::to_string(lineno) + " has " +
                      std::to_string(toks.size()) + " fields, expected " +
                      std::to_string(p + q + n_op));
    }
    int col = 1;
    for (int j = 0; j < p; ++j, ++col) xs.push_back(parse_double(toks[col - 1], lineno, col));
    for (int j = 0; j < q; ++j, ++col) ts.push_back(parse_level(toks[col - 1], lineno, col));
    for (int j = 0; j < n_op; ++j, ++col) ys.push_back(parse_double(toks[col - 1], lineno, col));
    ++rows;
  }
  if (rows < 1) throw DataError(path + ": no data rows");

  QueryTable t;
  t.schema.p = p;
  t.schema.q = q;
  t.X.resize(rows, p);
  t.T.resize(rows, q);
  t.Y.resize(rows, n_op);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < p; ++j) t.X(i, j) = xs[static_cast<size_t>(i) * p + j];
    for (int j = 0; j < q; ++j) t.T(i, j) = ts[static_cast<size_t>(i) * q + j];
    for (int j = 0; j < n_op; ++j) t.Y(i, j) = ys[static_cast<size_t>(i) * n_op + j];
  }
  t.schema.levels.resize(q);
  for (int j = 0; j < q; ++j) t.schema.levels[j] = t.T.col(j).maxCoeff();
  return t;
}

}  // namespace

Dataset read_dataset_csv(const std::string& path) {
  QueryTable t = read_table(path, true);
  Dataset d;
  d.schema = t.schema;
  d.X = std::move(t.X);
  d.T = std::move(t.T);
  d.Y = std::move(t.Y);
  d.norm = Normalization::identity(d.schema.p, d.n_outputs());
  d.validate();
  return d;
}

QueryTable read_query_csv(const std::string& path) { return read_table(path, false); }

void write_dataset_csv(const Dataset& d, const std::string& path) {
  std::string out;
  out.reserve(static_cast<size_t>(d.n()) * 32);
  for (int j = 0; j < d.schema.p; ++j) {
    if (j) out += ',';
    out += "x_" + std::to_string(j + 1);
  }
  for (int j = 0; j < d.schema.q; ++j) {
    if (d.schema.p || j) out += ',';
    out += "t_" + std::to_string(j + 1);
  }
  for (int j = 0; j < d.n_outputs(); ++j) {
    out += ",y_" + std::to_string(j + 1);
  }
  out += '\n';
  for (int i = 0; i < d.n(); ++i) {
    for (int j = 0; j < d.schema.p; ++j) {
      if (j) out += ',';
      out += format_double(d.X(i, j));
    }
    for (int j = 0; j < d.schema.q; ++j) {
      if (d.schema.p || j) out += ',';
      out += std::to_string(d.T(i, j));
    }
    for (int j = 0; j < d.n_outputs(); ++j) {
      out += ',';
      out += format_double(d.Y(i, j));
    }
    out += '\n';
  }
  atomic_write_text(path, out);
}

}  // namespace svlvgp
