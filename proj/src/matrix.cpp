#include "mmfusion/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "mmfusion/error.hpp"

namespace mmfusion {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match shape " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.data() + i * n;
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double s = a(i, p);
      if (s == 0.0) continue;
      const double* br = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += s * br[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: cannot multiply transpose of " + a.shape_string() + " by " +
                     b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* br = b.data() + r * n;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double s = a(r, i);
      if (s == 0.0) continue;
      double* o = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += s * br[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: cannot multiply " + a.shape_string() + " by transpose of " +
                     b.shape_string());
  }
  Matrix out(a.rows(), b.rows());
  const std::size_t inner = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.data() + i * inner;
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.data() + j * inner;
      double acc = 0.0;
      for (std::size_t p = 0; p < inner; ++p) acc += ar[p] * br[p];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

namespace {

template <typename F>
Matrix zip(const Matrix& a, const Matrix& b, const char* what, F f) {
  require_same_shape(a, b, what);
  Matrix out(a.rows(), a.cols());
  auto x = a.values();
  auto y = b.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  return out;
}

template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  auto x = a.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i]);
  return out;
}

}  // namespace

Matrix hadamard(const Matrix& a, const Matrix& b) {
  return zip(a, b, "hadamard", [](double x, double y) { return x * y; });
}

Matrix add(const Matrix& a, const Matrix& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  return zip(a, b, "subtract", [](double x, double y) { return x - y; });
}

Matrix scale(const Matrix& a, double s) {
  return map(a, [s](double x) { return x * s; });
}

void axpy(double s, const Matrix& a, Matrix& out) {
  require_same_shape(a, out, "axpy");
  auto x = a.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += s * x[i];
}

Matrix add_row_vector(const Matrix& a, const Matrix& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row_vector: " + row.shape_string() + " cannot broadcast over " +
                     a.shape_string());
  }
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) r[j] += row(0, j);
  }
  return out;
}

Matrix column_sums(const Matrix& a) {
  Matrix out(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += r[j];
  }
  return out;
}

double squared_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return s;
}

double sum(const Matrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return s;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

bool all_finite(const Matrix& a) {
  return std::all_of(a.values().begin(), a.values().end(),
                     [](double v) { return std::isfinite(v); });
}

Matrix hconcat(const Matrix& left, const Matrix& right) {
  if (left.rows() != right.rows()) {
    throw ShapeError("hconcat: batch mismatch " + left.shape_string() + " vs " +
                     right.shape_string());
  }
  Matrix out(left.rows(), left.cols() + right.cols());
  for (std::size_t i = 0; i < left.rows(); ++i) {
    auto o = out.row(i);
    std::copy(left.row(i).begin(), left.row(i).end(), o.begin());
    std::copy(right.row(i).begin(), right.row(i).end(), o.begin() + left.cols());
  }
  return out;
}

Matrix column_slice(const Matrix& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) throw ShapeError("column_slice out of range for " + a.shape_string());
  Matrix out(a.rows(), count);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    std::copy(r.begin() + begin, r.begin() + begin + count, out.row(i).begin());
  }
  return out;
}

Matrix row_slice(const Matrix& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) throw ShapeError("row_slice out of range for " + a.shape_string());
  std::vector<double> d(a.data() + begin * a.cols(), a.data() + (begin + count) * a.cols());
  return Matrix(count, a.cols(), std::move(d));
}

Matrix vstack(std::span<const Matrix> parts) {
  if (parts.empty()) return {};
  std::size_t rows = 0;
  const std::size_t cols = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("vstack: width mismatch");
    rows += p.rows();
  }
  std::vector<double> d;
  d.reserve(rows * cols);
  for (const auto& p : parts) d.insert(d.end(), p.values().begin(), p.values().end());
  return Matrix(rows, cols, std::move(d));
}

Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto o = out.row(i);
    const double m = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - m);
      total += o[j];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& x) {
  return map(x, [](double v) { return sigmoid(v); });
}

Matrix relu(const Matrix& x) {
  return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Matrix l2_normalize_rows(const Matrix& x, double eps) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    double ss = 0.0;
    for (double v : in) ss += v * v;
    const double denom = std::sqrt(ss + eps);
    auto o = out.row(i);
    if (denom == 0.0) continue;
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = in[j] / denom;
  }
  return out;
}

}  // namespace mmfusion
