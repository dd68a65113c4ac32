#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mmfusion {

// Dense row-major matrix of doubles. Batches are laid out batch-first
// (one sample per row).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v);
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_string() const;

  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
// out += s * a
void axpy(double s, const Matrix& a, Matrix& out);
// Adds a 1 x cols row vector to every row.
Matrix add_row_vector(const Matrix& a, const Matrix& row);
// 1 x cols column sums.
Matrix column_sums(const Matrix& a);
double squared_norm(const Matrix& a);
double sum(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& a);

// Horizontal concatenation and its inverse.
Matrix hconcat(const Matrix& left, const Matrix& right);
Matrix column_slice(const Matrix& a, std::size_t begin, std::size_t count);
Matrix row_slice(const Matrix& a, std::size_t begin, std::size_t count);
// Stacks equal-width matrices vertically.
Matrix vstack(std::span<const Matrix> parts);

Matrix softmax_rows(const Matrix& x);
Matrix sigmoid(const Matrix& x);
double sigmoid(double x);
Matrix relu(const Matrix& x);
Matrix l2_normalize_rows(const Matrix& x, double eps);

void require_same_shape(const Matrix& a, const Matrix& b, const char* what);

}  // namespace mmfusion
