#include "condlab/matrix.h"

#include <cmath>
#include <cstdlib>

#include "condlab/error.h"

namespace condlab {

Matrix::Matrix(int rows, int cols)
    : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, 0.0) {
  if (rows < 0 || cols < 0) throw DimensionError("matrix dimensions must be nonnegative");
}

Matrix::Matrix(int rows, int cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != static_cast<size_t>(rows) * cols)
    throw DimensionError("matrix data length does not match rows*cols");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = static_cast<int>(rows.size());
  cols_ = rows_ ? static_cast<int>(rows.begin()->size()) : 0;
  data_.reserve(static_cast<size_t>(rows_) * cols_);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != cols_) throw DimensionError("ragged initializer rows");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

namespace {

// Row dot with four independent accumulator chains; vector-friendly without
// changing results between runs (fixed association order).
inline double dot4(const double* a, const double* b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += a[k] * b[k];
    s1 += a[k + 1] * b[k + 1];
    s2 += a[k + 2] * b[k + 2];
    s3 += a[k + 3] * b[k + 3];
  }
  double s = (s0 + s1) + (s2 + s3);
  for (; k < n; ++k) s += a[k] * b[k];
  return s;
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions disagree");
  Matrix c(a.rows(), b.cols());
  const int k_dim = a.cols(), m = b.cols();
  for (int n = 0; n < a.rows(); ++n) {
    double* crow = c.row(n);
    const double* arow = a.row(n);
    for (int k = 0; k < k_dim; ++k) {
      const double s = arow[k];
      const double* brow = b.row(k);
      for (int j = 0; j < m; ++j) crow[j] += s * brow[j];
    }
  }
  return c;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_bt: inner dimensions disagree");
  Matrix c(a.rows(), b.rows());
  for (int n = 0; n < a.rows(); ++n) {
    double* crow = c.row(n);
    const double* arow = a.row(n);
    for (int m = 0; m < b.rows(); ++m) crow[m] = dot4(arow, b.row(m), a.cols());
  }
  return c;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("matmul_at: inner dimensions disagree");
  Matrix c(a.cols(), b.cols());
  const int m = b.cols(), k_dim = a.cols();
  for (int n = 0; n < a.rows(); ++n) {
    const double* arow = a.row(n);
    const double* brow = b.row(n);
    for (int k = 0; k < k_dim; ++k) {
      const double s = arow[k];
      double* crow = c.row(k);
      for (int j = 0; j < m; ++j) crow[j] += s * brow[j];
    }
  }
  return c;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("add: shape mismatch");
  Matrix c = a;
  for (size_t i = 0; i < c.data().size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("sub: shape mismatch");
  Matrix c = a;
  for (size_t i = 0; i < c.data().size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (double& v : c.data()) v *= s;
  return c;
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::fabs(v));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.data().size(); ++i)
    m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

bool has_nan(const Matrix& a) {
  for (double v : a.data())
    if (std::isnan(v)) return true;
  return false;
}

}  // namespace condlab
