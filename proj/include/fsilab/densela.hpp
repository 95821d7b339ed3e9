#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "fsilab/errors.hpp"

// Minimal dense linear algebra used by the interface accelerators: real
// vectors, column-major matrices, Householder QR, and least-squares solves.
// Interfaces here are small (m up to a few hundred, k up to a few tens), so
// everything is plain loops with a deterministic evaluation order.

namespace fsilab {

inline void check_finite(double v, const char* context) {
  if (!std::isfinite(v)) {
    throw NonFiniteError(std::string(context) + ": non-finite entry");
  }
}

class Vector {
public:
  Vector() = default;

  explicit Vector(std::size_t m, double fill = 0.0) : e_(m, fill) {
    check_finite(fill, "Vector");
  }

  Vector(std::initializer_list<double> values) : e_(values) { validate(); }

  static Vector from(std::vector<double> values) {
    Vector v;
    v.e_ = std::move(values);
    v.validate();
    return v;
  }

  std::size_t size() const { return e_.size(); }
  bool empty() const { return e_.empty(); }

  double& operator[](std::size_t i) { return e_[i]; }
  double operator[](std::size_t i) const { return e_[i]; }

  const std::vector<double>& data() const { return e_; }

  void validate() const {
    for (double v : e_) check_finite(v, "Vector");
  }

  double norm2() const {
    double s = 0.0;
    for (double v : e_) s += v * v;
    return std::sqrt(s);
  }

  Vector& operator+=(const Vector& rhs) {
    require_same_size(rhs, "operator+=");
    for (std::size_t i = 0; i < e_.size(); ++i) e_[i] += rhs.e_[i];
    return *this;
  }

  Vector& operator-=(const Vector& rhs) {
    require_same_size(rhs, "operator-=");
    for (std::size_t i = 0; i < e_.size(); ++i) e_[i] -= rhs.e_[i];
    return *this;
  }

  Vector& operator*=(double s) {
    for (double& v : e_) v *= s;
    return *this;
  }

  friend Vector operator+(Vector lhs, const Vector& rhs) { return lhs += rhs; }
  friend Vector operator-(Vector lhs, const Vector& rhs) { return lhs -= rhs; }
  friend Vector operator*(double s, Vector v) { return v *= s; }

  friend bool operator==(const Vector& a, const Vector& b) { return a.e_ == b.e_; }

  friend double dot(const Vector& a, const Vector& b) {
    a.require_same_size(b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.e_.size(); ++i) s += a.e_[i] * b.e_[i];
    return s;
  }

private:
  void require_same_size(const Vector& rhs, const char* op) const {
    if (e_.size() != rhs.e_.size()) {
      throw DimensionError(std::string(op) + ": size " + std::to_string(e_.size()) +
                           " vs " + std::to_string(rhs.e_.size()));
    }
  }

  std::vector<double> e_;
};

/// Column-major dense matrix.
class Matrix {
public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), e_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i) a(i, i) = 1.0;
    return a;
  }

  static Matrix from_columns(const std::vector<Vector>& cols) {
    if (cols.empty()) return Matrix();
    Matrix a(cols.front().size(), cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (cols[j].size() != a.rows_) throw DimensionError("from_columns: ragged columns");
      for (std::size_t i = 0; i < a.rows_; ++i) a(i, j) = cols[j][i];
    }
    return a;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return e_[j * rows_ + i]; }
  double operator()(std::size_t i, std::size_t j) const { return e_[j * rows_ + i]; }

  Vector column(std::size_t j) const {
    Vector c(rows_);
    for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
    return c;
  }

  void set_column(std::size_t j, const Vector& c) {
    if (c.size() != rows_) throw DimensionError("set_column: wrong length");
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = c[i];
  }

  void validate() const {
    for (double v : e_) check_finite(v, "Matrix");
  }

  /// A * x
  Vector apply(const Vector& x) const {
    if (x.size() != cols_) throw DimensionError("Matrix::apply: dimension mismatch");
    Vector y(rows_);
    for (std::size_t j = 0; j < cols_; ++j) {
      const double xj = x[j];
      for (std::size_t i = 0; i < rows_; ++i) y[i] += (*this)(i, j) * xj;
    }
    return y;
  }

  /// A^T * x
  Vector apply_transpose(const Vector& x) const {
    if (x.size() != rows_) throw DimensionError("Matrix::apply_transpose: dimension mismatch");
    Vector y(cols_);
    for (std::size_t j = 0; j < cols_; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < rows_; ++i) s += (*this)(i, j) * x[i];
      y[j] = s;
    }
    return y;
  }

  double frobenius() const {
    double s = 0.0;
    for (double v : e_) s += v * v;
    return std::sqrt(s);
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.e_ == b.e_;
  }

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> e_;
};

/// Packed Householder factorization of an m x k matrix, m >= k >= 1.
/// R sits in the upper triangle of `packed`; reflector tails below it.
class HouseholderQr {
public:
  HouseholderQr(Matrix packed, std::vector<double> tau)
      : packed_(std::move(packed)), tau_(std::move(tau)) {}

  std::size_t rows() const { return packed_.rows(); }
  std::size_t cols() const { return packed_.cols(); }

  /// Q^T v, length m in and out.
  Vector apply_qt(Vector v) const {
    if (v.size() != rows()) throw DimensionError("apply_qt: wrong length");
    for (std::size_t j = 0; j < cols(); ++j) reflect(v, j);
    return v;
  }

  /// Q v, length m in and out.
  Vector apply_q(Vector v) const {
    if (v.size() != rows()) throw DimensionError("apply_q: wrong length");
    for (std::size_t j = cols(); j-- > 0;) reflect(v, j);
    return v;
  }

  Vector r_diagonal() const {
    Vector d(cols());
    for (std::size_t j = 0; j < cols(); ++j) d[j] = packed_(j, j);
    return d;
  }

  /// The k x k upper-triangular factor.
  Matrix r_upper() const {
    Matrix r(cols(), cols());
    for (std::size_t j = 0; j < cols(); ++j)
      for (std::size_t i = 0; i <= j; ++i) r(i, j) = packed_(i, j);
    return r;
  }

  /// Solves R y = c[0..k) by back substitution.
  Vector solve_upper(const Vector& c, double rank_tol) const {
    const std::size_t k = cols();
    double max_diag = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      max_diag = std::max(max_diag, std::abs(packed_(j, j)));
    Vector y(k);
    for (std::size_t jj = k; jj-- > 0;) {
      const double d = packed_(jj, jj);
      if (std::abs(d) <= rank_tol * max_diag || d == 0.0) {
        throw RankDeficient("solve_upper: R diagonal " + std::to_string(jj) +
                            " below tolerance");
      }
      double s = c[jj];
      for (std::size_t j = jj + 1; j < k; ++j) s -= packed_(jj, j) * y[j];
      y[jj] = s / d;
    }
    return y;
  }

private:
  // Applies reflector j: v -= tau_j * (w_j^T v) * w_j with w_j = [1; tail_j].
  void reflect(Vector& v, std::size_t j) const {
    const double t = tau_[j];
    if (t == 0.0) return;
    double w = v[j];
    for (std::size_t i = j + 1; i < rows(); ++i) w += packed_(i, j) * v[i];
    w *= t;
    v[j] -= w;
    for (std::size_t i = j + 1; i < rows(); ++i) v[i] -= w * packed_(i, j);
  }

  Matrix packed_;
  std::vector<double> tau_;
};

/// Householder QR of an m x k matrix with m >= k >= 1.
inline HouseholderQr householder_qr(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  if (k == 0 || k > m) {
    throw DimensionError("householder_qr: need m >= k >= 1, got " + std::to_string(m) +
                         " x " + std::to_string(k));
  }
  a.validate();

  Matrix packed = a;
  std::vector<double> tau(k, 0.0);

  for (std::size_t j = 0; j < k; ++j) {
    double normx = 0.0;
    for (std::size_t i = j; i < m; ++i) normx += packed(i, j) * packed(i, j);
    normx = std::sqrt(normx);
    if (normx == 0.0) {
      tau[j] = 0.0;  // zero column below the diagonal; diagonal stays 0
      continue;
    }
    const double alpha = packed(j, j);
    const double beta = alpha >= 0.0 ? -normx : normx;
    tau[j] = (beta - alpha) / beta;
    const double scale = 1.0 / (alpha - beta);
    for (std::size_t i = j + 1; i < m; ++i) packed(i, j) *= scale;
    packed(j, j) = beta;

    for (std::size_t c = j + 1; c < k; ++c) {
      double w = packed(j, c);
      for (std::size_t i = j + 1; i < m; ++i) w += packed(i, j) * packed(i, c);
      w *= tau[j];
      packed(j, c) -= w;
      for (std::size_t i = j + 1; i < m; ++i) packed(i, c) -= w * packed(i, j);
    }
  }
  return HouseholderQr(std::move(packed), std::move(tau));
}

/// Minimizes ||A x - b||_2 for A of size m x k, m >= k >= 1.
/// Raises RankDeficient when an R diagonal falls below rank_tol * max |diag R|.
inline Vector lstsq(const Matrix& a, const Vector& b, double rank_tol = 1e-14) {
  if (b.size() != a.rows()) throw DimensionError("lstsq: rhs length mismatch");
  b.validate();
  const HouseholderQr qr = householder_qr(a);
  const Vector c = qr.apply_qt(b);
  return qr.solve_upper(c, rank_tol);
}

}  // namespace fsilab
