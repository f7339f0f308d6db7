#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <vector>

namespace ngmfit {

/// Dense row-major matrix of doubles. Everything in this project is small
/// (design matrices are tall but have at most m*m columns), so the routines
/// below favour clarity over blocking or vectorisation.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    if (rows.size() == 0) return Matrix();
    Matrix m(rows.size(), rows.begin()->size());
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != m.cols_) throw std::invalid_argument("Matrix: ragged initializer");
      std::size_t j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }
  bool empty() const { return data_.empty(); }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  Matrix scaled(double c) const {
    Matrix out = *this;
    for (double& v : out.data_) v *= c;
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

inline std::vector<double> matvec(const Matrix& a, const std::vector<double>& x) {
  if (a.cols() != x.size()) throw std::invalid_argument("matvec: dimension mismatch");
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: dimension mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// X^T X without forming the transpose.
inline Matrix gram(const Matrix& x) {
  Matrix g(x.cols(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t i = 0; i < x.cols(); ++i) {
      double xi = x(r, i);
      if (xi == 0.0) continue;
      for (std::size_t j = i; j < x.cols(); ++j) g(i, j) += xi * x(r, j);
    }
  for (std::size_t i = 0; i < x.cols(); ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  return g;
}

/// Determinant by LU with partial pivoting. Intended for small matrices.
inline double determinant(Matrix a) {
  if (!a.square()) throw std::invalid_argument("determinant: matrix not square");
  const std::size_t n = a.rows();
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    if (a(piv, k) == 0.0) return 0.0;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      det = -det;
    }
    det *= a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      double f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return det;
}

/// Least-squares solution of min ||b - A x|| via in-place Householder QR.
/// Requires rows >= cols and full column rank; rank checks belong to the
/// caller (see solve_direct), this only guards against division blowup.
inline std::vector<double> solve_least_squares(Matrix a, std::vector<double> b) {
  const std::size_t n = a.rows(), p = a.cols();
  if (b.size() != n) throw std::invalid_argument("solve_least_squares: rhs size mismatch");
  if (n < p) throw std::invalid_argument("solve_least_squares: underdetermined system");

  // Column scale for the rank guard: proportional columns reduce to rounding
  // noise during elimination, so the cutoff has to be relative.
  double col_scale = 0.0;
  for (std::size_t k = 0; k < p; ++k) {
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += a(i, k) * a(i, k);
    col_scale = std::max(col_scale, std::sqrt(norm));
  }

  for (std::size_t k = 0; k < p; ++k) {
    double norm = 0.0;
    for (std::size_t i = k; i < n; ++i) norm += a(i, k) * a(i, k);
    norm = std::sqrt(norm);
    if (norm <= 1e-13 * col_scale)
      throw std::runtime_error("solve_least_squares: rank-deficient column");
    double alpha = (a(k, k) > 0.0) ? -norm : norm;
    // Householder vector v, stored below the diagonal; v_k implied.
    double vk = a(k, k) - alpha;
    a(k, k) = alpha;
    double vnorm2 = vk * vk;
    for (std::size_t i = k + 1; i < n; ++i) vnorm2 += a(i, k) * a(i, k);
    if (vnorm2 == 0.0) continue;
    for (std::size_t j = k + 1; j < p; ++j) {
      double dot = vk * a(k, j);
      for (std::size_t i = k + 1; i < n; ++i) dot += a(i, k) * a(i, j);
      double f = 2.0 * dot / vnorm2;
      a(k, j) -= f * vk;
      for (std::size_t i = k + 1; i < n; ++i) a(i, j) -= f * a(i, k);
    }
    double dot = vk * b[k];
    for (std::size_t i = k + 1; i < n; ++i) dot += a(i, k) * b[i];
    double f = 2.0 * dot / vnorm2;
    b[k] -= f * vk;
    for (std::size_t i = k + 1; i < n; ++i) b[i] -= f * a(i, k);
  }

  std::vector<double> x(p, 0.0);
  for (std::size_t k = p; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < p; ++j) s -= a(k, j) * x[j];
    if (a(k, k) == 0.0) throw std::runtime_error("solve_least_squares: zero pivot");
    x[k] = s / a(k, k);
  }
  return x;
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
inline std::vector<double> symmetric_eigenvalues(Matrix a, double tol = 1e-13) {
  if (!a.square()) throw std::invalid_argument("symmetric_eigenvalues: matrix not square");
  const std::size_t n = a.rows();
  if (n == 0) return {};
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(a(i, j)));
  if (scale == 0.0) return std::vector<double>(n, 0.0);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (std::sqrt(off) <= tol * scale * n) break;
    for (std::size_t p = 0; p < n - 1; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) <= tol * scale * 1e-3) continue;
        double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

/// Dominant-eigenvalue magnitude of a nonnegative matrix by power iteration.
/// A positive diagonal shift makes the iteration converge even for periodic
/// patterns (e.g. pure cross-transmission); the shift is removed at the end.
inline double power_iteration_radius(const Matrix& a, double tol = 1e-12,
                                     int max_iter = 100000) {
  if (!a.square()) throw std::invalid_argument("power_iteration_radius: matrix not square");
  const std::size_t n = a.rows();
  double maxabs = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) maxabs = std::max(maxabs, std::abs(a(i, j)));
  if (maxabs == 0.0) return 0.0;
  const double shift = maxabs;

  std::vector<double> x(n, 1.0), y(n, 0.0);
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = shift * x[i];
      for (std::size_t j = 0; j < n; ++j) s += a(i, j) * x[j];
      y[i] = s;
    }
    double norm = 0.0;
    for (double v : y) norm = std::max(norm, std::abs(v));
    if (norm == 0.0) return 0.0;
    double prev = lambda;
    lambda = norm;
    for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / norm;
    if (it > 0 && std::abs(lambda - prev) <= tol * std::max(1.0, lambda)) break;
  }
  return lambda - shift;
}

}  // namespace ngmfit
