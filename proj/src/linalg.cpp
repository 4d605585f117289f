#include "piu/linalg.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "piu/kernels.hpp"

namespace piu {

void matvec_t(const double* m, int rows, int cols, const double* x, double* y) {
  std::memset(y, 0, sizeof(double) * static_cast<std::size_t>(cols));
  for (int r = 0; r < rows; ++r)
    kernels::axpy(x[r], m + static_cast<std::size_t>(r) * cols, y,
                  static_cast<std::size_t>(cols));
}

void matvec(const double* m, int rows, int cols, const double* x, double* y) {
  for (int r = 0; r < rows; ++r)
    y[r] = kernels::dot(m + static_cast<std::size_t>(r) * cols, x,
                        static_cast<std::size_t>(cols));
}

void add_outer(double* m, int rows, int cols, const double* x, const double* y) {
  for (int r = 0; r < rows; ++r)
    kernels::axpy(x[r], y, m + static_cast<std::size_t>(r) * cols,
                  static_cast<std::size_t>(cols));
}

void matvec_t(const Mat& m, const double* x, double* y) {
  matvec_t(m.a.data(), m.rows, m.cols, x, y);
}

void matvec(const Mat& m, const double* x, double* y) {
  matvec(m.a.data(), m.rows, m.cols, x, y);
}

void add_outer(Mat& m, const double* x, const double* y) {
  add_outer(m.a.data(), m.rows, m.cols, x, y);
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: shape mismatch");
  Mat c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < a.cols; ++k)
      kernels::axpy(a.at(i, k), b.row(k), c.row(i),
                    static_cast<std::size_t>(b.cols));
  return c;
}

Mat transpose(const Mat& m) {
  Mat t(m.cols, m.rows);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) t.at(c, r) = m.at(r, c);
  return t;
}

double frob_norm(const Mat& m) {
  return std::sqrt(kernels::sum_sq(m.a.data(), m.a.size()));
}

double norm2(const Vec& v) {
  return std::sqrt(kernels::sum_sq(v.data(), v.size()));
}

void normalize_in_place(Vec& v) {
  double n = norm2(v);
  if (n == 0.0) throw std::invalid_argument("cannot normalize a zero vector");
  for (auto& x : v) x /= n;
}

Lu lu_factor(Mat a) {
  if (a.rows != a.cols) throw std::invalid_argument("lu_factor: square matrix required");
  const int n = a.rows;
  Lu f;
  f.piv.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    int p = k;
    double best = std::fabs(a.at(k, k));
    for (int r = k + 1; r < n; ++r) {
      double cand = std::fabs(a.at(r, k));
      if (cand > best) {
        best = cand;
        p = r;
      }
    }
    f.piv[static_cast<std::size_t>(k)] = p;
    if (best == 0.0) {
      f.singular = true;
      f.lu = std::move(a);
      return f;
    }
    if (p != k)
      for (int c = 0; c < n; ++c) std::swap(a.at(k, c), a.at(p, c));
    const double inv = 1.0 / a.at(k, k);
    for (int r = k + 1; r < n; ++r) {
      double l = a.at(r, k) * inv;
      a.at(r, k) = l;
      if (l != 0.0)
        kernels::axpy(-l, a.row(k) + k + 1, a.row(r) + k + 1,
                      static_cast<std::size_t>(n - k - 1));
    }
  }
  f.lu = std::move(a);
  return f;
}

Vec lu_solve(const Lu& f, Vec b) {
  if (f.singular) throw std::invalid_argument("lu_solve: singular factorization");
  const int n = f.lu.rows;
  // The factorization swaps whole rows, multipliers included, so every
  // recorded swap must hit b before the first elimination.
  for (int k = 0; k < n; ++k) {
    int p = f.piv[static_cast<std::size_t>(k)];
    if (p != k) std::swap(b[static_cast<std::size_t>(k)], b[static_cast<std::size_t>(p)]);
  }
  for (int k = 0; k < n; ++k) {
    for (int r = k + 1; r < n; ++r)
      b[static_cast<std::size_t>(r)] -= f.lu.at(r, k) * b[static_cast<std::size_t>(k)];
  }
  for (int r = n - 1; r >= 0; --r) {
    double s = b[static_cast<std::size_t>(r)];
    for (int c = r + 1; c < n; ++c) s -= f.lu.at(r, c) * b[static_cast<std::size_t>(c)];
    b[static_cast<std::size_t>(r)] = s / f.lu.at(r, r);
  }
  return b;
}

Mat lu_solve_mat(const Lu& f, const Mat& b) {
  Mat x(b.rows, b.cols);
  Vec col(static_cast<std::size_t>(b.rows));
  for (int c = 0; c < b.cols; ++c) {
    for (int r = 0; r < b.rows; ++r) col[static_cast<std::size_t>(r)] = b.at(r, c);
    Vec sol = lu_solve(f, col);
    for (int r = 0; r < b.rows; ++r) x.at(r, c) = sol[static_cast<std::size_t>(r)];
  }
  return x;
}

}  // namespace piu
