#pragma once

#include <cstddef>
#include <vector>

namespace piu {

using Vec = std::vector<double>;

// Dense row-major matrix. Projections are stored as (in_dim x out_dim) and
// applied as y = M^T x via matvec_t, so a row holds the fan-out of one input
// coordinate and the row stride matches the kernel-friendly layout.
struct Mat {
  int rows = 0;
  int cols = 0;
  Vec a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return a[static_cast<std::size_t>(r) * cols + c];
  }
  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const {
    return a.data() + static_cast<std::size_t>(r) * cols;
  }
  std::size_t size() const { return a.size(); }
};

// y = M^T x; x has M.rows entries, y gets M.cols entries (overwritten).
void matvec_t(const Mat& m, const double* x, double* y);
// y = M x; x has M.cols entries, y gets M.rows entries (overwritten).
void matvec(const Mat& m, const double* x, double* y);
// M += x y^T with x over rows, y over cols.
void add_outer(Mat& m, const double* x, const double* y);
// Raw-buffer variants for views into a flat parameter vector.
void matvec_t(const double* m, int rows, int cols, const double* x, double* y);
void matvec(const double* m, int rows, int cols, const double* x, double* y);
void add_outer(double* m, int rows, int cols, const double* x, const double* y);

Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& m);
double frob_norm(const Mat& m);

double norm2(const Vec& v);
void normalize_in_place(Vec& v);  // throws std::invalid_argument on zero norm

// LU factorization with partial pivoting, for the closed-form edit solves.
struct Lu {
  Mat lu;
  std::vector<int> piv;
  bool singular = false;
};

Lu lu_factor(Mat a);
Vec lu_solve(const Lu& f, Vec b);
// Solves A X = B for X, right-hand sides taken column-wise.
Mat lu_solve_mat(const Lu& f, const Mat& b);

}  // namespace piu
