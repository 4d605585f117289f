#include "piu/kernels.hpp"

#include <cmath>

namespace piu::kernels {

namespace scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_sq(const double* a, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * a[i];
  return s;
}

double diff_sum_sq(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void adamw(double* p, const double* g, double* m, double* v, std::size_t n,
           double lr, double beta1, double beta2, double eps, double wd,
           double bias1, double bias2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    double mhat = m[i] / bias1;
    double vhat = v[i] / bias2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
  }
}

}  // namespace scalar

namespace avx2 {
bool supported();
double dot(const double* a, const double* b, std::size_t n);
double sum_sq(const double* a, std::size_t n);
double diff_sum_sq(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void adamw(double* p, const double* g, double* m, double* v, std::size_t n,
           double lr, double beta1, double beta2, double eps, double wd,
           double bias1, double bias2);
}  // namespace avx2

namespace {
const bool use_avx2 = avx2::supported();
}

const char* active_backend() { return use_avx2 ? "avx2" : "scalar"; }

double dot(const double* a, const double* b, std::size_t n) {
  return use_avx2 ? avx2::dot(a, b, n) : scalar::dot(a, b, n);
}

double sum_sq(const double* a, std::size_t n) {
  return use_avx2 ? avx2::sum_sq(a, n) : scalar::sum_sq(a, n);
}

double diff_sum_sq(const double* a, const double* b, std::size_t n) {
  return use_avx2 ? avx2::diff_sum_sq(a, b, n) : scalar::diff_sum_sq(a, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  if (use_avx2)
    avx2::axpy(alpha, x, y, n);
  else
    scalar::axpy(alpha, x, y, n);
}

void adamw(double* p, const double* g, double* m, double* v, std::size_t n,
           double lr, double beta1, double beta2, double eps, double wd,
           double bias1, double bias2) {
  if (use_avx2)
    avx2::adamw(p, g, m, v, n, lr, beta1, beta2, eps, wd, bias1, bias2);
  else
    scalar::adamw(p, g, m, v, n, lr, beta1, beta2, eps, wd, bias1, bias2);
}

}  // namespace piu::kernels
