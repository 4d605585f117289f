// AVX2 + FMA variants. Built without -mavx2 so the library stays runnable on
// baseline x86-64; each function carries its own target attribute and is only
// reached when the dispatcher saw avx2+fma in cpuid.

#include "piu/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#define PIU_X86 1
#else
#define PIU_X86 0
#endif

namespace piu::kernels::avx2 {

bool supported() {
#if PIU_X86 && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

#if PIU_X86

__attribute__((target("avx2,fma"))) static inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swap = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swap));
}

__attribute__((target("avx2,fma"))) double dot(const double* a, const double* b,
                                               std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4)
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

__attribute__((target("avx2,fma"))) double sum_sq(const double* a, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256d x0 = _mm256_loadu_pd(a + i);
    __m256d x1 = _mm256_loadu_pd(a + i + 4);
    s0 = _mm256_fmadd_pd(x0, x0, s0);
    s1 = _mm256_fmadd_pd(x1, x1, s1);
  }
  for (; i + 4 <= n; i += 4) {
    __m256d x = _mm256_loadu_pd(a + i);
    s0 = _mm256_fmadd_pd(x, x, s0);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += a[i] * a[i];
  return s;
}

__attribute__((target("avx2,fma"))) double diff_sum_sq(const double* a,
                                                       const double* b,
                                                       std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    __m256d d1 =
        _mm256_sub_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4));
    s0 = _mm256_fmadd_pd(d0, d0, s0);
    s1 = _mm256_fmadd_pd(d1, d1, s1);
  }
  for (; i + 4 <= n; i += 4) {
    __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    s0 = _mm256_fmadd_pd(d, d, s0);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

__attribute__((target("avx2,fma"))) void axpy(double alpha, const double* x,
                                              double* y, std::size_t n) {
  __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d yy = _mm256_loadu_pd(y + i);
    yy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), yy);
    _mm256_storeu_pd(y + i, yy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

__attribute__((target("avx2,fma"))) void adamw(double* p, const double* g,
                                               double* m, double* v,
                                               std::size_t n, double lr,
                                               double beta1, double beta2,
                                               double eps, double wd,
                                               double bias1, double bias2) {
  __m256d vb1 = _mm256_set1_pd(beta1);
  __m256d vb2 = _mm256_set1_pd(beta2);
  __m256d vc1 = _mm256_set1_pd(1.0 - beta1);
  __m256d vc2 = _mm256_set1_pd(1.0 - beta2);
  __m256d vib1 = _mm256_set1_pd(1.0 / bias1);
  __m256d vib2 = _mm256_set1_pd(1.0 / bias2);
  __m256d veps = _mm256_set1_pd(eps);
  __m256d vlr = _mm256_set1_pd(lr);
  __m256d vwd = _mm256_set1_pd(wd);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d gg = _mm256_loadu_pd(g + i);
    __m256d mm = _mm256_fmadd_pd(vc1, gg, _mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)));
    __m256d vv = _mm256_fmadd_pd(vc2, _mm256_mul_pd(gg, gg),
                                 _mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)));
    _mm256_storeu_pd(m + i, mm);
    _mm256_storeu_pd(v + i, vv);
    __m256d mhat = _mm256_mul_pd(mm, vib1);
    __m256d vhat = _mm256_mul_pd(vv, vib2);
    __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
    __m256d pp = _mm256_loadu_pd(p + i);
    __m256d upd = _mm256_fmadd_pd(vwd, pp, _mm256_div_pd(mhat, denom));
    _mm256_storeu_pd(p + i, _mm256_fnmadd_pd(vlr, upd, pp));
  }
  if (i < n)
    scalar::adamw(p + i, g + i, m + i, v + i, n - i, lr, beta1, beta2, eps, wd,
                  bias1, bias2);
}

#else  // !PIU_X86: never dispatched to, but the symbols must exist

double dot(const double* a, const double* b, std::size_t n) {
  return scalar::dot(a, b, n);
}
double sum_sq(const double* a, std::size_t n) { return scalar::sum_sq(a, n); }
double diff_sum_sq(const double* a, const double* b, std::size_t n) {
  return scalar::diff_sum_sq(a, b, n);
}
void axpy(double alpha, const double* x, double* y, std::size_t n) {
  scalar::axpy(alpha, x, y, n);
}
void adamw(double* p, const double* g, double* m, double* v, std::size_t n,
           double lr, double beta1, double beta2, double eps, double wd,
           double bias1, double bias2) {
  scalar::adamw(p, g, m, v, n, lr, beta1, beta2, eps, wd, bias1, bias2);
}

#endif

}  // namespace piu::kernels::avx2
