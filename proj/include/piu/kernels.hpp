#pragma once

#include <cstddef>

// Hot inner loops of the training and evaluation paths. Each kernel has a
// scalar reference implementation and an AVX2 variant; the unqualified entry
// points dispatch once at load time based on what the CPU supports. The AVX2
// variants reassociate accumulation (and use FMA), so they agree with the
// scalar path to rounding, not bitwise; within one process every call takes
// the same path, which is what the bitwise determinism contracts rely on.

namespace piu::kernels {

// Name of the dispatched backend: "avx2" or "scalar".
const char* active_backend();

double dot(const double* a, const double* b, std::size_t n);
double sum_sq(const double* a, std::size_t n);
double diff_sum_sq(const double* a, const double* b, std::size_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);
// One decoupled-weight-decay Adam update on a contiguous range, given the
// bias-corrected step size and the running-moment decay rates.
void adamw(double* p, const double* g, double* m, double* v, std::size_t n,
           double lr, double beta1, double beta2, double eps, double wd,
           double bias1, double bias2);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double sum_sq(const double* a, std::size_t n);
double diff_sum_sq(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void adamw(double* p, const double* g, double* m, double* v, std::size_t n,
           double lr, double beta1, double beta2, double eps, double wd,
           double bias1, double bias2);
}  // namespace scalar

}  // namespace piu::kernels
