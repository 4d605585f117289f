#include "piu/diffusion.hpp"

#include <cmath>

#include "piu/errors.hpp"
#include "piu/kernels.hpp"

namespace piu::diffusion {

SynthWorld make_axis_world(int D, int d, int d_s) {
  if (d + d_s > D)
    throw ConfigError("world needs embed_dim + style_dim <= latent_dim");
  SynthWorld w;
  w.A = Mat(D, d);
  w.B = Mat(D, d_s);
  for (int i = 0; i < d; ++i) w.A.at(i, i) = 1.0;
  for (int i = 0; i < d_s; ++i) w.B.at(d + i, i) = 1.0;
  return w;
}

SynthWorld make_random_world(int D, int d, int d_s, std::uint64_t seed) {
  if (d + d_s > D)
    throw ConfigError("world needs embed_dim + style_dim <= latent_dim");
  Rng rng(seed);
  int k = d + d_s;
  std::vector<Vec> cols(k);
  for (int j = 0; j < k; ++j) {
    cols[j] = rng.normal_vec(D);
    for (int i = 0; i < j; ++i) {
      double proj = kernels::dot(cols[j].data(), cols[i].data(), D);
      kernels::axpy(-proj, cols[i].data(), cols[j].data(), D);
    }
    double n = std::sqrt(kernels::sum_sq(cols[j].data(), D));
    if (n < 1e-10)
      throw SingularSystem("random world draw collapsed during orthogonalization");
    for (int i = 0; i < D; ++i) cols[j][i] /= n;
  }
  SynthWorld w;
  w.A = Mat(D, d);
  w.B = Mat(D, d_s);
  for (int i = 0; i < D; ++i) {
    for (int j = 0; j < d; ++j) w.A.at(i, j) = cols[j][i];
    for (int j = 0; j < d_s; ++j) w.B.at(i, j) = cols[d + j][i];
  }
  return w;
}

Vec synth_observe(const SynthWorld& w, const Vec& c, const Vec& style) {
  Vec x(w.A.rows, 0.0);
  for (int i = 0; i < w.A.rows; ++i) {
    double acc = kernels::dot(w.A.row(i), c.data(), w.A.cols);
    acc += kernels::dot(w.B.row(i), style.data(), w.B.cols);
    x[i] = acc;
  }
  return x;
}

Vec recognize(const SynthWorld& w, const Vec& x) {
  Vec e(w.A.cols);
  matvec_t(w.A, x.data(), e.data());
  double n = std::sqrt(kernels::sum_sq(e.data(), e.size()));
  if (n == 0.0)
    throw Unrecognizable("recognize: input has no identity-axis component");
  for (double& v : e) v /= n;
  return e;
}

}  // namespace piu::diffusion
