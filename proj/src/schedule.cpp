#include "piu/diffusion.hpp"

#include <cmath>

#include "piu/errors.hpp"

namespace piu::diffusion {

double NoiseSchedule::abar(int t) const {
  if (t == 0) return 1.0;
  return alpha_bar[static_cast<std::size_t>(t) - 1];
}

NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
  if (T < 1 || beta_min <= 0.0 || beta_max >= 1.0 || beta_max < beta_min)
    throw DegenerateSchedule("noise schedule requires 0 < beta_min <= beta_max < 1 and T >= 1");
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(T);
  s.alpha_bar.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
    s.beta[i] = beta_min + (beta_max - beta_min) * frac;
    prod *= 1.0 - s.beta[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

Latent forward_diffuse(const Latent& z0, int t, const Vec& eps,
                       const NoiseSchedule& sched) {
  double g = sched.gamma(t);
  double s = sched.sigma(t);
  Latent zt;
  zt.timestep = t;
  zt.values.resize(z0.values.size());
  for (std::size_t i = 0; i < z0.values.size(); ++i)
    zt.values[i] = g * z0.values[i] + s * eps[i];
  return zt;
}

Latent predict_x0(const Latent& zt, int t, const Vec& eps_hat,
                  const NoiseSchedule& sched) {
  double g = sched.gamma(t);
  double s = sched.sigma(t);
  Latent x0;
  x0.timestep = 0;
  x0.values.resize(zt.values.size());
  for (std::size_t i = 0; i < zt.values.size(); ++i)
    x0.values[i] = (zt.values[i] - s * eps_hat[i]) / g;
  return x0;
}

Latent ancestral_step(const Latent& zt, int t, const Vec& eps_hat,
                      const NoiseSchedule& sched, const Vec& noise) {
  double beta = sched.beta[static_cast<std::size_t>(t) - 1];
  double alpha = 1.0 - beta;
  double abar_t = sched.abar(t);
  double abar_prev = sched.abar(t - 1);
  double mean_scale = 1.0 / std::sqrt(alpha);
  double eps_scale = beta / std::sqrt(1.0 - abar_t);
  double post_sd =
      t == 1 ? 0.0 : std::sqrt((1.0 - abar_prev) / (1.0 - abar_t) * beta);
  Latent out;
  out.timestep = t - 1;
  out.values.resize(zt.values.size());
  for (std::size_t i = 0; i < zt.values.size(); ++i) {
    double mu = mean_scale * (zt.values[i] - eps_scale * eps_hat[i]);
    out.values[i] = t == 1 ? mu : mu + post_sd * noise[i];
  }
  return out;
}

}  // namespace piu::diffusion
