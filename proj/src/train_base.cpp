#include "piu/diffusion.hpp"

#include <cmath>

#include "piu/errors.hpp"
#include "piu/kernels.hpp"

namespace piu::diffusion {

double base_loss(const DenoiserParams& p, const std::vector<BaseItem>& items,
                 Vec* grad) {
  const std::size_t D = static_cast<std::size_t>(p.shape.latent_dim());
  static thread_local Trace tr;
  Vec eps, g_eps(D);
  double total = 0.0;
  const double scale = 2.0 / static_cast<double>(items.size());
  for (const auto& it : items) {
    const double* c = it.cond.empty() ? nullptr : it.cond.data();
    denoise_forward(p, it.zt.data(), it.t, c, eps, grad ? &tr : nullptr);
    total += kernels::diff_sum_sq(eps.data(), it.eps.data(), D);
    if (grad) {
      for (std::size_t i = 0; i < D; ++i)
        g_eps[i] = scale * (eps[i] - it.eps[i]);
      denoise_backward(p, tr, g_eps, *grad);
    }
  }
  return total / static_cast<double>(items.size());
}

DenoiserParams train_base(const idspace::IdentityDataset& ds,
                          const SynthWorld& world, const NoiseSchedule& sched,
                          const TrainConfig& cfg) {
  const int D = world.A.rows;
  if (D % 8 != 0)
    throw ConfigError("base training expects a latent dim divisible by 8");
  DenoiserShape shape;
  shape.tok_w = 8;
  shape.n_tok = D / 8;
  shape.cond_dim = world.A.cols;

  DenoiserParams p = make_denoiser(shape, mix_seed(cfg.seed, 0));
  Rng rng(mix_seed(cfg.seed, 1));

  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    auto s = ds.samples[i].split;
    if (s == idspace::Split::ForgetTrain || s == idspace::Split::RetainTrain)
      train_idx.push_back(i);
  }
  if (train_idx.empty()) throw ConfigError("no training samples in dataset");

  const int d_s = world.B.cols;
  std::vector<BaseItem> items(cfg.batch);
  Vec grad(p.theta.size()), m(p.theta.size(), 0.0), v(p.theta.size(), 0.0);
  Vec style(d_s);
  for (long step = 1; step <= cfg.steps; ++step) {
    for (auto& it : items) {
      const auto& smp = ds.samples[train_idx[rng.uniform_below(train_idx.size())]];
      rng.fill_normal(style.data(), style.size());
      for (auto& x : style) x *= cfg.style_scale;
      Latent z0{synth_observe(world, smp.values, style), 0};
      it.t = 1 + static_cast<int>(rng.uniform_below(sched.T));
      it.eps = rng.normal_vec(D);
      it.zt = forward_diffuse(z0, it.t, it.eps, sched).values;
      it.cond = rng.uniform01() < cfg.null_drop_prob ? Vec{} : smp.values;
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = base_loss(p, items, &grad);
    if (!std::isfinite(loss))
      throw TrainingDiverged("base training loss is not finite", step);
    kernels::adamw(p.theta.data(), grad.data(), m.data(), v.data(),
                   p.theta.size(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps,
                   cfg.weight_decay, 1.0 - std::pow(cfg.beta1, step),
                   1.0 - std::pow(cfg.beta2, step));
  }
  return p;
}

}  // namespace piu::diffusion
