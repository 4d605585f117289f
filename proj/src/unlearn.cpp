#include "piu/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "piu/errors.hpp"
#include "piu/hash.hpp"
#include "piu/kernels.hpp"

namespace piu::unlearn {

bool SurgicalMask::covers(const std::string& view_name) const {
  for (const auto& [tag, mat] : entries)
    if (view_name == tag + "." + mat) return true;
  return false;
}

double trainable_fraction(const SurgicalMask& mask, const DenoiserParams& p) {
  std::size_t covered = 0;
  for (const auto& v : p.manifest)
    if (mask.covers(v.name)) covered += v.count();
  return static_cast<double>(covered) / static_cast<double>(p.theta.size());
}

SurgicalMask surgical_mask_from_scores(const DenoiserParams& p,
                                       const std::vector<metrics::LayerScore>& scores,
                                       int top_k) {
  const int n_blocks = p.shape.n_blocks;
  if (top_k < 1 || top_k > n_blocks)
    throw std::invalid_argument("surgical top_k must be in [1, block count]");

  std::vector<double> combined(n_blocks);
  for (int b = 0; b < n_blocks; ++b) {
    const std::string tag = p.block_tag(b);
    auto it = std::find_if(scores.begin(), scores.end(),
                           [&](const auto& s) { return s.tag == tag; });
    if (it == scores.end())
      throw std::invalid_argument("separation scores missing block " + tag);
    combined[b] = it->s_kv + it->s_q;
  }
  std::vector<int> order(n_blocks);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return combined[a] > combined[b]; });

  static const char* kBlockMatrices[] = {"Wq", "Wk", "Wv",
                                         "null_k", "null_v"};
  SurgicalMask mask;
  for (int k = 0; k < top_k; ++k)
    for (const char* name : kBlockMatrices)
      mask.entries.emplace_back(p.block_tag(order[k]), name);
  return mask;
}

Vec forget_target(const DenoiserParams& frozen, const Latent& zt, int t,
                  const Vec& c_f, const Vec& c_a, double eta) {
  const std::size_t D = frozen.shape.latent_dim();
  const std::size_t d = frozen.shape.cond_dim;
  if (zt.values.size() != D || c_f.size() != d || c_a.size() != d)
    throw std::invalid_argument("forget_target dimension mismatch");
  Vec target = diffusion::denoise_predict(frozen, zt, t, c_a);
  if (eta == 0.0) return target;
  Vec pred_f = diffusion::denoise_predict(frozen, zt, t, c_f);
  for (std::size_t i = 0; i < D; ++i)
    target[i] -= eta * (pred_f[i] - target[i]);
  return target;
}

LossTerms guided_losses(const DenoiserParams& trainable,
                        const DenoiserParams& frozen,
                        const std::vector<ForgetItem>& forget_batch,
                        const std::vector<RetainItem>& retain_batch,
                        double eta, double lambda_preserve, double lambda_id,
                        const NoiseSchedule* sched, const SynthWorld* world,
                        Vec* grad) {
  if (forget_batch.empty())
    throw std::invalid_argument("forget batch must not be empty");
  if (lambda_id > 0.0 && (sched == nullptr || world == nullptr))
    throw std::invalid_argument("identity branch needs a schedule and a world");

  const std::size_t D = trainable.shape.latent_dim();
  static thread_local diffusion::Trace tr;
  Vec eps, target, frozen_pred, g_eps(D), x0(D), s_hat, s_diff, g_x0(D);
  LossTerms lt;

  const double nf = static_cast<double>(forget_batch.size());
  for (const auto& it : forget_batch) {
    diffusion::denoise_forward(frozen, it.zt.data(), it.t,
                               it.anchor_cond.data(), target, nullptr);
    if (eta != 0.0) {
      diffusion::denoise_forward(frozen, it.zt.data(), it.t, it.cond.data(),
                                 frozen_pred, nullptr);
      for (std::size_t i = 0; i < D; ++i)
        target[i] -= eta * (frozen_pred[i] - target[i]);
    }
    diffusion::denoise_forward(trainable, it.zt.data(), it.t, it.cond.data(),
                               eps, grad ? &tr : nullptr);
    lt.forget += kernels::diff_sum_sq(eps.data(), target.data(), D);
    if (grad)
      for (std::size_t i = 0; i < D; ++i)
        g_eps[i] = (2.0 / nf) * (eps[i] - target[i]);
    if (lambda_id > 0.0) {
      const double gamma = sched->gamma(it.t), sigma = sched->sigma(it.t);
      for (std::size_t i = 0; i < D; ++i)
        x0[i] = (it.zt[i] - sigma * eps[i]) / gamma;
      // raw linear readout, not the normalized recognizer: the squared-error
      // gradient below backpropagates through A^T exactly
      s_hat.resize(static_cast<std::size_t>(world->A.cols));
      matvec_t(world->A, x0.data(), s_hat.data());
      lt.identity +=
          kernels::diff_sum_sq(s_hat.data(), it.s_id.data(), s_hat.size());
      if (grad) {
        s_diff.resize(s_hat.size());
        for (std::size_t i = 0; i < s_hat.size(); ++i)
          s_diff[i] = s_hat[i] - it.s_id[i];
        matvec(world->A, s_diff.data(), g_x0.data());
        kernels::axpy(-2.0 * lambda_id * sigma / (gamma * nf), g_x0.data(),
                      g_eps.data(), D);
      }
    }
    if (grad) diffusion::denoise_backward(trainable, tr, g_eps, *grad);
  }
  lt.forget /= nf;
  lt.identity /= nf;

  if (lambda_preserve > 0.0) {
    if (retain_batch.empty())
      throw std::invalid_argument("retain batch must not be empty");
    const double nr = static_cast<double>(retain_batch.size());
    for (const auto& it : retain_batch) {
      diffusion::denoise_forward(frozen, it.zt.data(), it.t, it.cond.data(),
                                 frozen_pred, nullptr);
      diffusion::denoise_forward(trainable, it.zt.data(), it.t, it.cond.data(),
                                 eps, grad ? &tr : nullptr);
      lt.preserve += kernels::diff_sum_sq(eps.data(), frozen_pred.data(), D);
      if (grad) {
        for (std::size_t i = 0; i < D; ++i)
          g_eps[i] = (2.0 * lambda_preserve / nr) * (eps[i] - frozen_pred[i]);
        diffusion::denoise_backward(trainable, tr, g_eps, *grad);
      }
    }
    lt.preserve /= nr;
  }

  lt.total = lt.forget + lambda_preserve * lt.preserve + lambda_id * lt.identity;
  return lt;
}

PiuLossTerms piu_losses(const DenoiserParams& trainable,
                        const DenoiserParams& frozen,
                        const std::vector<ForgetItem>& forget_batch,
                        const std::vector<RetainItem>& retain_batch,
                        const UnlearnConfig& cfg, Vec* grad) {
  if (forget_batch.empty() || retain_batch.empty())
    throw std::invalid_argument("piu_losses needs non-empty batches");
  LossTerms lt =
      guided_losses(trainable, frozen, forget_batch, retain_batch, cfg.eta,
                    cfg.lambda_preserve, 0.0, nullptr, nullptr, grad);
  return {lt.forget, lt.preserve, lt.total};
}

std::string render_log(const std::vector<StepLog>& log) {
  std::string out;
  char line[192];
  for (const auto& s : log) {
    std::snprintf(line, sizeof line,
                  "step=%ld loss_forget=%.17g loss_preserve=%.17g loss_total=%.17g\n",
                  s.step, s.loss_forget, s.loss_preserve, s.loss_total);
    out += line;
  }
  return out;
}

std::pair<DenoiserParams, std::vector<StepLog>> run_guided(
    const DenoiserParams& frozen, const GuidedRunConfig& cfg,
    const SurgicalMask* mask, const BatchSource& source,
    const NoiseSchedule& sched, const SynthWorld* world) {
  DenoiserParams params = frozen;
  const std::size_t n = params.theta.size();
  Vec grad(n), m(n, 0.0), vstate(n, 0.0);
  std::vector<char> view_trainable(params.manifest.size(), 1);
  if (mask)
    for (std::size_t i = 0; i < params.manifest.size(); ++i)
      view_trainable[i] = mask->covers(params.manifest[i].name);

  std::vector<StepLog> log;
  log.reserve(cfg.steps);
  std::vector<ForgetItem> fb;
  std::vector<RetainItem> rb;
  for (long step = 1; step <= cfg.steps; ++step) {
    fb.clear();
    rb.clear();
    source(step, fb, rb);
    std::fill(grad.begin(), grad.end(), 0.0);
    LossTerms lt = guided_losses(params, frozen, fb, rb, cfg.eta,
                                 cfg.lambda_preserve, cfg.lambda_id, &sched,
                                 world, &grad);
    if (!std::isfinite(lt.total))
      throw TrainingDiverged("unlearning loss is not finite", step);

    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    if (!mask) {
      kernels::adamw(params.theta.data(), grad.data(), m.data(), vstate.data(),
                     n, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                     cfg.weight_decay, bias1, bias2);
    } else {
      for (std::size_t i = 0; i < params.manifest.size(); ++i) {
        if (!view_trainable[i]) continue;
        const auto& view = params.manifest[i];
        kernels::adamw(params.theta.data() + view.offset,
                       grad.data() + view.offset, m.data() + view.offset,
                       vstate.data() + view.offset, view.count(), cfg.lr,
                       cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay,
                       bias1, bias2);
      }
    }
    log.push_back({step, lt.forget,
                   cfg.lambda_id > 0.0 ? lt.identity : lt.preserve, lt.total,
                   diffusion::param_checksum(params)});
  }
  return {std::move(params), std::move(log)};
}

std::pair<DenoiserParams, std::vector<StepLog>> run_unlearning(
    const DenoiserParams& frozen, const idspace::IdentityDataset& ds,
    int forget_identity, const UnlearnConfig& cfg, const NoiseSchedule& sched,
    const std::vector<metrics::LayerScore>* scores) {
  if (cfg.steps < 0 || cfg.batch_forget < 1 || cfg.batch_retain < 1 ||
      cfg.mix_K < 1 || cfg.lambda_preserve < 0.0 || cfg.eta < 0.0)
    throw ConfigError("unlearning config needs positive batch sizes and nonnegative weights");

  std::optional<SurgicalMask> mask;
  if (cfg.surgical) {
    if (!scores)
      throw ConfigError("surgical unlearning needs layer separation scores");
    mask = surgical_mask_from_scores(frozen, *scores, cfg.surgical_top_k);
  }

  idspace::AnchorQuery query{cfg.tau, cfg.anchor_tolerance, forget_identity,
                             mix_seed(cfg.seed, 0)};
  const int anchor = idspace::select_anchor(ds, query);
  const Vec anchor_cond = ds.centroids[anchor];

  std::vector<Vec> forget_sources;
  for (int idx : ds.split_indices(forget_identity, idspace::Split::ForgetTrain))
    forget_sources.push_back(ds.samples[idx].values);
  if (forget_sources.empty())
    throw ConfigError("forget identity has no training samples");

  std::vector<int> retain_pool;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    if (ds.samples[i].split == idspace::Split::RetainTrain)
      retain_pool.push_back(static_cast<int>(i));
  if (cfg.lambda_preserve > 0.0 && retain_pool.empty())
    throw ConfigError("preservation needs retain training samples");

  auto rng = std::make_shared<Rng>(mix_seed(cfg.seed, 1));
  const int D = frozen.shape.latent_dim();
  const int T = sched.T;
  // Per forget item: mixed condition (source draw + Dirichlet weights), then
  // z0, t, eps; per retain item: pool index, z0, t, eps. Retain items are
  // drawn only when the preservation term is active.
  BatchSource source = [&ds, &sched, cfg, rng, D, T, anchor_cond,
                        forget_sources, retain_pool](
                           long, std::vector<ForgetItem>& fb,
                           std::vector<RetainItem>& rb) {
    fb.resize(cfg.batch_forget);
    for (auto& it : fb) {
      it.cond = idspace::mix_forget_conditions(forget_sources, cfg.mix_K,
                                               cfg.dirichlet_alpha, *rng);
      Latent z0{rng->normal_vec(D), 0};
      it.t = 1 + static_cast<int>(rng->uniform_below(T));
      Vec eps = rng->normal_vec(D);
      it.zt = diffusion::forward_diffuse(z0, it.t, eps, sched).values;
      it.anchor_cond = anchor_cond;
      it.s_id.clear();
    }
    rb.resize(cfg.lambda_preserve > 0.0 ? cfg.batch_retain : 0);
    for (auto& it : rb) {
      it.cond = ds.samples[retain_pool[rng->uniform_below(retain_pool.size())]].values;
      Latent z0{rng->normal_vec(D), 0};
      it.t = 1 + static_cast<int>(rng->uniform_below(T));
      Vec eps = rng->normal_vec(D);
      it.zt = diffusion::forward_diffuse(z0, it.t, eps, sched).values;
    }
  };

  GuidedRunConfig run;
  run.eta = cfg.eta;
  run.lambda_preserve = cfg.lambda_preserve;
  run.lambda_id = 0.0;
  run.steps = cfg.steps;
  run.lr = cfg.lr;
  run.weight_decay = cfg.weight_decay;
  return run_guided(frozen, run, mask ? &*mask : nullptr, source, sched,
                    nullptr);
}

}  // namespace piu::unlearn
