#include "piu/baselines.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "piu/errors.hpp"
#include "piu/kernels.hpp"

namespace piu::baselines {

std::pair<double, double> siss_losses(const DenoiserParams& trainable,
                                      const std::vector<diffusion::BaseItem>& retain_batch,
                                      const std::vector<diffusion::BaseItem>& forget_batch,
                                      Vec* grad_retain, Vec* grad_forget) {
  if (retain_batch.empty() || forget_batch.empty())
    throw std::invalid_argument("siss_losses needs non-empty batches");
  const double l_retain = diffusion::base_loss(trainable, retain_batch, grad_retain);
  const double l_forget = diffusion::base_loss(trainable, forget_batch, grad_forget);
  return {l_retain, l_forget};
}

Vec siss_update_direction(const Vec& g_retain, const Vec& g_forget, double beta) {
  const double norm_forget = norm2(g_forget);
  if (norm_forget == 0.0)
    throw DegenerateGradient("siss update needs a nonzero forget gradient");
  const double lambda_eff = beta * norm2(g_retain) / norm_forget;
  Vec out(g_retain.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = g_retain[i] - lambda_eff * g_forget[i];
  return out;
}

std::pair<DenoiserParams, std::vector<unlearn::StepLog>> run_siss(
    const DenoiserParams& frozen, const idspace::IdentityDataset& ds,
    int forget_identity, const SissConfig& cfg, const NoiseSchedule& sched,
    const SynthWorld& world) {
  if (cfg.beta <= 0.0 || cfg.batch < 1 || cfg.steps < 0)
    throw ConfigError("siss config needs beta > 0 and a positive batch");

  std::vector<int> retain_pool, forget_pool;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (ds.samples[i].split == idspace::Split::RetainTrain)
      retain_pool.push_back(static_cast<int>(i));
    else if (ds.samples[i].split == idspace::Split::ForgetTrain &&
             ds.samples[i].identity == forget_identity)
      forget_pool.push_back(static_cast<int>(i));
  }
  if (retain_pool.empty() || forget_pool.empty())
    throw ConfigError("siss needs retain and forget training samples");

  DenoiserParams params = frozen;
  const std::size_t n = params.theta.size();
  const int D = params.shape.latent_dim();
  const int d_s = world.B.cols;
  Rng rng(mix_seed(cfg.seed, 1));
  Vec grad_retain(n), grad_forget(n), m(n, 0.0), vstate(n, 0.0), style(d_s);
  std::vector<diffusion::BaseItem> retain_batch(cfg.batch), forget_batch(cfg.batch);
  std::vector<unlearn::StepLog> log;
  log.reserve(cfg.steps);

  auto draw = [&](const std::vector<int>& pool, diffusion::BaseItem& it) {
    const auto& smp = ds.samples[pool[rng.uniform_below(pool.size())]];
    rng.fill_normal(style.data(), style.size());
    for (auto& x : style) x *= cfg.style_scale;
    diffusion::Latent z0{diffusion::synth_observe(world, smp.values, style), 0};
    it.t = 1 + static_cast<int>(rng.uniform_below(sched.T));
    it.eps = rng.normal_vec(D);
    it.zt = diffusion::forward_diffuse(z0, it.t, it.eps, sched).values;
    it.cond = smp.values;
  };

  for (long step = 1; step <= cfg.steps; ++step) {
    for (auto& it : retain_batch) draw(retain_pool, it);
    for (auto& it : forget_batch) draw(forget_pool, it);
    std::fill(grad_retain.begin(), grad_retain.end(), 0.0);
    std::fill(grad_forget.begin(), grad_forget.end(), 0.0);
    auto [l_retain, l_forget] =
        siss_losses(params, retain_batch, forget_batch, &grad_retain, &grad_forget);
    if (!std::isfinite(l_retain) || !std::isfinite(l_forget))
      throw TrainingDiverged("siss loss is not finite", step);

    Vec update = siss_update_direction(grad_retain, grad_forget, cfg.beta);
    const double lambda_eff =
        cfg.beta * norm2(grad_retain) / norm2(grad_forget);
    kernels::adamw(params.theta.data(), update.data(), m.data(), vstate.data(),
                   n, cfg.lr, 0.9, 0.999, 1e-8, 0.0,
                   1.0 - std::pow(0.9, static_cast<double>(step)),
                   1.0 - std::pow(0.999, static_cast<double>(step)));
    log.push_back({step, l_forget, l_retain, l_retain - lambda_eff * l_forget,
                   diffusion::param_checksum(params)});
  }
  return {std::move(params), std::move(log)};
}

Mat uce_edit(const UceEditRequest& req) {
  const int d = req.w_old.rows, h = req.w_old.cols;
  for (const auto& [c, v] : req.edits)
    if (static_cast<int>(c.size()) != d || static_cast<int>(v.size()) != h)
      throw std::invalid_argument("uce edit pair dimension mismatch");
  for (const auto& c : req.preserve)
    if (static_cast<int>(c.size()) != d)
      throw std::invalid_argument("uce preserve vector dimension mismatch");

  Mat normal(d, d);
  for (int i = 0; i < d; ++i) normal.at(i, i) = req.lambda_reg;
  Mat rhs(d, h);
  for (int i = 0; i < d; ++i)
    kernels::axpy(req.lambda_reg, req.w_old.row(i), rhs.row(i), h);

  for (const auto& [c, v] : req.edits) {
    for (int i = 0; i < d; ++i) {
      kernels::axpy(req.alpha_e * c[i], c.data(), normal.row(i), d);
      kernels::axpy(req.alpha_e * c[i], v.data(), rhs.row(i), h);
    }
  }
  Vec response(h);
  for (const auto& c : req.preserve) {
    matvec_t(req.w_old, c.data(), response.data());
    for (int i = 0; i < d; ++i) {
      kernels::axpy(req.alpha_p * c[i], c.data(), normal.row(i), d);
      kernels::axpy(req.alpha_p * c[i], response.data(), rhs.row(i), h);
    }
  }

  Lu lu = lu_factor(std::move(normal));
  if (lu.singular)
    throw SingularSystem("uce normal matrix is singular; raise lambda_reg");
  return lu_solve_mat(lu, rhs);
}

DenoiserParams run_uce(const DenoiserParams& frozen,
                       const idspace::IdentityDataset& ds, int forget_identity,
                       const UceConfig& cfg,
                       const std::vector<metrics::LayerScore>* scores) {
  std::vector<char> edit_block(frozen.shape.n_blocks, 1);
  if (cfg.surgical_only) {
    if (!scores)
      throw ConfigError("surgical uce needs layer separation scores");
    auto mask = unlearn::surgical_mask_from_scores(frozen, *scores,
                                                  cfg.surgical_top_k);
    for (int b = 0; b < frozen.shape.n_blocks; ++b)
      edit_block[b] = mask.covers(frozen.block_tag(b) + ".Wk");
  }

  idspace::AnchorQuery query{cfg.tau, cfg.anchor_tolerance, forget_identity,
                             mix_seed(cfg.seed, 0)};
  const int anchor = idspace::select_anchor(ds, query);

  Vec c_forget = ds.centroids[forget_identity];
  Vec c_anchor = ds.centroids[anchor];
  normalize_in_place(c_forget);
  normalize_in_place(c_anchor);
  std::vector<Vec> preserve;
  for (int id = 0; id < ds.num_identities; ++id) {
    if (id == forget_identity) continue;
    Vec c = ds.centroids[id];
    normalize_in_place(c);
    preserve.push_back(std::move(c));
  }

  DenoiserParams params = frozen;
  for (int b = 0; b < params.shape.n_blocks; ++b) {
    if (!edit_block[b]) continue;
    for (const char* name : {"Wk", "Wv"}) {
      const auto& view = params.view(params.block_tag(b) + "." + name);
      UceEditRequest req;
      req.w_old = Mat(view.rows, view.cols);
      std::copy(params.data(view), params.data(view) + view.count(),
                req.w_old.a.begin());
      Vec v_star(view.cols);
      matvec_t(req.w_old, c_anchor.data(), v_star.data());
      req.edits.emplace_back(c_forget, std::move(v_star));
      req.preserve = preserve;
      req.alpha_e = cfg.alpha_e;
      req.alpha_p = cfg.alpha_p;
      req.lambda_reg = cfg.lambda_reg;
      Mat edited = uce_edit(req);
      std::copy(edited.a.begin(), edited.a.end(), params.data(view));
    }
  }
  return params;
}

double wid_identity_loss(const Vec& s_id, const Vec& s_hat) {
  const double nu = norm2(s_id), nv = norm2(s_hat);
  if (nu == 0.0 || nv == 0.0)
    throw std::invalid_argument("identity loss needs nonzero vectors");
  return 1.0 - kernels::dot(s_id.data(), s_hat.data(), s_id.size()) / (nu * nv);
}

unlearn::BatchSource wid_batch_source(const idspace::IdentityDataset& ds,
                                      int forget_identity,
                                      const Vec& anchor_cond,
                                      const WidConfig& cfg,
                                      const NoiseSchedule& sched,
                                      const SynthWorld& world) {
  auto pool = std::make_shared<std::vector<int>>(
      ds.split_indices(forget_identity, idspace::Split::ForgetTrain));
  if (pool->empty())
    throw ConfigError("forget identity has no training samples");
  auto rng = std::make_shared<Rng>(mix_seed(cfg.seed, 1));
  const int D = world.A.rows;
  const int d_s = world.B.cols;
  return [&ds, &sched, &world, pool, rng, anchor_cond, cfg, D, d_s](
             long, std::vector<unlearn::ForgetItem>& fb,
             std::vector<unlearn::RetainItem>& rb) {
    fb.resize(cfg.batch);
    rb.clear();
    Vec style(d_s);
    for (auto& it : fb) {
      const auto& smp = ds.samples[(*pool)[rng->uniform_below(pool->size())]];
      rng->fill_normal(style.data(), style.size());
      for (auto& x : style) x *= cfg.style_scale;
      diffusion::Latent z0{diffusion::synth_observe(world, smp.values, style), 0};
      it.t = 1 + static_cast<int>(rng->uniform_below(sched.T));
      Vec eps = rng->normal_vec(D);
      it.zt = diffusion::forward_diffuse(z0, it.t, eps, sched).values;
      it.cond = smp.values;
      it.anchor_cond = anchor_cond;
      it.s_id = smp.values;
    }
  };
}

std::pair<DenoiserParams, std::vector<unlearn::StepLog>> run_wid(
    const DenoiserParams& frozen, const idspace::IdentityDataset& ds,
    int forget_identity, const WidConfig& cfg, const NoiseSchedule& sched,
    const SynthWorld& world) {
  if (cfg.lambda_id < 0.0 || cfg.batch < 1 || cfg.steps < 0)
    throw ConfigError("wid config needs lambda_id >= 0 and a positive batch");

  idspace::AnchorQuery query{cfg.tau, cfg.anchor_tolerance, forget_identity,
                             mix_seed(cfg.seed, 0)};
  const Vec anchor_cond = ds.centroids[idspace::select_anchor(ds, query)];

  unlearn::GuidedRunConfig run;
  run.eta = 0.0;
  run.lambda_preserve = 0.0;
  run.lambda_id = cfg.lambda_id;
  run.steps = cfg.steps;
  run.lr = cfg.lr;
  run.weight_decay = 0.0;
  return unlearn::run_guided(
      frozen, run, nullptr,
      wid_batch_source(ds, forget_identity, anchor_cond, cfg, sched, world),
      sched, &world);
}

}  // namespace piu::baselines
