#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "piu/diffusion.hpp"
#include "piu/idspace.hpp"
#include "piu/linalg.hpp"
#include "piu/metrics.hpp"
#include "piu/unlearn.hpp"

// The three reproduced baselines: norm-controlled gradient subtraction over
// real-sample latents (SISS without importance sampling), closed-form
// least-squares edits of the condition projections (UCE), and identity-guided
// fine-tuning through the recovered clean latent (WID).

namespace piu::baselines {

using diffusion::DenoiserParams;
using diffusion::NoiseSchedule;
using diffusion::SynthWorld;

struct SissConfig {
  double beta = 0.1;
  double lr = 5e-6;
  long steps = 60;
  int batch = 32;
  double style_scale = 0.5;
  std::uint64_t seed = 0;
};

// Mean eps-prediction MSE under retain and forget batches respectively; the
// optional grad outputs accumulate each term's own parameter gradient.
std::pair<double, double> siss_losses(const DenoiserParams& trainable,
                                      const std::vector<diffusion::BaseItem>& retain_batch,
                                      const std::vector<diffusion::BaseItem>& forget_batch,
                                      Vec* grad_retain = nullptr,
                                      Vec* grad_forget = nullptr);

// g_retain - lambda_eff * g_forget with lambda_eff = beta * |g_retain| / |g_forget|,
// norms taken over the full flattened parameter vector.
Vec siss_update_direction(const Vec& g_retain, const Vec& g_forget, double beta);

// Full-network fine-tune on real-sample latents: descend the retain term
// while subtracting the norm-matched forget gradient. The log columns carry
// (loss_forget = forget term, loss_preserve = retain term, loss_total =
// retain - lambda_eff * forget).
std::pair<DenoiserParams, std::vector<unlearn::StepLog>> run_siss(
    const DenoiserParams& frozen, const idspace::IdentityDataset& ds,
    int forget_identity, const SissConfig& cfg, const NoiseSchedule& sched,
    const SynthWorld& world);

struct UceEditRequest {
  Mat w_old;  // a K or V projection in storage orientation, applied y = W^T c
  std::vector<std::pair<Vec, Vec>> edits;  // (c_i, target output v_i_star)
  std::vector<Vec> preserve;               // conditions to keep fixed
  double alpha_e = 20.0;
  double alpha_p = 1.0;
  double lambda_reg = 0.7;
};

// Minimizer of alpha_e sum |W^T c_i - v_i*|^2 + alpha_p sum |W^T c_j -
// W_old^T c_j|^2 + lambda |W - W_old|_F^2, solved in closed form via the
// regularized normal equations.
Mat uce_edit(const UceEditRequest& req);

struct UceConfig {
  double alpha_e = 20.0;
  double alpha_p = 1.0;
  double lambda_reg = 0.7;
  bool surgical_only = false;
  int surgical_top_k = 2;
  double tau = 0.2;
  double anchor_tolerance = 1e-2;
  std::uint64_t seed = 0;
};

// Edits the K and V projections of every conditioning block (or of the
// top-scored blocks when surgical_only): the normalized forget centroid is
// remapped to each matrix's response to the normalized anchor centroid, with
// every retain centroid preserved. No gradient steps, so no training log.
DenoiserParams run_uce(const DenoiserParams& frozen,
                       const idspace::IdentityDataset& ds, int forget_identity,
                       const UceConfig& cfg,
                       const std::vector<metrics::LayerScore>* scores = nullptr);

struct WidConfig {
  double lambda_id = 0.1;
  double lr = 5e-6;
  long steps = 100;
  int batch = 32;
  double tau = 0.2;
  double anchor_tolerance = 1e-2;
  double style_scale = 0.5;
  std::uint64_t seed = 0;
};

// 1 - cosine similarity; equals half the squared distance for unit vectors.
double wid_identity_loss(const Vec& s_id, const Vec& s_hat);

// The batch stream run_wid trains on: latents encoded from the forget
// identity's real samples, conditioned and identity-targeted by the sample's
// own embedding, anchored at the anchor centroid. Per item the stream draws
// the pool index, the style normals, the timestep, and the noise, in that
// order. Captures ds, sched, and world by reference.
unlearn::BatchSource wid_batch_source(const idspace::IdentityDataset& ds,
                                      int forget_identity,
                                      const Vec& anchor_cond,
                                      const WidConfig& cfg,
                                      const NoiseSchedule& sched,
                                      const SynthWorld& world);

// Anchor-targeted fine-tune at eta = 0 plus the identity term
// lambda_id * mean |s_id - s_hat|^2, where s_hat is recognized from the
// recovered clean latent and gradients flow through the recovery.
std::pair<DenoiserParams, std::vector<unlearn::StepLog>> run_wid(
    const DenoiserParams& frozen, const idspace::IdentityDataset& ds,
    int forget_identity, const WidConfig& cfg, const NoiseSchedule& sched,
    const SynthWorld& world);

}  // namespace piu::baselines
