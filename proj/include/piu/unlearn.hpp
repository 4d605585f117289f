#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "piu/diffusion.hpp"
#include "piu/idspace.hpp"
#include "piu/metrics.hpp"

// Anchor-guided unlearning: the modified forget target, the preservation
// objective, Dirichlet-mixed forget conditions over Gaussian latents, and
// surgical restriction of the update to the best-separated blocks. The
// training core is parameterized over a batch stream so the identity-guided
// baseline can run the exact same loop with its own data.

namespace piu::unlearn {

using diffusion::DenoiserParams;
using diffusion::Latent;
using diffusion::NoiseSchedule;
using diffusion::SynthWorld;

struct UnlearnConfig {
  double lambda_preserve = 10.0;
  double eta = 1.5;
  double tau = 0.2;
  double anchor_tolerance = 1e-2;
  long steps = 300;
  double lr = 1e-4;
  int batch_forget = 32;
  int batch_retain = 32;
  double dirichlet_alpha = 1.0;
  int mix_K = 2;
  bool surgical = false;
  int surgical_top_k = 2;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

struct SurgicalMask {
  // (block tag, matrix name) pairs; a parameter trains only when its
  // manifest name "<tag>.<matrix>" appears here.
  std::vector<std::pair<std::string, std::string>> entries;

  bool covers(const std::string& view_name) const;
};

double trainable_fraction(const SurgicalMask& mask, const DenoiserParams& p);

// Top-k blocks ranked by s_kv + s_q (ties to the lower block index); the
// selected blocks contribute all of their matrices.
SurgicalMask surgical_mask_from_scores(const DenoiserParams& p,
                                       const std::vector<metrics::LayerScore>& scores,
                                       int top_k);

// eps_hat = eps*(c_a) - eta * (eps*(c_f) - eps*(c_a)), all on the frozen model.
Vec forget_target(const DenoiserParams& frozen, const Latent& zt, int t,
                  const Vec& c_f, const Vec& c_a, double eta);

struct ForgetItem {
  Vec zt;
  int t = 0;
  Vec cond;         // mixed forget condition c_f
  Vec anchor_cond;  // c_a
  Vec s_id;         // identity target; empty outside identity-guided runs
};

struct RetainItem {
  Vec zt;
  int t = 0;
  Vec cond;
};

struct LossTerms {
  double forget = 0.0;
  double preserve = 0.0;
  double identity = 0.0;
  double total = 0.0;
};

// Shared loss core. eta == 0 skips the frozen c_f prediction entirely,
// lambda_preserve == 0 skips the retain batch, lambda_id == 0 skips the
// identity branch; the skipped branches contribute no floating-point work, so
// configurations that are algebraically equal are also bitwise equal.
// lambda_id > 0 needs sched and world for the x0 recovery and recognition.
// When grad is non-null it accumulates d(total)/d(theta).
LossTerms guided_losses(const DenoiserParams& trainable,
                        const DenoiserParams& frozen,
                        const std::vector<ForgetItem>& forget_batch,
                        const std::vector<RetainItem>& retain_batch,
                        double eta, double lambda_preserve, double lambda_id,
                        const NoiseSchedule* sched, const SynthWorld* world,
                        Vec* grad);

struct PiuLossTerms {
  double loss_forget = 0.0;
  double loss_preserve = 0.0;
  double loss_total = 0.0;
};

// loss_forget = mean |eps(c_f) - forget_target|^2 over the forget batch,
// loss_preserve = mean |eps(c_r) - eps*(c_r)|^2 over the retain batch,
// loss_total = loss_forget + lambda_preserve * loss_preserve.
PiuLossTerms piu_losses(const DenoiserParams& trainable,
                        const DenoiserParams& frozen,
                        const std::vector<ForgetItem>& forget_batch,
                        const std::vector<RetainItem>& retain_batch,
                        const UnlearnConfig& cfg, Vec* grad = nullptr);

struct StepLog {
  long step = 0;
  double loss_forget = 0.0;
  double loss_preserve = 0.0;
  double loss_total = 0.0;
  std::uint64_t theta_hash = 0;  // post-update parameter digest, not serialized
};

// Line format: step=<n> loss_forget=<f> loss_preserve=<f> loss_total=<f>
// with 17-significant-digit decimals.
std::string render_log(const std::vector<StepLog>& log);

// Fills the two batches for one training step (1-based).
using BatchSource = std::function<void(long step, std::vector<ForgetItem>&,
                                       std::vector<RetainItem>&)>;

struct GuidedRunConfig {
  double eta = 1.5;
  double lambda_preserve = 10.0;
  double lambda_id = 0.0;
  long steps = 300;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
};

// The optimization loop every guided method runs: pull batches, evaluate
// guided_losses, update the (possibly masked) parameters with AdamW. The
// logged loss_preserve column carries the preservation mean, or the identity
// mean when the identity branch is the one active.
std::pair<DenoiserParams, std::vector<StepLog>> run_guided(
    const DenoiserParams& frozen, const GuidedRunConfig& cfg,
    const SurgicalMask* mask, const BatchSource& source,
    const NoiseSchedule& sched, const SynthWorld* world);

// The full anchor-guided procedure: selects the anchor, streams Gaussian
// latents with Dirichlet-mixed forget conditions and retain-pool conditions,
// and trains under the config (surgical runs need the separation scores).
std::pair<DenoiserParams, std::vector<StepLog>> run_unlearning(
    const DenoiserParams& frozen, const idspace::IdentityDataset& ds,
    int forget_identity, const UnlearnConfig& cfg, const NoiseSchedule& sched,
    const std::vector<metrics::LayerScore>* scores = nullptr);

}  // namespace piu::unlearn
