#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "piu/diffusion.hpp"
#include "piu/idspace.hpp"
#include "piu/linalg.hpp"

// Evaluation suite: identity similarity to centroids, nearest-centroid
// accuracy with the retention ratio, unbiased kernel distance between
// embedding samples, and the per-block separation scores that drive surgical
// layer selection.

namespace piu::metrics {

struct LayerScore {
  std::string tag;
  double s_kv = 0.0;
  double s_q = 0.0;
};

struct MetricsReport {
  double ism_forget = 0.0;
  double ism_retain = 0.0;
  double acc_u = 0.0;
  double acc_r = 0.0;
  double srk = 0.0;
  double srk_epsilon = 1e-2;
  double mmd2_forget = 0.0;
  double mmd2_retain = 0.0;
  std::vector<LayerScore> layers;
};

// Mean cosine similarity between each embedding and the group centroid.
double ism(const std::vector<Vec>& embeddings, const Vec& centroid);

// Highest cosine similarity wins; ties go to the lower label.
int classify_nearest_centroid(const Vec& e, const std::vector<Vec>& centroids);

struct Prediction {
  int predicted = -1;
  int truth = -1;
  bool forget_group = false;
};

struct SrkResult {
  double acc_u = 0.0;
  double acc_r = 0.0;
  double srk = 0.0;
};

// acc_u: forget-group samples still recognized as their true identity;
// acc_r: retain-group samples recognized correctly; srk = acc_r/(acc_u + eps).
SrkResult srk_scores(const std::vector<Prediction>& preds, double epsilon = 1e-2);

// Unbiased squared-MMD estimate under the cubic kernel (a.b/d + 1)^3; may be
// slightly negative.
double mmd2_unbiased(const std::vector<Vec>& x, const std::vector<Vec>& y);

struct SeparationProbe {
  struct IdentityGroup {
    int label = -1;
    std::vector<Vec> embeddings;  // at least 2 per identity
  };
  std::vector<IdentityGroup> identities;
  std::vector<int> query_timesteps;          // default {3T/4, T}
  std::vector<std::uint64_t> latent_seeds;   // shared probe latents
};

// Probe over all identities with their first two embeddings, the default
// query timesteps, and 8 sub-seeded probe latents.
SeparationProbe make_probe(const idspace::IdentityDataset& ds,
                           const diffusion::NoiseSchedule& sched,
                           std::uint64_t seed);

// s_kv = mean within-identity minus mean cross-identity cosine similarity of
// the per-block condition K/V features (timestep-independent, checked); s_q =
// 1 - mean cross-identity cosine similarity of query features over the probe
// latents and query timesteps.
std::vector<LayerScore> layer_separation(const diffusion::DenoiserParams& params,
                                         const SeparationProbe& probe);

// Samples n_samples conditioned chains per identity (conditions cycle that
// identity's validation embeddings), recognizes the results, and assembles the
// full report; layer scores come from the frozen model. Deterministic per
// seed.
MetricsReport evaluate(const diffusion::DenoiserParams& params,
                       const diffusion::DenoiserParams& frozen,
                       const idspace::IdentityDataset& ds,
                       const diffusion::SynthWorld& world,
                       const diffusion::NoiseSchedule& sched,
                       int forget_identity, int n_samples, std::uint64_t seed,
                       double guidance = 1.0);

std::string report_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& text);

}  // namespace piu::metrics
