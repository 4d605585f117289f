#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "piu/linalg.hpp"
#include "piu/rng.hpp"

// Synthetic identity-embedding universe: unit-sphere identity clusters,
// centroids, cosine geometry, density clustering, proximity-based anchor
// selection, and Dirichlet mixing of forget conditions.

namespace piu::idspace {

enum class Split { ForgetTrain, ForgetVal, RetainTrain, RetainVal };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct Sample {
  Vec values;    // unit L2 norm when produced by the generator or recognizer
  int identity;  // label in [0, num_identities)
  Split split;
};

struct IdentityDataset {
  int dim = 0;
  int num_identities = 0;
  std::vector<Sample> samples;
  std::vector<std::vector<int>> by_identity;  // sample indices per label
  std::vector<Vec> centroids;                 // plain means, not renormalized
  int forget_identity = -1;                   // -1 until assign_splits names one

  std::vector<int> split_indices(int identity, Split s) const;
  std::vector<const Vec*> embeddings_of(int identity) const;
  void rebuild_index();  // recompute by_identity and centroids from samples
};

// Identity centers drawn uniformly on the unit sphere; each sample is
// normalize(center + spread * gaussian). Engine word order: per identity, one
// dim-vector of normals for the center, then per sample one dim-vector of
// normals for the offset. Splits start in the no-forget-identity state (every
// identity 90/10 retain-train/retain-val).
IdentityDataset generate_identities(int num_identities, int samples_per_identity,
                                    double spread, int dim, std::uint64_t seed);

// Re-partitions splits around one forget identity: its samples go
// forget-train/forget-val at (1 - forget_val_frac)/forget_val_frac, every
// other identity retain-train/retain-val at (1 - retain_val_frac)/
// retain_val_frac. Validation takes the last max(1, round(frac * n)) samples
// of each identity, so the assignment is deterministic with no extra seed.
void assign_splits(IdentityDataset& ds, int forget_identity,
                   double forget_val_frac = 0.35, double retain_val_frac = 0.10);

Vec centroid(const std::vector<Vec>& samples);
double cosine_sim(const Vec& u, const Vec& v);

// DBSCAN under cosine distance (1 - cosine_sim), neighborhoods at distance
// <= eps including the point itself, min_cluster_size as the core threshold.
// Clusters are numbered by discovery order over ascending point index; noise
// is -1.
std::vector<int> cluster_identities(const std::vector<Vec>& embeddings,
                                    double eps = 0.35, int min_cluster_size = 2);

struct AnchorQuery {
  double tau = 0.2;
  double tolerance = 1e-2;
  int forget_identity = 0;
  std::uint64_t rng_seed = 0;
};

// s_j = cosine_sim(centroid_f, centroid_j) for every j != f; the candidate
// set keeps |s_j - tau| < tolerance; the anchor is a uniform seeded draw from
// the candidates (ascending label order, one uniform_below draw).
int select_anchor(const IdentityDataset& ds, const AnchorQuery& q);

struct MixSpec {
  int K = 2;
  double alpha = 1.0;
  std::uint64_t rng_seed = 0;
};

// Draws K sources without replacement (partial Fisher-Yates over the index
// array: for k in [0, K), swap index k with k + uniform_below(n - k)), then
// weights w ~ Dirichlet(alpha * 1_K) over the drawn sources in draw order.
// The result sum w_k c_k is not renormalized.
Vec mix_forget_conditions(const std::vector<Vec>& sources, int K, double alpha,
                          Rng& rng);
Vec mix_forget_conditions(const std::vector<Vec>& sources, const MixSpec& spec);

// Line-oriented text format: header "piu-idset v1 dim=<d>", then one sample
// per line "<identity_label> <split> <d floats at 17 significant digits>".
void save_idset(const IdentityDataset& ds, const std::string& path);
IdentityDataset load_idset(const std::string& path);

}  // namespace piu::idspace
