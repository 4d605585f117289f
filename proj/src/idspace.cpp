#include "piu/idspace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "piu/errors.hpp"
#include "piu/kernels.hpp"

namespace piu::idspace {

const char* split_name(Split s) {
  switch (s) {
    case Split::ForgetTrain: return "forget-train";
    case Split::ForgetVal: return "forget-val";
    case Split::RetainTrain: return "retain-train";
    case Split::RetainVal: return "retain-val";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "forget-train") return Split::ForgetTrain;
  if (name == "forget-val") return Split::ForgetVal;
  if (name == "retain-train") return Split::RetainTrain;
  if (name == "retain-val") return Split::RetainVal;
  throw std::invalid_argument("unknown split name: " + name);
}

std::vector<int> IdentityDataset::split_indices(int identity, Split s) const {
  std::vector<int> out;
  for (int idx : by_identity[static_cast<std::size_t>(identity)])
    if (samples[static_cast<std::size_t>(idx)].split == s) out.push_back(idx);
  return out;
}

std::vector<const Vec*> IdentityDataset::embeddings_of(int identity) const {
  std::vector<const Vec*> out;
  for (int idx : by_identity[static_cast<std::size_t>(identity)])
    out.push_back(&samples[static_cast<std::size_t>(idx)].values);
  return out;
}

void IdentityDataset::rebuild_index() {
  by_identity.assign(static_cast<std::size_t>(num_identities), {});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    int id = samples[i].identity;
    if (id < 0 || id >= num_identities)
      throw std::invalid_argument("sample identity out of range");
    by_identity[static_cast<std::size_t>(id)].push_back(static_cast<int>(i));
  }
  centroids.assign(static_cast<std::size_t>(num_identities), Vec());
  for (int id = 0; id < num_identities; ++id) {
    std::vector<Vec> embs;
    for (int idx : by_identity[static_cast<std::size_t>(id)])
      embs.push_back(samples[static_cast<std::size_t>(idx)].values);
    if (embs.empty())
      throw std::invalid_argument("identity with no samples: " + std::to_string(id));
    centroids[static_cast<std::size_t>(id)] = centroid(embs);
  }
}

IdentityDataset generate_identities(int num_identities, int samples_per_identity,
                                    double spread, int dim, std::uint64_t seed) {
  if (num_identities < 2)
    throw std::invalid_argument("generate_identities: need at least 2 identities");
  if (samples_per_identity < 1)
    throw std::invalid_argument("generate_identities: need at least 1 sample per identity");
  if (spread < 0.0)
    throw std::invalid_argument("generate_identities: spread must be >= 0");
  if (dim < 2) throw std::invalid_argument("generate_identities: dim must be >= 2");

  IdentityDataset ds;
  ds.dim = dim;
  ds.num_identities = num_identities;
  Rng rng(seed);
  for (int id = 0; id < num_identities; ++id) {
    Vec center = rng.normal_vec(static_cast<std::size_t>(dim));
    normalize_in_place(center);
    for (int s = 0; s < samples_per_identity; ++s) {
      Vec v = center;
      for (int k = 0; k < dim; ++k) v[static_cast<std::size_t>(k)] += spread * rng.normal();
      normalize_in_place(v);
      ds.samples.push_back({std::move(v), id, Split::RetainTrain});
    }
  }
  ds.rebuild_index();
  assign_splits(ds, -1);
  return ds;
}

void assign_splits(IdentityDataset& ds, int forget_identity,
                   double forget_val_frac, double retain_val_frac) {
  if (forget_identity >= ds.num_identities)
    throw std::invalid_argument("assign_splits: forget identity out of range");
  ds.forget_identity = forget_identity;
  for (int id = 0; id < ds.num_identities; ++id) {
    const auto& idx = ds.by_identity[static_cast<std::size_t>(id)];
    const bool forget = (id == forget_identity);
    const double frac = forget ? forget_val_frac : retain_val_frac;
    const auto n = static_cast<long>(idx.size());
    long n_val = std::max(1l, std::lround(frac * static_cast<double>(n)));
    n_val = std::min(n_val, n);
    for (long i = 0; i < n; ++i) {
      Split s = (i >= n - n_val) ? (forget ? Split::ForgetVal : Split::RetainVal)
                                 : (forget ? Split::ForgetTrain : Split::RetainTrain);
      ds.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])].split = s;
    }
  }
}

Vec centroid(const std::vector<Vec>& samples) {
  if (samples.empty()) throw std::invalid_argument("centroid: empty sample list");
  const std::size_t dim = samples.front().size();
  Vec mu(dim, 0.0);
  for (const auto& s : samples) {
    if (s.size() != dim) throw std::invalid_argument("centroid: dimension mismatch");
    kernels::axpy(1.0, s.data(), mu.data(), dim);
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (auto& x : mu) x *= inv;
  return mu;
}

double cosine_sim(const Vec& u, const Vec& v) {
  if (u.size() != v.size())
    throw std::invalid_argument("cosine_sim: dimension mismatch");
  const double nu = norm2(u);
  const double nv = norm2(v);
  if (nu == 0.0 || nv == 0.0)
    throw std::invalid_argument("cosine_sim: zero vector");
  return kernels::dot(u.data(), v.data(), u.size()) / (nu * nv);
}

std::vector<int> cluster_identities(const std::vector<Vec>& embeddings,
                                    double eps, int min_cluster_size) {
  if (embeddings.empty())
    throw std::invalid_argument("cluster_identities: empty input");
  if (!(eps > 0.0 && eps < 2.0))
    throw std::invalid_argument("cluster_identities: eps must be in (0, 2)");
  if (min_cluster_size < 1)
    throw std::invalid_argument("cluster_identities: min_cluster_size must be >= 1");

  const int n = static_cast<int>(embeddings.size());
  auto neighbors = [&](int i) {
    std::vector<int> out;
    for (int j = 0; j < n; ++j)
      if (1.0 - cosine_sim(embeddings[static_cast<std::size_t>(i)],
                           embeddings[static_cast<std::size_t>(j)]) <= eps)
        out.push_back(j);
    return out;
  };

  constexpr int kUnvisited = -2;
  std::vector<int> labels(static_cast<std::size_t>(n), kUnvisited);
  int cluster = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[static_cast<std::size_t>(i)] != kUnvisited) continue;
    auto ni = neighbors(i);
    if (static_cast<int>(ni.size()) < min_cluster_size) {
      labels[static_cast<std::size_t>(i)] = -1;
      continue;
    }
    labels[static_cast<std::size_t>(i)] = cluster;
    std::deque<int> queue(ni.begin(), ni.end());
    while (!queue.empty()) {
      int j = queue.front();
      queue.pop_front();
      auto& lj = labels[static_cast<std::size_t>(j)];
      if (lj == -1) lj = cluster;  // border point adopted by the first cluster
      if (lj != kUnvisited) continue;
      lj = cluster;
      auto nj = neighbors(j);
      if (static_cast<int>(nj.size()) >= min_cluster_size)
        queue.insert(queue.end(), nj.begin(), nj.end());
    }
    ++cluster;
  }
  return labels;
}

int select_anchor(const IdentityDataset& ds, const AnchorQuery& q) {
  if (q.forget_identity < 0 || q.forget_identity >= ds.num_identities)
    throw std::invalid_argument("select_anchor: forget identity not in dataset");
  if (ds.num_identities < 2)
    throw std::invalid_argument("select_anchor: need another identity to anchor to");
  if (!(q.tolerance > 0.0))
    throw std::invalid_argument("select_anchor: tolerance must be > 0");
  if (!(q.tau > -1.0 && q.tau < 1.0))
    throw std::invalid_argument("select_anchor: tau must be in (-1, 1)");

  const Vec& mu_f = ds.centroids[static_cast<std::size_t>(q.forget_identity)];
  std::vector<int> candidates;
  double nearest = std::numeric_limits<double>::infinity();
  for (int j = 0; j < ds.num_identities; ++j) {
    if (j == q.forget_identity) continue;
    double gap = std::fabs(
        cosine_sim(mu_f, ds.centroids[static_cast<std::size_t>(j)]) - q.tau);
    nearest = std::min(nearest, gap);
    if (gap < q.tolerance) candidates.push_back(j);
  }
  if (candidates.empty()) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "no anchor found: nearest |s_j - tau| = %.6g exceeds tolerance %.6g",
                  nearest, q.tolerance);
    throw NoAnchorFound(buf, nearest);
  }
  Rng rng(q.rng_seed);
  return candidates[rng.uniform_below(candidates.size())];
}

Vec mix_forget_conditions(const std::vector<Vec>& sources, int K, double alpha,
                          Rng& rng) {
  const int n = static_cast<int>(sources.size());
  if (K < 1) throw std::invalid_argument("mix_forget_conditions: K must be >= 1");
  if (K > n)
    throw std::invalid_argument("mix_forget_conditions: K exceeds source count");
  if (!(alpha > 0.0))
    throw std::invalid_argument("mix_forget_conditions: alpha must be > 0");

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int k = 0; k < K; ++k) {
    auto j = static_cast<std::size_t>(k) +
             rng.uniform_below(static_cast<std::uint64_t>(n - k));
    std::swap(order[static_cast<std::size_t>(k)], order[j]);
  }
  Vec w = rng.dirichlet(alpha, K);
  Vec out(sources.front().size(), 0.0);
  for (int k = 0; k < K; ++k)
    kernels::axpy(w[static_cast<std::size_t>(k)],
                  sources[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])].data(),
                  out.data(), out.size());
  return out;
}

Vec mix_forget_conditions(const std::vector<Vec>& sources, const MixSpec& spec) {
  Rng rng(spec.rng_seed);
  return mix_forget_conditions(sources, spec.K, spec.alpha, rng);
}

void save_idset(const IdentityDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "piu-idset v1 dim=" << ds.dim << "\n";
  char num[40];
  for (const auto& s : ds.samples) {
    out << s.identity << ' ' << split_name(s.split);
    for (double x : s.values) {
      std::snprintf(num, sizeof(num), "%.17g", x);
      out << ' ' << num;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

IdentityDataset load_idset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string header;
  if (!std::getline(in, header))
    throw std::invalid_argument("idset: missing header");
  int dim = 0;
  if (std::sscanf(header.c_str(), "piu-idset v1 dim=%d", &dim) != 1 || dim < 2)
    throw std::invalid_argument("idset: bad header: " + header);

  IdentityDataset ds;
  ds.dim = dim;
  std::string line;
  int max_id = -1;
  bool any_forget = false;
  int forget_id = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Sample s;
    std::string split_tok;
    if (!(ls >> s.identity >> split_tok))
      throw std::invalid_argument("idset: bad sample line: " + line);
    s.split = split_from_name(split_tok);
    s.values.resize(static_cast<std::size_t>(dim));
    for (int k = 0; k < dim; ++k)
      if (!(ls >> s.values[static_cast<std::size_t>(k)]))
        throw std::invalid_argument("idset: short sample line: " + line);
    if (s.split == Split::ForgetTrain || s.split == Split::ForgetVal) {
      any_forget = true;
      forget_id = s.identity;
    }
    max_id = std::max(max_id, s.identity);
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw std::invalid_argument("idset: no samples");
  ds.num_identities = max_id + 1;
  ds.forget_identity = any_forget ? forget_id : -1;
  ds.rebuild_index();
  return ds;
}

}  // namespace piu::idspace
