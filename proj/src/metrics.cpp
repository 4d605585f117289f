#include "piu/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "piu/kernels.hpp"

namespace piu::metrics {

namespace {

// Zero vectors carry no direction: two of them count as identical, one as
// orthogonal to anything. Keeps condition-blind activations at similarity 1
// among themselves instead of poisoning the means with NaNs.
double cosine_guarded(const Vec& u, const Vec& v) {
  double uu = kernels::sum_sq(u.data(), u.size());
  double vv = kernels::sum_sq(v.data(), v.size());
  if (uu == 0.0 && vv == 0.0) return 1.0;
  if (uu == 0.0 || vv == 0.0) return 0.0;
  return kernels::dot(u.data(), v.data(), u.size()) / std::sqrt(uu * vv);
}

double kernel_cubic(const Vec& a, const Vec& b) {
  double base = kernels::dot(a.data(), b.data(), a.size()) / a.size() + 1.0;
  return base * base * base;
}

}  // namespace

double ism(const std::vector<Vec>& embeddings, const Vec& centroid) {
  if (embeddings.empty())
    throw std::invalid_argument("ism needs at least one embedding");
  double acc = 0.0;
  for (const auto& e : embeddings) acc += cosine_guarded(e, centroid);
  return acc / static_cast<double>(embeddings.size());
}

int classify_nearest_centroid(const Vec& e, const std::vector<Vec>& centroids) {
  if (centroids.empty())
    throw std::invalid_argument("classification needs centroids");
  int best = 0;
  double best_sim = cosine_guarded(e, centroids[0]);
  for (std::size_t j = 1; j < centroids.size(); ++j) {
    double s = cosine_guarded(e, centroids[j]);
    if (s > best_sim) {
      best_sim = s;
      best = static_cast<int>(j);
    }
  }
  return best;
}

SrkResult srk_scores(const std::vector<Prediction>& preds, double epsilon) {
  long n_forget = 0, n_retain = 0, hit_forget = 0, hit_retain = 0;
  for (const auto& p : preds) {
    if (p.forget_group) {
      ++n_forget;
      hit_forget += p.predicted == p.truth;
    } else {
      ++n_retain;
      hit_retain += p.predicted == p.truth;
    }
  }
  if (n_forget == 0 || n_retain == 0)
    throw std::invalid_argument("srk needs both forget and retain predictions");
  SrkResult r;
  r.acc_u = static_cast<double>(hit_forget) / static_cast<double>(n_forget);
  r.acc_r = static_cast<double>(hit_retain) / static_cast<double>(n_retain);
  r.srk = r.acc_r / (r.acc_u + epsilon);
  return r;
}

double mmd2_unbiased(const std::vector<Vec>& x, const std::vector<Vec>& y) {
  const std::size_t m = x.size(), n = y.size();
  if (m < 2 || n < 2)
    throw std::invalid_argument("mmd2 needs at least 2 samples per set");
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) kxx += kernel_cubic(x[i], x[j]);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) kyy += kernel_cubic(y[i], y[j]);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) kxy += kernel_cubic(x[i], y[j]);
  const double dm = static_cast<double>(m), dn = static_cast<double>(n);
  return 2.0 * kxx / (dm * (dm - 1.0)) + 2.0 * kyy / (dn * (dn - 1.0)) -
         2.0 * kxy / (dm * dn);
}

SeparationProbe make_probe(const idspace::IdentityDataset& ds,
                           const diffusion::NoiseSchedule& sched,
                           std::uint64_t seed) {
  SeparationProbe probe;
  for (int id = 0; id < ds.num_identities; ++id) {
    SeparationProbe::IdentityGroup g;
    g.label = id;
    const auto& idx = ds.by_identity[id];
    for (std::size_t k = 0; k < idx.size() && k < 2; ++k)
      g.embeddings.push_back(ds.samples[idx[k]].values);
    probe.identities.push_back(std::move(g));
  }
  probe.query_timesteps = {(3 * sched.T) / 4, sched.T};
  for (std::uint64_t k = 0; k < 8; ++k)
    probe.latent_seeds.push_back(mix_seed(seed, k));
  return probe;
}

std::vector<LayerScore> layer_separation(const diffusion::DenoiserParams& params,
                                         const SeparationProbe& probe) {
  for (const auto& g : probe.identities)
    if (g.embeddings.size() < 2)
      throw std::invalid_argument(
          "separation probe needs >= 2 embeddings per identity");

  const int n_blocks = params.shape.n_blocks;
  const int D = params.shape.latent_dim();

  // Flattened per-condition features, indexed [block][condition], with the
  // owning identity recorded per condition.
  std::vector<int> owner;
  std::vector<std::vector<Vec>> kv(n_blocks);
  for (const auto& g : probe.identities)
    for (const auto& c : g.embeddings) {
      owner.push_back(g.label);
      for (int b = 0; b < n_blocks; ++b)
        kv[b].push_back(diffusion::kv_activation(params, b, c));
    }
  const std::size_t n_cond = owner.size();

  // The K/V features depend on the condition alone; confirm against a full
  // forward pass at both ends of the query window before trusting that.
  {
    const Vec& c0 = probe.identities[0].embeddings[0];
    Vec z(D, 0.0), eps;
    diffusion::Trace ta, tb;
    int t_lo = probe.query_timesteps.front(), t_hi = probe.query_timesteps.back();
    diffusion::denoise_forward(params, z.data(), t_lo, c0.data(), eps, &ta);
    diffusion::denoise_forward(params, z.data(), t_hi, c0.data(), eps, &tb);
    for (int b = 0; b < n_blocks; ++b)
      for (int j = 0; j < params.shape.tok_w; ++j) {
        if (std::abs(ta.k_c[b][j] - tb.k_c[b][j]) > 1e-12 ||
            std::abs(ta.v_c[b][j] - tb.v_c[b][j]) > 1e-12)
          throw std::runtime_error("condition K/V features vary with timestep");
      }
  }

  std::vector<LayerScore> scores(n_blocks);
  for (int b = 0; b < n_blocks; ++b) {
    scores[b].tag = params.block_tag(b);
    double intra = 0.0, inter = 0.0;
    long n_intra = 0, n_inter = 0;
    for (std::size_t i = 0; i < n_cond; ++i)
      for (std::size_t j = i + 1; j < n_cond; ++j) {
        double s = cosine_guarded(kv[b][i], kv[b][j]);
        if (owner[i] == owner[j]) {
          intra += s;
          ++n_intra;
        } else {
          inter += s;
          ++n_inter;
        }
      }
    scores[b].s_kv = intra / n_intra - inter / n_inter;
  }

  std::vector<Vec> latents;
  for (auto s : probe.latent_seeds)
    latents.push_back(Rng(s).normal_vec(D));

  std::vector<double> inter_q(n_blocks, 0.0);
  long n_pairs_q = 0;
  std::vector<std::vector<Vec>> q(n_blocks, std::vector<Vec>(n_cond));
  for (int t : probe.query_timesteps)
    for (const auto& z : latents) {
      std::size_t ci = 0;
      for (const auto& g : probe.identities)
        for (const auto& c : g.embeddings) {
          auto per_block = diffusion::q_activations(params, z, t, c);
          for (int b = 0; b < n_blocks; ++b) q[b][ci] = std::move(per_block[b]);
          ++ci;
        }
      for (std::size_t i = 0; i < n_cond; ++i)
        for (std::size_t j = i + 1; j < n_cond; ++j) {
          if (owner[i] == owner[j]) continue;
          for (int b = 0; b < n_blocks; ++b)
            inter_q[b] += cosine_guarded(q[b][i], q[b][j]);
          ++n_pairs_q;
        }
    }
  for (int b = 0; b < n_blocks; ++b)
    scores[b].s_q = 1.0 - inter_q[b] / static_cast<double>(n_pairs_q);
  return scores;
}

MetricsReport evaluate(const diffusion::DenoiserParams& params,
                       const diffusion::DenoiserParams& frozen,
                       const idspace::IdentityDataset& ds,
                       const diffusion::SynthWorld& world,
                       const diffusion::NoiseSchedule& sched,
                       int forget_identity, int n_samples, std::uint64_t seed,
                       double guidance) {
  if (n_samples < 1)
    throw std::invalid_argument("evaluate needs n_samples >= 1");

  MetricsReport r;
  r.layers = layer_separation(frozen, make_probe(ds, sched, mix_seed(seed, 1)));

  const std::uint64_t chain_stream = mix_seed(seed, 2);
  std::vector<Vec> forget_gen, retain_gen;
  std::vector<Prediction> preds;
  double retain_cos = 0.0;
  for (int id = 0; id < ds.num_identities; ++id) {
    const bool is_forget = id == forget_identity;
    auto val = ds.split_indices(
        id, is_forget ? idspace::Split::ForgetVal : idspace::Split::RetainVal);
    if (val.empty())
      throw std::invalid_argument("evaluate needs validation samples per identity");
    for (int j = 0; j < n_samples; ++j) {
      const Vec& cond = ds.samples[val[j % val.size()]].values;
      const std::uint64_t chain_seed = mix_seed(
          chain_stream, static_cast<std::uint64_t>(id) * n_samples + j);
      diffusion::Latent z0 =
          diffusion::sample(params, cond, sched, guidance, chain_seed);
      Vec emb = diffusion::recognize(world, z0.values);
      Prediction p;
      p.predicted = classify_nearest_centroid(emb, ds.centroids);
      p.truth = id;
      p.forget_group = is_forget;
      preds.push_back(p);
      if (is_forget) {
        forget_gen.push_back(std::move(emb));
      } else {
        retain_cos += cosine_guarded(emb, ds.centroids[id]);
        retain_gen.push_back(std::move(emb));
      }
    }
  }

  r.ism_forget = ism(forget_gen, ds.centroids[forget_identity]);
  r.ism_retain = retain_cos / static_cast<double>(retain_gen.size());
  SrkResult s = srk_scores(preds, r.srk_epsilon);
  r.acc_u = s.acc_u;
  r.acc_r = s.acc_r;
  r.srk = s.srk;

  std::vector<Vec> retain_val_real;
  for (int id = 0; id < ds.num_identities; ++id)
    for (int idx : ds.split_indices(id, idspace::Split::RetainVal))
      retain_val_real.push_back(ds.samples[idx].values);
  r.mmd2_forget = mmd2_unbiased(forget_gen, retain_val_real);
  r.mmd2_retain = mmd2_unbiased(retain_gen, retain_val_real);
  return r;
}

std::string report_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["ism_forget"] = r.ism_forget;
  j["ism_retain"] = r.ism_retain;
  j["acc_u"] = r.acc_u;
  j["acc_r"] = r.acc_r;
  j["srk"] = r.srk;
  j["mmd2_forget"] = r.mmd2_forget;
  j["mmd2_retain"] = r.mmd2_retain;
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : r.layers)
    j["layers"].push_back({{"tag", l.tag}, {"s_kv", l.s_kv}, {"s_q", l.s_q}});
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  MetricsReport r;
  r.ism_forget = j.at("ism_forget").get<double>();
  r.ism_retain = j.at("ism_retain").get<double>();
  r.acc_u = j.at("acc_u").get<double>();
  r.acc_r = j.at("acc_r").get<double>();
  r.srk = j.at("srk").get<double>();
  r.mmd2_forget = j.at("mmd2_forget").get<double>();
  r.mmd2_retain = j.at("mmd2_retain").get<double>();
  for (const auto& l : j.at("layers")) {
    LayerScore s;
    s.tag = l.at("tag").get<std::string>();
    s.s_kv = l.at("s_kv").get<double>();
    s.s_q = l.at("s_q").get<double>();
    r.layers.push_back(std::move(s));
  }
  return r;
}

}  // namespace piu::metrics
