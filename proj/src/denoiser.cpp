#include "piu/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "piu/errors.hpp"
#include "piu/hash.hpp"
#include "piu/kernels.hpp"

namespace piu::diffusion {

// Manifest slots are fixed by construction order, so the hot paths index them
// arithmetically instead of by name.
namespace {

constexpr int kInW = 0;
constexpr int kInB = 1;
constexpr int kPos = 2;
constexpr int kPerBlock = 9;
constexpr int kWq = 0, kWk = 1, kWv = 2, kNullK = 3, kNullV = 4;
constexpr int kFfW1 = 5, kFfB1 = 6, kFfW2 = 7, kFfB2 = 8;

int block_base(int b) { return 3 + kPerBlock * b; }
int out_w_slot(int n_blocks) { return 3 + kPerBlock * n_blocks; }

void push_view(std::vector<ParamView>& m, std::size_t& off,
               const std::string& name, int rows, int cols) {
  m.push_back({name, rows, cols, off});
  off += static_cast<std::size_t>(rows) * cols;
}

}  // namespace

const ParamView& DenoiserParams::view(const std::string& name) const {
  for (const auto& v : manifest)
    if (v.name == name) return v;
  throw std::out_of_range("unknown parameter: " + name);
}

DenoiserParams make_denoiser(const DenoiserShape& shape, std::uint64_t seed) {
  if (shape.n_tok < 1 || shape.tok_w < 2 || shape.tok_w % 2 != 0 ||
      shape.cond_dim < 1 || shape.n_blocks < 1 || shape.ff_dim < 1)
    throw ConfigError("denoiser shape needs positive dims and an even token width");

  DenoiserParams p;
  p.shape = shape;
  const int w = shape.tok_w, d = shape.cond_dim, f = shape.ff_dim;
  std::size_t off = 0;
  push_view(p.manifest, off, "in.W", w, w);
  push_view(p.manifest, off, "in.b", 1, w);
  push_view(p.manifest, off, "pos", shape.n_tok, w);
  for (int b = 0; b < shape.n_blocks; ++b) {
    const std::string tag = p.block_tag(b);
    push_view(p.manifest, off, tag + ".Wq", w, w);
    push_view(p.manifest, off, tag + ".Wk", d, w);
    push_view(p.manifest, off, tag + ".Wv", d, w);
    push_view(p.manifest, off, tag + ".null_k", 1, w);
    push_view(p.manifest, off, tag + ".null_v", 1, w);
    push_view(p.manifest, off, tag + ".ff.W1", w, f);
    push_view(p.manifest, off, tag + ".ff.b1", 1, f);
    push_view(p.manifest, off, tag + ".ff.W2", f, w);
    push_view(p.manifest, off, tag + ".ff.b2", 1, w);
  }
  push_view(p.manifest, off, "out.W", w, w);
  push_view(p.manifest, off, "out.b", 1, w);
  push_view(p.manifest, off, "null_cond", 1, d);
  p.theta.assign(off, 0.0);

  Rng rng(seed);
  for (const auto& v : p.manifest) {
    const bool bias = v.name.ends_with(".b") || v.name.ends_with(".b1") ||
                      v.name.ends_with(".b2");
    if (bias) continue;
    double sd;
    if (v.name == "pos")
      sd = 0.1;
    else if (v.name.ends_with("null_k") || v.name.ends_with("null_v"))
      sd = 0.5;
    else if (v.name == "null_cond")
      sd = 1.0;
    else
      sd = 1.0 / std::sqrt(static_cast<double>(v.rows));
    double* dst = p.data(v);
    for (std::size_t i = 0; i < v.count(); ++i) dst[i] = sd * rng.normal();
  }
  return p;
}

std::uint64_t param_checksum(const DenoiserParams& p) {
  return fnv1a64(p.theta.data(), p.theta.size() * sizeof(double));
}

Vec time_embedding(int t, int tok_w) {
  Vec e(tok_w);
  for (int i = 0; i < tok_w / 2; ++i) {
    double freq = std::pow(10000.0, -2.0 * i / tok_w);
    e[2 * i] = std::sin(t * freq);
    e[2 * i + 1] = std::cos(t * freq);
  }
  return e;
}

void Trace::init(const DenoiserShape& s) {
  const std::size_t nt = s.n_tok, w = s.tok_w, f = s.ff_dim, B = s.n_blocks;
  tok_in.resize(nt);
  for (auto& v : tok_in) v.resize(w);
  x.resize(B + 1);
  for (auto& v : x) v.resize(nt * w);
  q.resize(B);
  alpha.resize(B);
  y1.resize(B);
  ff_a.resize(B);
  k_c.resize(B);
  v_c.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    q[b].resize(nt * w);
    alpha[b].resize(nt * 2);
    y1[b].resize(nt * w);
    ff_a[b].resize(nt * f);
    k_c[b].resize(w);
    v_c[b].resize(w);
  }
  cond.resize(s.cond_dim);
  used_null = false;
}

void denoise_forward(const DenoiserParams& p, const double* z, int t,
                     const double* c, Vec& eps_out, Trace* trace) {
  static thread_local Trace scratch;
  Trace& tr = trace ? *trace : scratch;
  tr.init(p.shape);

  const auto& s = p.shape;
  const int nt = s.n_tok, w = s.tok_w, d = s.cond_dim, f = s.ff_dim;
  const double inv_sqrt_w = 1.0 / std::sqrt(static_cast<double>(w));

  tr.used_null = (c == nullptr);
  const double* cc = c ? c : p.data(p.manifest[out_w_slot(s.n_blocks) + 2]);
  std::copy(cc, cc + d, tr.cond.begin());

  const Vec e = time_embedding(t, w);
  const double* in_w = p.data(p.manifest[kInW]);
  const double* in_b = p.data(p.manifest[kInB]);
  const double* pos = p.data(p.manifest[kPos]);
  double* x0 = tr.x[0].data();
  for (int i = 0; i < nt; ++i) {
    double* ti = tr.tok_in[i].data();
    for (int j = 0; j < w; ++j) ti[j] = z[i * w + j] + e[j];
    double* xi = x0 + i * w;
    matvec_t(in_w, w, w, ti, xi);
    for (int j = 0; j < w; ++j) xi[j] += in_b[j] + pos[i * w + j];
  }

  Vec u(f);
  for (int b = 0; b < s.n_blocks; ++b) {
    const int base = block_base(b);
    const double* Wq = p.data(p.manifest[base + kWq]);
    const double* Wk = p.data(p.manifest[base + kWk]);
    const double* Wv = p.data(p.manifest[base + kWv]);
    const double* null_k = p.data(p.manifest[base + kNullK]);
    const double* null_v = p.data(p.manifest[base + kNullV]);
    const double* W1 = p.data(p.manifest[base + kFfW1]);
    const double* b1 = p.data(p.manifest[base + kFfB1]);
    const double* W2 = p.data(p.manifest[base + kFfW2]);
    const double* b2 = p.data(p.manifest[base + kFfB2]);

    double* kc = tr.k_c[b].data();
    double* vc = tr.v_c[b].data();
    matvec_t(Wk, d, w, tr.cond.data(), kc);
    matvec_t(Wv, d, w, tr.cond.data(), vc);

    const double* x_in = tr.x[b].data();
    double* x_out = tr.x[b + 1].data();
    for (int i = 0; i < nt; ++i) {
      const double* xi = x_in + i * w;
      double* qi = tr.q[b].data() + i * w;
      matvec_t(Wq, w, w, xi, qi);
      double s_c = kernels::dot(qi, kc, w) * inv_sqrt_w;
      double s_0 = kernels::dot(qi, null_k, w) * inv_sqrt_w;
      double m = std::max(s_c, s_0);
      double e_c = std::exp(s_c - m), e_0 = std::exp(s_0 - m);
      double a_c = e_c / (e_c + e_0), a_0 = e_0 / (e_c + e_0);
      tr.alpha[b][2 * i] = a_c;
      tr.alpha[b][2 * i + 1] = a_0;

      double* yi = tr.y1[b].data() + i * w;
      for (int j = 0; j < w; ++j)
        yi[j] = xi[j] + a_c * vc[j] + a_0 * null_v[j];

      matvec_t(W1, w, f, yi, u.data());
      double* ai = tr.ff_a[b].data() + i * f;
      for (int j = 0; j < f; ++j) ai[j] = std::tanh(u[j] + b1[j]);
      double* xo = x_out + i * w;
      matvec_t(W2, f, w, ai, xo);
      for (int j = 0; j < w; ++j) xo[j] += yi[j] + b2[j];
    }
  }

  const double* out_w = p.data(p.manifest[out_w_slot(s.n_blocks)]);
  const double* out_b = p.data(p.manifest[out_w_slot(s.n_blocks) + 1]);
  eps_out.resize(static_cast<std::size_t>(nt) * w);
  const double* xf = tr.x[s.n_blocks].data();
  for (int i = 0; i < nt; ++i) {
    double* eo = eps_out.data() + i * w;
    matvec_t(out_w, w, w, xf + i * w, eo);
    for (int j = 0; j < w; ++j) eo[j] += out_b[j];
  }
}

void denoise_backward(const DenoiserParams& p, const Trace& trace,
                      const Vec& g_eps, Vec& grad, Vec* g_z) {
  const auto& s = p.shape;
  const int nt = s.n_tok, w = s.tok_w, d = s.cond_dim, f = s.ff_dim;
  const double inv_sqrt_w = 1.0 / std::sqrt(static_cast<double>(w));

  Vec gx_a(static_cast<std::size_t>(nt) * w), gx_b(gx_a.size());
  double* gcur = gx_a.data();
  double* gnext = gx_b.data();

  const int out_slot = out_w_slot(s.n_blocks);
  const double* out_w = p.data(p.manifest[out_slot]);
  double* g_out_w = grad.data() + p.manifest[out_slot].offset;
  double* g_out_b = grad.data() + p.manifest[out_slot + 1].offset;
  const double* xf = trace.x[s.n_blocks].data();
  for (int i = 0; i < nt; ++i) {
    const double* ge = g_eps.data() + i * w;
    kernels::axpy(1.0, ge, g_out_b, w);
    add_outer(g_out_w, w, w, xf + i * w, ge);
    matvec(out_w, w, w, ge, gcur + i * w);
  }

  Vec ga(f), gu(f), gy1(w), gq(w), gk(w), gv(w), tmp_w(w), tmp_d(d);
  for (int b = s.n_blocks - 1; b >= 0; --b) {
    const int base = block_base(b);
    const double* Wq = p.data(p.manifest[base + kWq]);
    const double* Wk = p.data(p.manifest[base + kWk]);
    const double* Wv = p.data(p.manifest[base + kWv]);
    const double* null_k = p.data(p.manifest[base + kNullK]);
    const double* null_v = p.data(p.manifest[base + kNullV]);
    const double* W1 = p.data(p.manifest[base + kFfW1]);
    const double* W2 = p.data(p.manifest[base + kFfW2]);
    double* g_Wq = grad.data() + p.manifest[base + kWq].offset;
    double* g_Wk = grad.data() + p.manifest[base + kWk].offset;
    double* g_Wv = grad.data() + p.manifest[base + kWv].offset;
    double* g_null_k = grad.data() + p.manifest[base + kNullK].offset;
    double* g_null_v = grad.data() + p.manifest[base + kNullV].offset;
    double* g_W1 = grad.data() + p.manifest[base + kFfW1].offset;
    double* g_b1 = grad.data() + p.manifest[base + kFfB1].offset;
    double* g_W2 = grad.data() + p.manifest[base + kFfW2].offset;
    double* g_b2 = grad.data() + p.manifest[base + kFfB2].offset;

    const double* kc = trace.k_c[b].data();
    const double* vc = trace.v_c[b].data();
    std::fill(gk.begin(), gk.end(), 0.0);
    std::fill(gv.begin(), gv.end(), 0.0);

    for (int i = 0; i < nt; ++i) {
      const double* g2 = gcur + i * w;
      const double* y1i = trace.y1[b].data() + i * w;
      const double* ai = trace.ff_a[b].data() + i * f;
      const double* xi = trace.x[b].data() + i * w;
      const double* qi = trace.q[b].data() + i * w;

      kernels::axpy(1.0, g2, g_b2, w);
      add_outer(g_W2, f, w, ai, g2);
      matvec(W2, f, w, g2, ga.data());
      for (int j = 0; j < f; ++j) gu[j] = ga[j] * (1.0 - ai[j] * ai[j]);
      kernels::axpy(1.0, gu.data(), g_b1, f);
      add_outer(g_W1, w, f, y1i, gu.data());
      matvec(W1, w, f, gu.data(), gy1.data());
      kernels::axpy(1.0, g2, gy1.data(), w);

      const double a_c = trace.alpha[b][2 * i];
      const double a_0 = trace.alpha[b][2 * i + 1];
      kernels::axpy(a_c, gy1.data(), gv.data(), w);
      kernels::axpy(a_0, gy1.data(), g_null_v, w);
      const double g_ac = kernels::dot(gy1.data(), vc, w);
      const double g_a0 = kernels::dot(gy1.data(), null_v, w);
      const double sum = a_c * g_ac + a_0 * g_a0;
      const double g_sc = a_c * (g_ac - sum);
      const double g_s0 = a_0 * (g_a0 - sum);
      for (int j = 0; j < w; ++j)
        gq[j] = (g_sc * kc[j] + g_s0 * null_k[j]) * inv_sqrt_w;
      kernels::axpy(g_sc * inv_sqrt_w, qi, gk.data(), w);
      kernels::axpy(g_s0 * inv_sqrt_w, qi, g_null_k, w);
      add_outer(g_Wq, w, w, xi, gq.data());
      matvec(Wq, w, w, gq.data(), gnext + i * w);
      kernels::axpy(1.0, gy1.data(), gnext + i * w, w);
    }

    add_outer(g_Wk, d, w, trace.cond.data(), gk.data());
    add_outer(g_Wv, d, w, trace.cond.data(), gv.data());
    if (trace.used_null) {
      double* g_null_cond = grad.data() + p.manifest[out_slot + 2].offset;
      matvec(Wk, d, w, gk.data(), tmp_d.data());
      kernels::axpy(1.0, tmp_d.data(), g_null_cond, d);
      matvec(Wv, d, w, gv.data(), tmp_d.data());
      kernels::axpy(1.0, tmp_d.data(), g_null_cond, d);
    }
    std::swap(gcur, gnext);
  }

  const double* in_w = p.data(p.manifest[kInW]);
  double* g_in_w = grad.data() + p.manifest[kInW].offset;
  double* g_in_b = grad.data() + p.manifest[kInB].offset;
  double* g_pos = grad.data() + p.manifest[kPos].offset;
  for (int i = 0; i < nt; ++i) {
    const double* gx0 = gcur + i * w;
    kernels::axpy(1.0, gx0, g_in_b, w);
    kernels::axpy(1.0, gx0, g_pos + i * w, w);
    add_outer(g_in_w, w, w, trace.tok_in[i].data(), gx0);
    if (g_z) {
      matvec(in_w, w, w, gx0, tmp_w.data());
      kernels::axpy(1.0, tmp_w.data(), g_z->data() + i * w, w);
    }
  }
}

Vec denoise_predict(const DenoiserParams& p, const Latent& zt, int t,
                    const Vec& c) {
  Vec eps;
  denoise_forward(p, zt.values.data(), t, c.empty() ? nullptr : c.data(), eps,
                  nullptr);
  return eps;
}

Vec kv_activation(const DenoiserParams& p, int block, const Vec& c) {
  const int w = p.shape.tok_w, d = p.shape.cond_dim;
  const int base = block_base(block);
  Vec out(2 * static_cast<std::size_t>(w));
  matvec_t(p.data(p.manifest[base + kWk]), d, w, c.data(), out.data());
  matvec_t(p.data(p.manifest[base + kWv]), d, w, c.data(), out.data() + w);
  return out;
}

std::vector<Vec> q_activations(const DenoiserParams& p, const Vec& z, int t,
                               const Vec& c) {
  Trace tr;
  Vec eps;
  denoise_forward(p, z.data(), t, c.empty() ? nullptr : c.data(), eps, &tr);
  std::vector<Vec> out(p.shape.n_blocks);
  for (int b = 0; b < p.shape.n_blocks; ++b) out[b] = tr.q[b];
  return out;
}

Latent sample(const DenoiserParams& p, const Vec& c, const NoiseSchedule& sched,
              double guidance_scale, std::uint64_t seed) {
  Rng rng(seed);
  const int D = p.shape.latent_dim();
  Latent z;
  z.timestep = sched.T;
  z.values = rng.normal_vec(D);
  Vec eps_c, eps_0;
  for (int t = sched.T; t >= 1; --t) {
    denoise_forward(p, z.values.data(), t, c.data(), eps_c, nullptr);
    if (guidance_scale != 1.0) {
      denoise_forward(p, z.values.data(), t, nullptr, eps_0, nullptr);
      for (int i = 0; i < D; ++i)
        eps_c[i] = eps_0[i] + guidance_scale * (eps_c[i] - eps_0[i]);
    }
    const Vec noise = t > 1 ? rng.normal_vec(D) : Vec{};
    z = ancestral_step(z, t, eps_c, sched, noise);
  }
  return z;
}

}  // namespace piu::diffusion
