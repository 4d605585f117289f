#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "piu/idspace.hpp"
#include "piu/linalg.hpp"
#include "piu/rng.hpp"

// Desk-scale identity-conditioned latent diffusion: linear noise schedule,
// forward corruption and its inverse, a token-attention denoiser with tagged
// conditioning blocks, ancestral sampling with optional classifier-free
// guidance, and the synthetic observation/recognition pair that stands in for
// the image decoder and the face recognizer.

namespace piu::diffusion {

struct NoiseSchedule {
  int T = 0;
  Vec beta;       // indexed t-1 for t in [1, T]
  Vec alpha_bar;  // cumulative products, same indexing

  // alpha_bar with the virtual t=0 entry equal to 1.
  double abar(int t) const;
  double gamma(int t) const { return std::sqrt(abar(t)); }
  double sigma(int t) const { return std::sqrt(1.0 - abar(t)); }
};

NoiseSchedule make_schedule(int T, double beta_min, double beta_max);

struct Latent {
  Vec values;
  int timestep = 0;
};

Latent forward_diffuse(const Latent& z0, int t, const Vec& eps,
                       const NoiseSchedule& sched);
Latent predict_x0(const Latent& zt, int t, const Vec& eps_hat,
                  const NoiseSchedule& sched);
// One ancestral reverse step z_t -> z_{t-1}; noise must be empty at t=1 and a
// latent-sized standard-normal draw otherwise.
Latent ancestral_step(const Latent& zt, int t, const Vec& eps_hat,
                      const NoiseSchedule& sched, const Vec& noise);

// ---------------------------------------------------------------------------
// Denoiser

struct DenoiserShape {
  int n_tok = 8;     // latent tokens
  int tok_w = 8;     // token width; also the attention head width
  int cond_dim = 32; // identity embedding dimension d
  int n_blocks = 4;  // conditioning blocks, tagged L1..L{n_blocks}
  int ff_dim = 16;   // feed-forward hidden width

  int latent_dim() const { return n_tok * tok_w; }
};

struct ParamView {
  std::string name;  // "in.W", "pos", "L2.Wk", "L3.ff.W1", "out.b", ...
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;

  std::size_t count() const { return static_cast<std::size_t>(rows) * cols; }
};

// All parameters live in one flat vector behind a fixed-order manifest; the
// optimizer, the surgical mask, checkpointing, gradient checks, and the
// flattened-gradient rules all index the same layout. Per block, in manifest
// order: Wq (w x w), Wk (d x w), Wv (d x w), null_k, null_v (w), ff.W1
// (w x f), ff.b1 (f), ff.W2 (f x w), ff.b2 (w). Projections apply as y = W^T x.
struct DenoiserParams {
  DenoiserShape shape;
  std::vector<ParamView> manifest;
  Vec theta;

  const ParamView& view(const std::string& name) const;
  double* data(const ParamView& v) { return theta.data() + v.offset; }
  const double* data(const ParamView& v) const { return theta.data() + v.offset; }
  double* data(const std::string& name) { return theta.data() + view(name).offset; }
  const double* data(const std::string& name) const {
    return theta.data() + view(name).offset;
  }
  std::string block_tag(int b) const { return "L" + std::to_string(b + 1); }
};

DenoiserParams make_denoiser(const DenoiserShape& shape, std::uint64_t seed);
// FNV-1a over the raw bytes of theta; the frozen-model invariant checks this.
std::uint64_t param_checksum(const DenoiserParams& p);

// Per-item forward record, consumed by the backward pass. Allocate once via
// init and reuse across items.
struct Trace {
  std::vector<Vec> tok_in;                 // z_i + e(t), per token
  std::vector<Vec> x;                      // token states, (n_blocks+1) stages
  std::vector<Vec> q;                      // per block, n_tok * w flattened
  std::vector<Vec> alpha;                  // per block, n_tok * 2 (cond, null)
  std::vector<Vec> y1;                     // per block, post-attention tokens
  std::vector<Vec> ff_a;                   // per block, n_tok * f tanh outputs
  std::vector<Vec> k_c, v_c;               // per block, condition K/V
  Vec cond;                                // effective condition (null_cond when dropped)
  bool used_null = false;

  void init(const DenoiserShape& s);
};

// e(t): tok_w/2 sinusoid pairs at frequencies 10000^(-2i/tok_w).
Vec time_embedding(int t, int tok_w);

void denoise_forward(const DenoiserParams& p, const double* z, int t,
                     const double* c, Vec& eps_out, Trace* trace);
// Accumulates d(loss)/d(theta) into grad (flat, same layout as theta) given
// d(loss)/d(eps_out). When g_z is non-null, also accumulates d(loss)/d(z_t).
void denoise_backward(const DenoiserParams& p, const Trace& trace,
                      const Vec& g_eps, Vec& grad, Vec* g_z = nullptr);

Vec denoise_predict(const DenoiserParams& p, const Latent& zt, int t,
                    const Vec& c);

// Activation probes for the layer-separation analysis: K/V of one block for a
// condition (concat of W_k^T c and W_v^T c, condition-only by construction),
// and per-block flattened query activations for a latent/timestep/condition.
Vec kv_activation(const DenoiserParams& p, int block, const Vec& c);
std::vector<Vec> q_activations(const DenoiserParams& p, const Vec& z, int t,
                               const Vec& c);

// Ancestral chain from z_T ~ N(0, I), deterministic per seed: draws D normals
// for z_T, then D more per reverse step down to t=2. At guidance_scale 1 the
// unconditional branch is skipped; otherwise
// eps = eps_null + g (eps_cond - eps_null) with the learned null embedding.
Latent sample(const DenoiserParams& p, const Vec& c, const NoiseSchedule& sched,
              double guidance_scale, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic world

struct SynthWorld {
  Mat A;  // D x d, orthonormal columns (identity axes)
  Mat B;  // D x d_s, orthonormal columns orthogonal to A
};

// A = [I_d; 0], B = [0; I_ds]: the default world keeps identity coordinates
// axis-aligned with the first tokens, which the block-attention denoiser can
// actually represent at this scale.
SynthWorld make_axis_world(int D, int d, int d_s);
// QR of a seeded Gaussian; exercises the orthogonality invariants on
// unstructured axes.
SynthWorld make_random_world(int D, int d, int d_s, std::uint64_t seed);

Vec synth_observe(const SynthWorld& w, const Vec& c, const Vec& style);
// normalize(A^T x); throws Unrecognizable when x has no identity component.
Vec recognize(const SynthWorld& w, const Vec& x);

// ---------------------------------------------------------------------------
// Base training

struct TrainConfig {
  long steps = 4000;
  int batch = 32;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double style_scale = 0.5;     // style ~ N(0, style_scale^2 I)
  double null_drop_prob = 0.1;  // condition dropout rate training the null branch
  std::uint64_t seed = 0;
};

struct BaseItem {
  Vec zt;
  int t = 0;
  Vec cond;  // empty means the null-condition branch
  Vec eps;
};

// Mean over items of ||eps - eps_theta(z_t, t, c)||^2; accumulates the
// analytic gradient into grad when non-null.
double base_loss(const DenoiserParams& p, const std::vector<BaseItem>& items,
                 Vec* grad);

DenoiserParams train_base(const idspace::IdentityDataset& ds,
                          const SynthWorld& world, const NoiseSchedule& sched,
                          const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoints: binary little-endian, magic "PIUCKPT1", manifest of (name,
// rows, cols) per matrix, then row-major float64 payload. Round trips are
// bit-exact.

void save_checkpoint(const DenoiserParams& p, const std::string& path);
DenoiserParams load_checkpoint(const std::string& path);

}  // namespace piu::diffusion
