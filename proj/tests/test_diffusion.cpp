#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "doctest.h"
#include "piu/diffusion.hpp"
#include "piu/errors.hpp"
#include "piu/kernels.hpp"
#include "test_support.hpp"

using namespace piu::diffusion;
using piu::Rng;
using piu::Vec;

namespace {

DenoiserShape tiny_shape() {
  DenoiserShape s;
  s.n_tok = 2;
  s.tok_w = 4;
  s.cond_dim = 4;
  s.n_blocks = 1;
  s.ff_dim = 4;
  return s;
}

}  // namespace

TEST_CASE("schedule betas are linear and alpha_bar telescopes") {
  const auto s = make_schedule(2, 0.1, 0.3);
  REQUIRE(s.T == 2);
  REQUIRE(s.beta.size() == 2);
  CHECK(s.beta[0] == doctest::Approx(0.1));
  CHECK(s.beta[1] == doctest::Approx(0.3));
  CHECK(s.abar(0) == 1.0);
  CHECK(s.abar(1) == doctest::Approx(0.9));
  CHECK(s.abar(2) == doctest::Approx(0.63));
  CHECK(s.gamma(1) == doctest::Approx(std::sqrt(0.9)));
  CHECK(s.sigma(1) == doctest::Approx(std::sqrt(0.1)));

  const auto big = make_schedule(100, 1e-3, 0.12);
  CHECK(big.beta.front() == doctest::Approx(1e-3));
  CHECK(big.beta.back() == doctest::Approx(0.12));
  const double step = big.beta[1] - big.beta[0];
  for (int t = 2; t < 100; ++t) {
    CHECK(big.beta[t] - big.beta[t - 1] == doctest::Approx(step).epsilon(1e-9));
  }
  for (int t = 1; t <= 100; ++t) {
    CHECK(big.abar(t) < big.abar(t - 1));
    const double g = big.gamma(t), sg = big.sigma(t);
    CHECK(g * g + sg * sg == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("degenerate schedules are rejected") {
  CHECK_THROWS_AS(make_schedule(0, 1e-3, 0.12), piu::DegenerateSchedule);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.12), piu::DegenerateSchedule);
  CHECK_THROWS_AS(make_schedule(10, 1e-3, 1.0), piu::DegenerateSchedule);
  CHECK_THROWS_AS(make_schedule(10, 0.2, 0.1), piu::DegenerateSchedule);
}

TEST_CASE("forward diffusion and x0 recovery are inverses") {
  const auto s = make_schedule(2, 0.1, 0.3);
  const Latent z0{Vec{1.0, 2.0}, 0};
  const Vec eps{0.5, -1.0};
  const auto z2 = forward_diffuse(z0, 2, eps, s);
  CHECK(z2.timestep == 2);
  const double g = std::sqrt(0.63), sg = std::sqrt(0.37);
  CHECK(z2.values[0] == doctest::Approx(g * 1.0 + sg * 0.5).epsilon(1e-14));
  CHECK(z2.values[1] == doctest::Approx(g * 2.0 - sg * 1.0).epsilon(1e-14));

  const auto back = predict_x0(z2, 2, eps, s);
  CHECK(back.timestep == 0);
  CHECK(back.values[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(back.values[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("the final ancestral step is deterministic") {
  const auto s = make_schedule(3, 0.05, 0.2);
  const Latent z1{Vec{0.7, -0.4}, 1};
  const Vec eps_hat{0.2, 0.1};
  const auto z0 = ancestral_step(z1, 1, eps_hat, s, Vec{});
  const double beta = s.beta[0];
  const double alpha = 1.0 - beta;
  const double scale = beta / std::sqrt(1.0 - s.abar(1));
  CHECK(z0.timestep == 0);
  CHECK(z0.values[0] ==
        doctest::Approx((0.7 - scale * 0.2) / std::sqrt(alpha)).epsilon(1e-14));
  CHECK(z0.values[1] ==
        doctest::Approx((-0.4 - scale * 0.1) / std::sqrt(alpha)).epsilon(1e-14));
}

TEST_CASE("interior ancestral steps add the posterior noise scale") {
  const auto s = make_schedule(3, 0.05, 0.2);
  const Latent z2{Vec{0.7, -0.4}, 2};
  const Vec eps_hat{0.2, 0.1};
  const auto quiet = ancestral_step(z2, 2, eps_hat, s, Vec{0.0, 0.0});
  const auto noisy = ancestral_step(z2, 2, eps_hat, s, Vec{1.0, 0.0});
  const double beta = s.beta[1];
  const double post_var = (1.0 - s.abar(1)) / (1.0 - s.abar(2)) * beta;
  CHECK(noisy.values[0] - quiet.values[0] ==
        doctest::Approx(std::sqrt(post_var)).epsilon(1e-12));
  CHECK(noisy.values[1] == quiet.values[1]);
}

TEST_CASE("time embedding follows the sinusoid recipe") {
  const auto e0 = time_embedding(0, 4);
  REQUIRE(e0.size() == 4);
  CHECK(e0[0] == 0.0);
  CHECK(e0[1] == 1.0);
  CHECK(e0[2] == 0.0);
  CHECK(e0[3] == 1.0);

  const auto e5 = time_embedding(5, 4);
  CHECK(e5[0] == doctest::Approx(std::sin(5.0)).epsilon(1e-15));
  CHECK(e5[1] == doctest::Approx(std::cos(5.0)).epsilon(1e-15));
  const double f1 = std::pow(10000.0, -2.0 / 4.0);
  CHECK(e5[2] == doctest::Approx(std::sin(5.0 * f1)).epsilon(1e-15));
  CHECK(e5[3] == doctest::Approx(std::cos(5.0 * f1)).epsilon(1e-15));
}

TEST_CASE("denoiser parameter counts and manifest layout") {
  DenoiserShape dflt;
  auto p = make_denoiser(dflt, 1);
  CHECK(p.theta.size() == 3728);

  DenoiserShape probe;
  probe.n_tok = 2;
  probe.tok_w = 4;
  probe.cond_dim = 4;
  probe.n_blocks = 2;
  probe.ff_dim = 8;
  auto q = make_denoiser(probe, 1);
  CHECK(q.theta.size() == 316);

  CHECK(p.block_tag(0) == "L1");
  CHECK(p.block_tag(3) == "L4");
  const auto& v = p.view("L2.Wk");
  CHECK(v.rows == 32);
  CHECK(v.cols == 8);
  CHECK(p.view("null_cond").cols == 32);
  CHECK_THROWS_AS(p.view("L9.Wk"), std::out_of_range);

  std::size_t covered = 0;
  for (const auto& view : p.manifest) covered += view.count();
  CHECK(covered == p.theta.size());

  // biases start at zero
  const auto& b1 = p.view("L1.ff.b1");
  for (std::size_t i = 0; i < b1.count(); ++i) CHECK(p.data(b1)[i] == 0.0);
  const auto& ob = p.view("out.b");
  for (std::size_t i = 0; i < ob.count(); ++i) CHECK(p.data(ob)[i] == 0.0);
}

TEST_CASE("denoiser init is seed-deterministic") {
  auto a = make_denoiser(tiny_shape(), 7);
  auto b = make_denoiser(tiny_shape(), 7);
  auto c = make_denoiser(tiny_shape(), 8);
  CHECK(a.theta == b.theta);
  CHECK(a.theta != c.theta);
  CHECK(param_checksum(a) == param_checksum(b));
  CHECK(param_checksum(a) != param_checksum(c));
}

TEST_CASE("a hand-built net reduces to a pure condition read-out") {
  // Zero weights except: Wv^T c = (2c, 2c), both attention logits zero so
  // alpha = 1/2 each, identity out projection. The prediction is then
  // (c, c) for every latent and timestep.
  DenoiserShape s;
  s.n_tok = 1;
  s.tok_w = 2;
  s.cond_dim = 1;
  s.n_blocks = 1;
  s.ff_dim = 2;
  auto p = make_denoiser(s, 0);
  std::fill(p.theta.begin(), p.theta.end(), 0.0);
  p.data("L1.Wv")[0] = 2.0;
  p.data("L1.Wv")[1] = 2.0;
  double* ow = p.data("out.W");
  ow[0] = 1.0;
  ow[3] = 1.0;

  const auto sched = make_schedule(4, 0.05, 0.2);
  const Vec c{3.0};
  for (int t = 1; t <= 4; ++t) {
    const Vec eps = denoise_predict(p, Latent{Vec{0.3, -0.9}, t}, t, c);
    CHECK(eps[0] == 3.0);
    CHECK(eps[1] == 3.0);
  }
  // empty condition routes through the (zeroed) null embedding
  const Vec eps0 = denoise_predict(p, Latent{Vec{0.3, -0.9}, 2}, 2, Vec{});
  CHECK(eps0[0] == 0.0);
  CHECK(eps0[1] == 0.0);
}

TEST_CASE("backward matches central differences on every parameter group") {
  auto p = make_denoiser(tiny_shape(), 21);
  const int D = p.shape.latent_dim();
  Rng rng(22);
  const Vec z = rng.normal_vec(D);
  const Vec c = rng.normal_vec(p.shape.cond_dim);
  const Vec g_eps = rng.normal_vec(D);
  const int t = 3;

  Trace tr;
  tr.init(p.shape);
  Vec eps;
  denoise_forward(p, z.data(), t, c.data(), eps, &tr);
  Vec grad(p.theta.size(), 0.0);
  Vec g_z(D, 0.0);
  denoise_backward(p, tr, g_eps, grad, &g_z);

  auto loss = [&]() {
    Vec e;
    denoise_forward(p, z.data(), t, c.data(), e, nullptr);
    return piu::kernels::dot(g_eps.data(), e.data(), D);
  };

  Rng pick(23);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t i = pick.uniform_below(p.theta.size());
    const double fd = testsup::central_diff(loss, p.theta, i);
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5));
  }

  Vec zz = z;
  auto loss_z = [&]() {
    Vec e;
    denoise_forward(p, zz.data(), t, c.data(), e, nullptr);
    return piu::kernels::dot(g_eps.data(), e.data(), D);
  };
  for (std::size_t i = 0; i < zz.size(); ++i) {
    const double fd = testsup::central_diff(loss_z, zz, i);
    CHECK(g_z[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("backward handles the null-condition branch") {
  auto p = make_denoiser(tiny_shape(), 31);
  const int D = p.shape.latent_dim();
  Rng rng(32);
  const Vec z = rng.normal_vec(D);
  const Vec g_eps = rng.normal_vec(D);

  Trace tr;
  tr.init(p.shape);
  Vec eps;
  denoise_forward(p, z.data(), 2, nullptr, eps, &tr);
  CHECK(tr.used_null);
  Vec grad(p.theta.size(), 0.0);
  denoise_backward(p, tr, g_eps, grad);

  auto loss = [&]() {
    Vec e;
    denoise_forward(p, z.data(), 2, nullptr, e, nullptr);
    return piu::kernels::dot(g_eps.data(), e.data(), D);
  };
  const auto& nc = p.view("null_cond");
  for (std::size_t k = 0; k < nc.count(); ++k) {
    const std::size_t i = nc.offset + k;
    const double fd = testsup::central_diff(loss, p.theta, i);
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("checkpoints round-trip bit for bit") {
  auto p = make_denoiser(tiny_shape(), 41);
  const std::string path = "/tmp/piu_test_ckpt.bin";
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path);
  CHECK(q.theta == p.theta);
  CHECK(q.shape.n_tok == p.shape.n_tok);
  CHECK(q.shape.tok_w == p.shape.tok_w);
  CHECK(q.shape.cond_dim == p.shape.cond_dim);
  CHECK(q.shape.n_blocks == p.shape.n_blocks);
  CHECK(q.shape.ff_dim == p.shape.ff_dim);
  REQUIRE(q.manifest.size() == p.manifest.size());
  for (std::size_t i = 0; i < p.manifest.size(); ++i) {
    CHECK(q.manifest[i].name == p.manifest[i].name);
    CHECK(q.manifest[i].offset == p.manifest[i].offset);
  }
  CHECK(param_checksum(q) == param_checksum(p));
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_checkpoint("/tmp/piu_no_such_ckpt.bin"), piu::IoError);
}

TEST_CASE("a corrupted checkpoint magic is rejected") {
  auto p = make_denoiser(tiny_shape(), 42);
  const std::string path = "/tmp/piu_test_ckpt_bad.bin";
  save_checkpoint(p, path);
  {
    std::FILE* f = std::fopen(path.c_str(), "r+b");
    REQUIRE(f != nullptr);
    std::fputc('X', f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_checkpoint(path), piu::IoError);
  std::remove(path.c_str());
}

TEST_CASE("sampling is seed-deterministic and guidance changes the path") {
  auto p = make_denoiser(tiny_shape(), 51);
  const auto sched = make_schedule(10, 1e-3, 0.12);
  Rng rng(52);
  const Vec c = rng.normal_vec(p.shape.cond_dim);
  const auto a = sample(p, c, sched, 1.0, 7);
  const auto b = sample(p, c, sched, 1.0, 7);
  const auto d = sample(p, c, sched, 1.0, 8);
  CHECK(a.values == b.values);
  CHECK(a.values != d.values);
  CHECK(a.timestep == 0);
  for (double x : a.values) CHECK(std::isfinite(x));

  const auto g2 = sample(p, c, sched, 2.0, 7);
  CHECK(g2.values != a.values);
}

TEST_CASE("activation probes expose the conditioning path") {
  auto p = make_denoiser(tiny_shape(), 61);
  Rng rng(62);
  const Vec c = rng.normal_vec(p.shape.cond_dim);
  const Vec kv = kv_activation(p, 0, c);
  REQUIRE(kv.size() == static_cast<std::size_t>(2 * p.shape.tok_w));

  // first half W_k^T c, second half W_v^T c
  const auto& wk = p.view("L1.Wk");
  const auto& wv = p.view("L1.Wv");
  Vec want_k(p.shape.tok_w), want_v(p.shape.tok_w);
  piu::matvec_t(p.data(wk), wk.rows, wk.cols, c.data(), want_k.data());
  piu::matvec_t(p.data(wv), wv.rows, wv.cols, c.data(), want_v.data());
  for (int i = 0; i < p.shape.tok_w; ++i) {
    CHECK(kv[i] == want_k[i]);
    CHECK(kv[p.shape.tok_w + i] == want_v[i]);
  }

  const Vec z = rng.normal_vec(p.shape.latent_dim());
  const auto qs = q_activations(p, z, 3, c);
  REQUIRE(qs.size() == 1);
  CHECK(qs[0].size() ==
        static_cast<std::size_t>(p.shape.n_tok * p.shape.tok_w));
}

TEST_CASE("base_loss gradient matches central differences") {
  auto p = make_denoiser(tiny_shape(), 71);
  const int D = p.shape.latent_dim();
  Rng rng(72);
  std::vector<BaseItem> items;
  for (int i = 0; i < 4; ++i) {
    BaseItem it;
    it.zt = rng.normal_vec(D);
    it.t = 1 + static_cast<int>(rng.uniform_below(9));
    it.cond = (i == 3) ? Vec{} : rng.normal_vec(p.shape.cond_dim);
    it.eps = rng.normal_vec(D);
    items.push_back(std::move(it));
  }

  Vec grad(p.theta.size(), 0.0);
  base_loss(p, items, &grad);
  auto loss = [&]() { return base_loss(p, items, nullptr); };

  Rng pick(73);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t i = pick.uniform_below(p.theta.size());
    const double fd = testsup::central_diff(loss, p.theta, i);
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("training the base model reduces the denoising loss") {
  auto ds = piu::idspace::generate_identities(4, 6, 0.05, 8, 1);
  const auto world = make_axis_world(16, 8, 8);
  const auto sched = make_schedule(10, 1e-3, 0.12);

  TrainConfig short_cfg;
  short_cfg.steps = 5;
  short_cfg.batch = 16;
  short_cfg.lr = 3e-3;
  short_cfg.seed = 5;
  TrainConfig long_cfg = short_cfg;
  long_cfg.steps = 400;

  const auto p_short = train_base(ds, world, sched, short_cfg);
  const auto p_long = train_base(ds, world, sched, long_cfg);

  // fixed probe batch
  Rng rng(6);
  std::vector<BaseItem> probe;
  for (int i = 0; i < 64; ++i) {
    const auto& smp = ds.samples[rng.uniform_below(ds.samples.size())];
    Vec style = rng.normal_vec(8);
    for (auto& x : style) x *= 0.5;
    const Vec z0 = synth_observe(world, smp.values, style);
    const int t = 1 + static_cast<int>(rng.uniform_below(10));
    const Vec eps = rng.normal_vec(16);
    BaseItem it;
    it.zt = forward_diffuse(Latent{z0, 0}, t, eps, sched).values;
    it.t = t;
    it.cond = smp.values;
    it.eps = eps;
    probe.push_back(std::move(it));
  }
  const double loss_short = base_loss(p_short, probe, nullptr);
  const double loss_long = base_loss(p_long, probe, nullptr);
  CHECK(loss_long < 0.8 * loss_short);
}

TEST_CASE("train_base rejects worlds that do not tokenize") {
  auto ds = piu::idspace::generate_identities(3, 4, 0.05, 5, 2);
  const auto world = make_axis_world(10, 5, 5);  // latent 10, not a multiple of 8
  const auto sched = make_schedule(10, 1e-3, 0.12);
  TrainConfig cfg;
  cfg.steps = 1;
  CHECK_THROWS_AS(train_base(ds, world, sched, cfg), piu::ConfigError);
}

TEST_CASE("world projections are orthonormal and recognize inverts observe") {
  const auto w = make_axis_world(16, 8, 8);
  Rng rng(81);
  Vec c = rng.normal_vec(8);
  double cn = 0.0;
  for (double v : c) cn += v * v;
  for (double& v : c) v /= std::sqrt(cn);
  const Vec style = rng.normal_vec(8);
  const Vec x = synth_observe(w, c, style);
  const Vec s = recognize(w, x);
  REQUIRE(s.size() == 8);
  for (int i = 0; i < 8; ++i) CHECK(s[i] == doctest::Approx(c[i]).epsilon(1e-12));

  // pure style content has no identity-axis component
  const Vec style_only = synth_observe(w, Vec(8, 0.0), style);
  CHECK_THROWS_AS(recognize(w, style_only), piu::Unrecognizable);

  const auto wr = make_random_world(16, 8, 4, 3);
  // columns orthonormal: A^T A = I, B^T B = I, A^T B = 0
  for (int a = 0; a < 8; ++a) {
    for (int b = 0; b < 8; ++b) {
      double dot = 0.0;
      for (int r = 0; r < 16; ++r) dot += wr.A.at(r, a) * wr.A.at(r, b);
      CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-10));
    }
    for (int b = 0; b < 4; ++b) {
      double dot = 0.0;
      for (int r = 0; r < 16; ++r) dot += wr.A.at(r, a) * wr.B.at(r, b);
      CHECK(dot == doctest::Approx(0.0).epsilon(1e-10));
    }
  }
  Vec c2 = rng.normal_vec(8);
  double c2n = 0.0;
  for (double v : c2) c2n += v * v;
  for (double& v : c2) v /= std::sqrt(c2n);
  const Vec st2 = rng.normal_vec(4);
  const Vec x2 = synth_observe(wr, c2, st2);
  const Vec s2 = recognize(wr, x2);
  for (int i = 0; i < 8; ++i) {
    CHECK(s2[i] == doctest::Approx(c2[i]).epsilon(1e-10));
  }
}
