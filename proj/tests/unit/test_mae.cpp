#include <doctest.h>

#include <cmath>

#include "error.hpp"
#include "mae.hpp"
#include "numerics.hpp"
#include "optim.hpp"
#include "test_support.hpp"

using namespace medssl;

namespace {

ModelConfig tiny_mae() {
  ModelConfig c;
  c.objective = Objective::MAE;
  c.encoder.patch = {3, 2, 2, 2};
  c.encoder.embed_dim = 8;
  c.encoder.depth = 1;
  c.encoder.heads = 2;
  c.encoder.mlp_ratio = 2.0;
  c.encoder.use_cls_token = false;
  c.encoder.max_tokens = 8;
  c.decoder.depth = 1;
  c.decoder.heads = 2;
  c.decoder.mlp_ratio = 2.0;
  return c;
}

std::vector<TokenSequence> tiny_batch(int n, Rng& rng, const PatchConfig& p) {
  std::vector<TokenSequence> b;
  for (int i = 0; i < n; ++i) b.push_back(patchify(testing::random_tensor({3, 4, 4, 4}, rng), p));
  return b;
}

}  // namespace

TEST_CASE("mask counts use round half up") {
  CHECK(mask_count(256, 0.75) == 192);
  CHECK(mask_count(4, 0.5) == 2);
  // Exact rational oracle: round(p/q * n) half-up = floor((2pn + q) / 2q).
  for (int q : {2, 3, 4, 5, 8, 10})
    for (int p = 1; p < q; ++p)
      for (int n = 2; n <= 64; ++n) {
        const int expected = (2 * p * n + q) / (2 * q);
        if (expected <= 0 || expected >= n) {
          CHECK_THROWS_AS(mask_count(n, static_cast<double>(p) / q), ConfigError);
        } else {
          CHECK(mask_count(n, static_cast<double>(p) / q) == expected);
        }
      }
  CHECK_THROWS_AS(mask_count(1, 0.5), ConfigError);
  CHECK_THROWS_AS(mask_count(10, 0.0), ConfigError);
  CHECK_THROWS_AS(mask_count(10, 1.0), ConfigError);
}

TEST_CASE("sampled masks partition the token range") {
  Rng rng(1);
  const auto m = sample_mask(256, MaskConfig{0.75}, rng);
  CHECK(m.masked.size() == 192);
  CHECK(m.visible.size() == 64);
  std::vector<int> seen(256, 0);
  for (int i : m.masked) ++seen[i];
  for (int i : m.visible) ++seen[i];
  for (int s : seen) CHECK(s == 1);
  CHECK(std::is_sorted(m.masked.begin(), m.masked.end()));
}

TEST_CASE("each index is masked with frequency close to the ratio") {
  Rng rng(2);
  std::vector<int> hits(16, 0);
  const int draws = 10000;
  for (int t = 0; t < draws; ++t)
    for (int i : sample_mask(16, MaskConfig{0.5}, rng).masked) ++hits[i];
  for (int h : hits) CHECK(std::abs(static_cast<double>(h) / draws - 0.5) <= 0.02);
}

TEST_CASE("reconstruction loss values") {
  Matrix a(1, 4), b(1, 4);
  a << 1, 2, 3, 4;
  b << 0, 1, 2, 3;
  CHECK(mae_loss(a, a) == 0.0);
  CHECK(mae_loss(a, b) == 4.0);
  Rng rng(3);
  const Matrix r = testing::random_matrix(5, 7, rng), t = testing::random_matrix(5, 7, rng);
  double naive = 0.0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 7; ++j) naive += (r(i, j) - t(i, j)) * (r(i, j) - t(i, j));
  CHECK(mae_loss(r, t) == doctest::Approx(naive / 5).epsilon(1e-14));
  CHECK_THROWS_AS(mae_loss(r, Matrix(4, 7)), ShapeError);
}

TEST_CASE("reconstruction loss is invariant to a shared row permutation") {
  Rng rng(4);
  const Matrix r = testing::random_matrix(4, 3, rng), t = testing::random_matrix(4, 3, rng);
  Matrix rp = r, tp = t;
  rp.row(0).swap(rp.row(3));
  tp.row(0).swap(tp.row(3));
  CHECK(mae_loss(rp, tp) == doctest::Approx(mae_loss(r, t)).epsilon(1e-15));
}

TEST_CASE("forward computes the loss on masked rows only") {
  Rng rng(5);
  const auto m = init_model(tiny_mae(), 1);
  const auto t = patchify(testing::random_tensor({3, 4, 4, 4}, rng), m.config.encoder.patch);
  MaskIndices mask{{5}, {0, 1, 2, 3, 4, 6, 7}};
  MaeCache cache;
  const auto out = mae_forward(m, t, mask, &cache);
  CHECK(out.recon.rows() == 1);
  CHECK(out.recon.cols() == t.tokens.cols());
  CHECK(cache.target == t.tokens.row(5));
  CHECK(std::isfinite(out.loss));
  CHECK(out.loss > 0.0);
  CHECK(out.loss == doctest::Approx(mae_loss(out.recon, t.tokens.row(5))).epsilon(1e-15));
}

TEST_CASE("forward rejects inconsistent masks and models without a decoder") {
  Rng rng(6);
  const auto m = init_model(tiny_mae(), 1);
  const auto t = patchify(testing::random_tensor({3, 4, 4, 4}, rng), m.config.encoder.patch);
  CHECK_THROWS_AS(mae_forward(m, t, MaskIndices{{0}, {1, 2}}), ShapeError);
  auto backbone = tiny_mae();
  backbone.objective = Objective::Backbone;
  CHECK_THROWS_AS(mae_forward(init_model(backbone, 0), t, MaskIndices{{0}, {1, 2, 3, 4, 5, 6, 7}}), ConfigError);
}

TEST_CASE("objective gradient matches finite differences") {
  Rng rng(7);
  auto m = init_model(tiny_mae(), 2);
  for (auto& v : m.params.values()) v += rng.uniform(-0.05, 0.05);
  const auto batch = tiny_batch(2, rng, m.config.encoder.patch);
  std::vector<MaskIndices> masks;
  for (int i = 0; i < 2; ++i) masks.push_back(sample_mask(8, MaskConfig{0.5}, rng));
  Gradients g(m.params);
  mae_batch_objective(m, batch, masks, &g);
  std::vector<double> params = m.params.values();
  auto f = [&](std::span<const double> v) {
    Model copy = m;
    std::copy(v.begin(), v.end(), copy.params.values().begin());
    return mae_batch_objective(copy, batch, masks, nullptr);
  };
  CHECK(grad_check(f, params, g.values()) <= 1e-6);
}

TEST_CASE("learning-rate schedule") {
  CHECK(lr_schedule(10, 300, 10, 1e-3) == 1e-3);
  CHECK(lr_schedule(300, 300, 10, 1e-3) == doctest::Approx(0.0));
  CHECK(lr_schedule(155, 300, 10, 1e-3) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(lr_schedule(0, 300, 10, 1e-3) == 0.0);
  CHECK(lr_schedule(5, 300, 10, 1e-3) == doctest::Approx(5e-4));
  CHECK_THROWS_AS(lr_schedule(0, 10, 10, 1e-3), ConfigError);
  CHECK_THROWS_AS(lr_schedule(11, 10, 2, 1e-3), ConfigError);
  const auto s = LrSchedule::with_warmup_fraction(300, 1e-3);
  CHECK(s.warmup_steps == 10);
}

TEST_CASE("train step: zero learning rate at step 0 leaves parameters unchanged") {
  Rng rng(8), mask_rng(9);
  auto m = init_model(tiny_mae(), 3);
  const auto before = m.params.values();
  const auto batch = tiny_batch(2, rng, m.config.encoder.patch);
  OptimizerState opt;
  const auto sched = LrSchedule::with_warmup_fraction(30, 1e-3, 0.1);
  const auto st = mae_train_step(m, batch, opt, AdamWConfig{}, sched, 0, MaskConfig{0.5}, mask_rng);
  CHECK(st.lr == 0.0);
  CHECK(st.masked == 4);
  CHECK(st.tokens == 8);
  CHECK(m.params.values() == before);
}

TEST_CASE("train step replay is deterministic and descends on a fixed batch") {
  Rng data(10);
  const auto cfg = tiny_mae();
  const auto batch = tiny_batch(4, data, cfg.encoder.patch);
  std::vector<MaskIndices> eval_masks;
  for (int i = 0; i < 4; ++i) eval_masks.push_back(sample_mask(8, MaskConfig{0.5}, data));

  auto run = [&](int steps) {
    auto m = init_model(cfg, 4);
    OptimizerState opt;
    Rng rng(11);
    const auto sched = LrSchedule::with_warmup_fraction(steps, 1e-2, 0.1);
    for (int s = 0; s < steps; ++s) mae_train_step(m, batch, opt, AdamWConfig{}, sched, s, MaskConfig{0.5}, rng);
    return m;
  };
  const auto a = run(50);
  const auto b = run(50);
  CHECK(a.params.values() == b.params.values());
  const double initial = mae_batch_objective(init_model(cfg, 4), batch, eval_masks, nullptr);
  const double trained = mae_batch_objective(a, batch, eval_masks, nullptr);
  CHECK(trained <= 0.8 * initial);
}

TEST_CASE("AdamW decays weights only and follows the bias-corrected update") {
  ParamStore p;
  const int w = p.add("x.weight", {1, 2});
  const int b = p.add("x.bias", {2});
  p.values() = {1.0, -2.0, 0.5, 0.5};
  Gradients g(p);
  g.values() = {0.1, -0.3, 0.0, 0.2};
  OptimizerState st;
  AdamWConfig cfg;
  adamw_step(p, g, st, 0.01, cfg);
  // First step: mhat = g, vhat = g^2, so the step is lr * sign(g) (eps aside).
  CHECK(p.matrix(w)(0, 0) == doctest::Approx(1.0 - 0.01 * 0.05 - 0.01).epsilon(1e-9));
  CHECK(p.matrix(w)(0, 1) == doctest::Approx(-2.0 + 0.01 * 0.05 * 2.0 + 0.01).epsilon(1e-9));
  CHECK(p.matrix(b)(0, 0) == 0.5);
  CHECK(p.matrix(b)(0, 1) == doctest::Approx(0.5 - 0.01).epsilon(1e-9));
}
