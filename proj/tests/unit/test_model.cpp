#include <doctest.h>

#include <cstring>
#include <fstream>

#include "error.hpp"
#include "layers.hpp"
#include "model.hpp"
#include "numerics.hpp"
#include "test_support.hpp"

using namespace medssl;

namespace {

ModelConfig tiny_backbone(bool cls = true, int depth = 2) {
  ModelConfig c;
  c.encoder.patch = {3, 2, 2, 2};
  c.encoder.embed_dim = 8;
  c.encoder.depth = depth;
  c.encoder.heads = 2;
  c.encoder.mlp_ratio = 2.0;
  c.encoder.use_cls_token = cls;
  c.encoder.max_tokens = 16;
  return c;
}

// Scalar probe L = sum(W .* f(x)) for a fixed random W.
struct Probe {
  Matrix weights;
  double operator()(const Matrix& out) const { return (weights.array() * out.array()).sum(); }
};

}  // namespace

TEST_CASE("init is deterministic per seed") {
  const auto cfg = tiny_backbone();
  const auto a = init_model(cfg, 3);
  const auto b = init_model(cfg, 3);
  const auto c = init_model(cfg, 4);
  CHECK(a.params.values() == b.params.values());
  CHECK(a.params.values() != c.params.values());
}

TEST_CASE("init scales and bounds") {
  const auto m = init_model(tiny_backbone(), 1);
  for (const auto& b : m.params.blocks()) {
    const auto v = m.params.matrix(m.params.find(b.name));
    if (b.name.ends_with(".gamma")) CHECK(v.isOnes(0.0));
    else if (b.name.ends_with(".beta") || b.name.ends_with(".bias")) CHECK(v.isZero(0.0));
    else CHECK(v.cwiseAbs().maxCoeff() <= 0.04);
  }
}

TEST_CASE("encoder configuration validation") {
  auto cfg = tiny_backbone();
  cfg.encoder.embed_dim = 16;
  cfg.encoder.heads = 3;
  CHECK_THROWS_AS(init_model(cfg, 0), ConfigError);
  cfg = tiny_backbone();
  cfg.encoder.patch.c_p = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  ModelConfig vit;
  vit.encoder = EncoderConfig::vit_tiny();
  CHECK(vit.encoder.embed_dim == 192);
  CHECK(vit.encoder.depth == 12);
  CHECK(vit.encoder.heads == 3);
  CHECK_NOTHROW(vit.validate());
  CHECK(build_model(vit).parameter_count() > 5000000);
}

TEST_CASE("objective-specific structure") {
  auto cfg = tiny_backbone(false);
  cfg.objective = Objective::MAE;
  const auto mae = init_model(cfg, 0);
  CHECK(mae.decoder.has_value());
  CHECK_FALSE(mae.head.has_value());
  cfg.encoder.use_cls_token = true;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  auto sd = tiny_backbone(true);
  sd.objective = Objective::SimDINO;
  const auto s = init_model(sd, 0);
  CHECK(s.head.has_value());
  CHECK_FALSE(s.decoder.has_value());
  sd.encoder.use_cls_token = false;
  CHECK_THROWS_AS(sd.validate(), ConfigError);
}

TEST_CASE("forward output shape and token overflow") {
  Rng rng(2);
  const auto m = init_model(tiny_backbone(), 5);
  const auto t = patchify(testing::random_tensor({3, 4, 4, 4}, rng), m.config.encoder.patch);
  REQUIRE(t.tokens.rows() == 8);
  const Matrix out = forward(m, t);
  CHECK(out.rows() == 9);
  CHECK(out.cols() == 8);
  CHECK(out.allFinite());
  const auto big = patchify(testing::random_tensor({3, 8, 8, 4}, rng), m.config.encoder.patch);
  CHECK_THROWS_AS(forward(m, big), ShapeError);
}

TEST_CASE("zero-depth encoder is the normalized projection plus positions") {
  Rng rng(3);
  auto m = init_model(tiny_backbone(false, 0), 6);
  // Non-trivial norm parameters so the check covers them.
  auto gamma = m.params.matrix(m.params.find("encoder.norm.gamma"));
  auto beta = m.params.matrix(m.params.find("encoder.norm.beta"));
  for (int i = 0; i < gamma.size(); ++i) {
    gamma(0, i) = rng.uniform(0.5, 1.5);
    beta(0, i) = rng.uniform(-0.5, 0.5);
  }
  const auto t = patchify(testing::random_tensor({3, 4, 4, 4}, rng), m.config.encoder.patch);
  const Matrix out = forward(m, t);
  const auto w = m.params.matrix(m.params.find("encoder.patch_proj.weight"));
  const auto b = m.params.matrix(m.params.find("encoder.patch_proj.bias"));
  const auto pos = m.params.matrix(m.params.find("encoder.pos_embed"));
  for (Eigen::Index i = 0; i < t.tokens.rows(); ++i) {
    const RowVector x = t.tokens.row(i) * w + b.row(0) + pos.row(i);
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    const RowVector expected = ((x.array() - mean) / std::sqrt(var + kLayerNormEps)).matrix().cwiseProduct(gamma.row(0)) + beta.row(0);
    CHECK((out.row(i) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("without positions the encoder is permutation equivariant") {
  Rng rng(4);
  auto m = init_model(tiny_backbone(false), 7);
  m.params.matrix(m.params.find("encoder.pos_embed")).setZero();
  const auto t = patchify(testing::random_tensor({3, 4, 4, 4}, rng), m.config.encoder.patch);
  const Matrix out = forward(m, t);
  const std::vector<int> perm{3, 0, 7, 1, 6, 2, 5, 4};
  Matrix shuffled(t.tokens.rows(), t.tokens.cols());
  for (int i = 0; i < 8; ++i) shuffled.row(i) = t.tokens.row(perm[i]);
  std::vector<int> positions(8);
  for (int i = 0; i < 8; ++i) positions[i] = i;
  const Matrix out2 = encoder_forward(m, shuffled, positions, nullptr);
  for (int i = 0; i < 8; ++i) CHECK((out2.row(i) - out.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pooling strategies") {
  Matrix rows(2, 2);
  rows << 1, 3, 3, 5;
  CHECK(pool(rows, PoolStrategy::Avg, false) == Vector((Vector(2) << 2, 4).finished()));
  Matrix one(1, 3);
  one << 1, 2, 3;
  CHECK(pool(one, PoolStrategy::Avg, false) == one.row(0).transpose());
  Rng rng(5);
  const Matrix reps = testing::random_matrix(5, 16, rng);
  const Vector mix = pool(reps, PoolStrategy::Mix, true);
  CHECK(mix.size() == 32);
  CHECK(mix.head(16) == reps.row(0).transpose());
  CHECK(pool(reps, PoolStrategy::Cls, true) == reps.row(0).transpose());
  CHECK_THROWS_AS(pool(reps, PoolStrategy::Cls, false), ConfigError);
  CHECK_THROWS_AS(pool(reps, PoolStrategy::Mix, false), ConfigError);
  // Avg ignores patch-row order.
  Matrix swapped = reps;
  swapped.row(1).swap(swapped.row(4));
  CHECK((pool(swapped, PoolStrategy::Avg, true) - pool(reps, PoolStrategy::Avg, true)).cwiseAbs().maxCoeff() < 1e-15);
  auto cfg = tiny_backbone(true);
  CHECK(pooled_dim(cfg, PoolStrategy::Mix) == 16);
  cfg.encoder.use_cls_token = false;
  CHECK_THROWS_AS(pooled_dim(cfg, PoolStrategy::Cls), ConfigError);
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(6);
  ParamStore p;
  const auto lin = add_linear(p, "lin", 5, 4);
  const auto ln = add_layernorm(p, "ln", 4);
  AttentionIds attn;
  attn.qkv = add_linear(p, "qkv", 4, 12);
  attn.proj = add_linear(p, "proj", 4, 4);
  attn.heads = 2;
  for (auto& v : p.values()) v = rng.uniform(-0.5, 0.5);
  for (int i = 0; i < 4; ++i) p.matrix(ln.gamma)(0, i) += 1.0;
  const Matrix x = testing::random_matrix(3, 5, rng);
  const Probe probe{testing::random_matrix(3, 4, rng)};

  // L = probe(attention(gelu(layernorm(linear(x))))) covers four operators.
  auto loss = [&](const ParamStore& ps, const Matrix& in, Gradients* g, Matrix* dx) {
    const Matrix a = linear_forward(ps, lin, in);
    LayerNormCache lc;
    const Matrix b = layernorm_forward(ps, ln, a, &lc);
    const Matrix c = gelu(b);
    AttentionCache ac;
    const Matrix d = attention_forward(ps, attn, c, &ac);
    if (g) {
      Matrix dd = probe.weights;
      Matrix dc = attention_backward(ps, attn, ac, dd, *g);
      Matrix db = gelu_backward(b, dc);
      Matrix da = layernorm_backward(ps, ln, lc, db, *g);
      Matrix din = linear_backward(ps, lin, in, da, *g);
      if (dx) *dx = din;
    }
    return probe(d);
  };
  Gradients g(p);
  Matrix dx;
  loss(p, x, &g, &dx);
  std::vector<double> params = p.values();
  auto f = [&](std::span<const double> v) {
    ParamStore copy = p;
    std::copy(v.begin(), v.end(), copy.values().begin());
    return loss(copy, x, nullptr, nullptr);
  };
  CHECK(grad_check(f, params, g.values()) <= 1e-7);

  std::vector<double> xs(x.data(), x.data() + x.size());
  auto fx = [&](std::span<const double> v) {
    Matrix xi = Eigen::Map<const Matrix>(v.data(), 3, 5);
    return loss(p, xi, nullptr, nullptr);
  };
  CHECK(grad_check(fx, xs, std::span<const double>(dx.data(), static_cast<std::size_t>(dx.size()))) <= 1e-7);
}

TEST_CASE("encoder gradient reaches every parameter block and matches finite differences") {
  Rng rng(7);
  auto m = init_model(tiny_backbone(true), 8);
  for (auto& v : m.params.values()) v += rng.uniform(-0.1, 0.1);
  const auto t = patchify(testing::random_tensor({3, 4, 4, 4}, rng), m.config.encoder.patch);
  std::vector<int> positions(8);
  for (int i = 0; i < 8; ++i) positions[i] = i;
  const Probe probe{testing::random_matrix(9, 8, rng)};
  EncoderCache cache;
  encoder_forward(m, t.tokens, positions, &cache);
  Gradients g(m.params);
  encoder_backward(m, cache, probe.weights, g);
  for (const auto& b : m.params.blocks()) {
    bool any = false;
    for (std::size_t i = 0; i < b.size; ++i) any = any || g.values()[b.offset + i] != 0.0;
    CHECK_MESSAGE(any, b.name);
  }
  std::vector<double> params = m.params.values();
  auto f = [&](std::span<const double> v) {
    Model copy = m;
    std::copy(v.begin(), v.end(), copy.params.values().begin());
    return probe(encoder_forward(copy, t.tokens, positions, nullptr));
  };
  CHECK(grad_check(f, params, g.values()) <= 1e-6);
}

TEST_CASE("checkpoint round trip is bit exact") {
  testing::TempDir dir("ckpt");
  auto cfg = tiny_backbone(true);
  cfg.objective = Objective::SimDINO;
  const auto m = init_model(cfg, 9);
  save_checkpoint(dir / "m.ckpt", m);
  const auto back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.config == m.config);
  CHECK(back.params.values() == m.params.values());
  CHECK(back.params.same_layout(m.params));
  save_checkpoint(dir / "m2.ckpt", back);
  std::ifstream a(dir / "m.ckpt", std::ios::binary), b(dir / "m2.ckpt", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  CHECK(config_from_json(config_to_json(cfg)) == cfg);
}

TEST_CASE("corrupt checkpoints are rejected") {
  testing::TempDir dir("ckpt-bad");
  {
    std::ofstream out(dir / "junk.ckpt", std::ios::binary);
    out << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), IoError);
  const auto m = init_model(tiny_backbone(), 1);
  save_checkpoint(dir / "m.ckpt", m);
  std::filesystem::resize_file(dir / "m.ckpt", std::filesystem::file_size(dir / "m.ckpt") - 8);
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt"), IoError);
}
